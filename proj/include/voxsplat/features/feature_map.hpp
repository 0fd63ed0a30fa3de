#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxsplat/core/binary_io.hpp"
#include "voxsplat/core/error.hpp"
#include "voxsplat/core/image.hpp"

namespace voxsplat::features {

/// Per-view 2D feature grid (Hf x Wf x D, row-major) extracted from an
/// H x W source image.
struct FeatureMap {
  std::uint32_t view_id = 0;
  std::size_t feature_height = 0;
  std::size_t feature_width = 0;
  std::size_t dim = 0;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::vector<double> values;

  double at(std::size_t row, std::size_t col, std::size_t d) const {
    return values[(row * feature_width + col) * dim + d];
  }
};

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

// GDFV: "GDFV", u32 version, u32 view_id, u32 Hf, u32 Wf, u32 D, u32 H, u32 W,
// then f32 LE payload (Hf, Wf, D).
inline std::vector<std::uint8_t> encode_feature_map(const FeatureMap& fm) {
  if (fm.values.size() != fm.feature_height * fm.feature_width * fm.dim) {
    throw ShapeError("feature map payload does not match its header dimensions");
  }
  std::vector<std::uint8_t> out;
  io::put_bytes(out, "GDFV");
  io::put_u32(out, kFeatureFormatVersion);
  for (auto v : {static_cast<std::size_t>(fm.view_id), fm.feature_height, fm.feature_width, fm.dim, fm.image_height,
                 fm.image_width}) {
    io::put_u32(out, static_cast<std::uint32_t>(v));
  }
  for (double v : fm.values) io::put_f32(out, static_cast<float>(v));
  return out;
}

inline FeatureMap decode_feature_map(std::vector<std::uint8_t> bytes, const std::string& source) {
  io::Reader r(std::move(bytes), source);
  if (r.bytes(4) != "GDFV") throw FormatError(source + ": bad feature magic");
  if (const auto version = r.u32(); version != kFeatureFormatVersion) {
    throw FormatError(source + ": unsupported feature version " + std::to_string(version));
  }
  FeatureMap fm;
  fm.view_id = r.u32();
  fm.feature_height = r.u32();
  fm.feature_width = r.u32();
  fm.dim = r.u32();
  fm.image_height = r.u32();
  fm.image_width = r.u32();
  const std::size_t n = fm.feature_height * fm.feature_width * fm.dim;
  if (r.remaining() != n * 4) {
    throw FormatError(source + ": payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                      std::to_string(n * 4));
  }
  fm.values.resize(n);
  for (auto& v : fm.values) v = static_cast<double>(r.f32());
  return fm;
}

inline void save_feature_map(const std::string& path, const FeatureMap& fm) { io::write_file(path, encode_feature_map(fm)); }

inline FeatureMap load_feature_map(const std::string& path) { return decode_feature_map(io::read_file(path), path); }

/// A depth map stored as a single-channel feature map at full resolution.
inline FeatureMap depth_as_feature_map(const Map2D& depth, std::uint32_t view_id) {
  FeatureMap fm;
  fm.view_id = view_id;
  fm.feature_height = fm.image_height = depth.height;
  fm.feature_width = fm.image_width = depth.width;
  fm.dim = 1;
  fm.values = depth.data;
  return fm;
}

inline Map2D feature_map_as_depth(const FeatureMap& fm) {
  if (fm.dim != 1) throw ShapeError("depth map must have D = 1");
  Map2D m(fm.feature_width, fm.feature_height, 1);
  m.data = fm.values;
  return m;
}

}  // namespace voxsplat::features
