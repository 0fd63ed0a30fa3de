#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "voxsplat/core/binary_io.hpp"
#include "voxsplat/decoder/gaussians.hpp"

namespace voxsplat::decoder {

// Zeroth-order spherical-harmonic constant used by splat viewers for f_dc.
inline constexpr double kShC0 = 0.28209479177387814;

inline const std::vector<std::string>& ply_properties() {
  static const std::vector<std::string> names{"x",       "y",       "z",       "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                                              "scale_0", "scale_1", "scale_2", "rot_0",  "rot_1",  "rot_2",  "rot_3"};
  return names;
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Binary little-endian splat PLY: opacity as logit, scales as log, colors
/// as DC coefficients, rotation as (w, x, y, z). Order is the set's order.
inline void export_ply(const GaussianSet& set, const std::string& path) {
  if (set.empty()) throw InvalidArgument("export_ply: empty Gaussian set");
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\nelement vertex " << set.size() << "\n";
  for (const auto& name : ply_properties()) header << "property float " << name << "\n";
  header << "end_header\n";
  std::vector<std::uint8_t> bytes;
  io::put_bytes(bytes, header.str());
  bytes.reserve(bytes.size() + set.size() * ply_properties().size() * 4);
  for (const auto& g : set.gaussians) {
    const double values[] = {g.center.x(),
                             g.center.y(),
                             g.center.z(),
                             (g.color.x() - 0.5) / kShC0,
                             (g.color.y() - 0.5) / kShC0,
                             (g.color.z() - 0.5) / kShC0,
                             logit(g.opacity),
                             std::log(g.scale.x()),
                             std::log(g.scale.y()),
                             std::log(g.scale.z()),
                             g.rotation[0],
                             g.rotation[1],
                             g.rotation[2],
                             g.rotation[3]};
    for (double v : values) io::put_f32(bytes, static_cast<float>(v));
  }
  try {
    io::write_file(path, bytes);
  } catch (const IoError& e) {
    throw IoError(std::string("export_ply: ") + e.what());
  }
}

/// Reads a splat PLY written by export_ply or any binary-LE float PLY that
/// carries the same named properties (extra float properties are skipped).
/// Provenance is assigned from element order: voxel = i / 32, slot = i % 32.
inline GaussianSet import_ply(const std::string& path) {
  const auto bytes = io::read_file(path);
  const std::string marker = "end_header\n";
  const std::string text(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(bytes.size(), 65536)));
  const auto end = text.find(marker);
  if (text.rfind("ply\n", 0) != 0 || end == std::string::npos) throw FormatError(path + ": not a PLY file");
  std::istringstream hs(text.substr(0, end));
  std::string line;
  std::size_t count = 0;
  std::vector<std::string> props;
  bool in_vertex = false;
  while (std::getline(hs, line)) {
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw FormatError(path + ": only binary_little_endian PLY is supported");
    } else if (kw == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex) ls >> count;
    } else if (kw == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      if (type != "float") throw FormatError(path + ": property " + name + " is not float");
      props.push_back(name);
    }
  }
  std::vector<int> slot_of(ply_properties().size(), -1);
  for (std::size_t k = 0; k < ply_properties().size(); ++k)
    for (std::size_t p = 0; p < props.size(); ++p)
      if (props[p] == ply_properties()[k]) slot_of[k] = static_cast<int>(p);
  for (std::size_t k = 0; k < slot_of.size(); ++k)
    if (slot_of[k] < 0) throw FormatError(path + ": missing property " + ply_properties()[k]);

  io::Reader r(std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(end + marker.size()), bytes.end()), path);
  GaussianSet set;
  set.gaussians.resize(count);
  std::vector<double> row(props.size());
  for (std::size_t i = 0; i < count; ++i) {
    for (auto& v : row) v = static_cast<double>(r.f32());
    auto f = [&](std::size_t k) { return row[static_cast<std::size_t>(slot_of[k])]; };
    auto& g = set.gaussians[i];
    g.center = Vec3(f(0), f(1), f(2));
    g.color = Vec3(f(3), f(4), f(5)) * kShC0 + Vec3::Constant(0.5);
    g.opacity = 1.0 / (1.0 + std::exp(-f(6)));
    g.scale = Vec3(std::exp(f(7)), std::exp(f(8)), std::exp(f(9)));
    g.rotation = Quat(f(10), f(11), f(12), f(13));
    g.voxel = static_cast<std::uint32_t>(i / kGaussiansPerVoxel);
    g.slot = static_cast<std::uint32_t>(i % kGaussiansPerVoxel);
    g.linear_index = g.voxel;
  }
  return set;
}

}  // namespace voxsplat::decoder
