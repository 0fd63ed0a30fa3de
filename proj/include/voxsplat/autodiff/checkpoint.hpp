#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "voxsplat/autodiff/tensor.hpp"
#include "voxsplat/core/binary_io.hpp"

namespace voxsplat::ad {

// GDCK layout: "GDCK", u32 version, u32 count, then per tensor
// u32 name_len, name bytes, u32 rank, u64 dims[rank], f64 payload (all LE).
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named tensors in name order (the serialized order).
using NamedTensors = std::map<std::string, Tensor>;

inline std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors) {
  std::vector<std::uint8_t> out;
  io::put_bytes(out, "GDCK");
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    io::put_u32(out, static_cast<std::uint32_t>(name.size()));
    io::put_bytes(out, name);
    io::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) io::put_u64(out, d);
    for (double v : t.data()) io::put_f64(out, v);
  }
  return out;
}

inline NamedTensors decode_checkpoint(std::vector<std::uint8_t> bytes, const std::string& source) {
  io::Reader r(std::move(bytes), source);
  if (r.bytes(4) != "GDCK") throw FormatError(source + ": bad checkpoint magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = r.u32();
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u32();
    std::string name = r.bytes(len);
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const std::size_t n = numel_of(shape);
    if (n > r.remaining() / 8) throw FormatError(source + ": tensor '" + name + "' exceeds file size");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    out.emplace(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  const std::string tmp = path + ".tmp";
  io::write_file(tmp, encode_checkpoint(tensors));
  std::filesystem::rename(tmp, path);
}

inline NamedTensors load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path), path); }

}  // namespace voxsplat::ad
