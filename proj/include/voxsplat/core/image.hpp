#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "voxsplat/core/binary_io.hpp"
#include "voxsplat/core/error.hpp"

namespace voxsplat {

/// Row-major H x W x C image of doubles. Color images use C = 3 in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0)
      : width(w), height(h), channels(c), data(w * h * c, fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t c = 0) { return data[(y * width + x) * channels + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c = 0) const { return data[(y * width + x) * channels + c]; }
  std::size_t pixels() const { return width * height; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
};

/// Single-channel map (depth, masks). Same layout as Image with C = 1.
using Map2D = Image;

inline std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

/// Writes a binary P6 file. Single-channel images are replicated to RGB.
inline void write_ppm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ShapeError("write_ppm: expected 1 or 3 channels");
  std::vector<std::uint8_t> bytes;
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  io::put_bytes(bytes, header);
  bytes.reserve(bytes.size() + img.pixels() * 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        bytes.push_back(to_byte(img.at(x, y, img.channels == 1 ? 0 : c)));
      }
    }
  }
  io::write_file(path, bytes);
}

inline Image read_ppm(const std::string& path) {
  const auto bytes = io::read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    std::string t;
    while (pos < bytes.size()) {
      const char ch = static_cast<char>(bytes[pos]);
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos;
      } else {
        break;
      }
    }
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P6") throw FormatError(path + ": not a P6 PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw FormatError(path + ": malformed PPM header");
  }
  if (maxval != 255 || w == 0 || h == 0) throw FormatError(path + ": only 8-bit non-empty PPM supported");
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos + w * h * 3) throw FormatError(path + ": truncated pixel data");
  Image img(w, h, 3);
  for (std::size_t i = 0; i < w * h * 3; ++i) img.data[i] = bytes[pos + i] / 255.0;
  return img;
}

/// Box-downsamples by an integer factor.
inline Image box_downsample(const Image& src, std::size_t factor) {
  if (factor == 0 || src.width % factor != 0 || src.height % factor != 0) {
    throw ShapeError("box_downsample: factor must divide image size");
  }
  Image dst(src.width / factor, src.height / factor, src.channels);
  const double norm = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t y = 0; y < dst.height; ++y)
    for (std::size_t x = 0; x < dst.width; ++x)
      for (std::size_t c = 0; c < src.channels; ++c) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx) s += src.at(x * factor + dx, y * factor + dy, c);
        dst.at(x, y, c) = s * norm;
      }
  return dst;
}

}  // namespace voxsplat
