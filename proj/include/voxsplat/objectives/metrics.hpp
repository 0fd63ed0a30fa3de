#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "voxsplat/core/image.hpp"
#include "voxsplat/objectives/ssim.hpp"

namespace voxsplat::objectives {

inline constexpr double kPsnrCap = 99.0;

inline double psnr_from_mse(double mse) { return mse < 1e-10 ? kPsnrCap : 10.0 * std::log10(1.0 / mse); }

inline double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("psnr: image shapes differ");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) mse += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return psnr_from_mse(mse / static_cast<double>(a.data.size()));
}

/// PSNR between rendered and reference depth over pixels with reference depth,
/// both mapped to [0, 1] by the reference's valid range. 0 when nothing is valid.
inline double depth_psnr(const Map2D& rendered, const Map2D& reference) {
  if (!rendered.same_shape(reference)) throw ShapeError("depth_psnr: map shapes differ");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t n = 0;
  for (double d : reference.data) {
    if (d <= 0.0) continue;
    lo = std::min(lo, d);
    hi = std::max(hi, d);
    ++n;
  }
  if (n == 0) return 0.0;
  const double range = hi > lo ? hi - lo : 1.0;
  double mse = 0.0;
  for (std::size_t i = 0; i < reference.data.size(); ++i) {
    if (reference.data[i] <= 0.0) continue;
    const double e = (rendered.data[i] - reference.data[i]) / range;
    mse += e * e;
  }
  return psnr_from_mse(mse / static_cast<double>(n));
}

/// Variance of the 4-neighbor Laplacian of the luma image (interior pixels).
inline double laplacian_sharpness(const Image& img) {
  if (img.width < 3 || img.height < 3) return 0.0;
  const auto luma = [&](std::size_t x, std::size_t y) {
    if (img.channels == 1) return img.at(x, y);
    return 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
  };
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 1; y + 1 < img.height; ++y)
    for (std::size_t x = 1; x + 1 < img.width; ++x) {
      const double l = luma(x - 1, y) + luma(x + 1, y) + luma(x, y - 1) + luma(x, y + 1) - 4.0 * luma(x, y);
      sum += l;
      sum2 += l * l;
      ++n;
    }
  const double mean = sum / static_cast<double>(n);
  return std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
}

struct ImageMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double depth_psnr = 0.0;
};

inline ImageMetrics metrics(const Image& rendered, const Image& reference, const Map2D& depth, const Map2D& reference_depth) {
  return {psnr(rendered, reference), ssim(rendered, reference), depth_psnr(depth, reference_depth)};
}

}  // namespace voxsplat::objectives
