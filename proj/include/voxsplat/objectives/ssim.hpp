#pragma once

#include <cmath>
#include <vector>

#include "voxsplat/autodiff/ops.hpp"
#include "voxsplat/core/image.hpp"

namespace voxsplat::objectives {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = 0.5 * (size - 1);
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    k[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    total += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= total;
  return k;
}

/// Separable zero-padded "same" filtering of one channel of an interleaved
/// H x W x C buffer. The kernel is symmetric, so this operator is self-adjoint.
inline void blur(const std::vector<double>& src, std::vector<double>& dst, std::size_t H, std::size_t W,
                 std::size_t C, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(src.size(), 0.0);
  dst.assign(src.size(), 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int t = -r; t <= r; ++t) {
          const long xx = static_cast<long>(x) + t;
          if (xx < 0 || xx >= static_cast<long>(W)) continue;
          acc += k[static_cast<std::size_t>(t + r)] * src[(y * W + static_cast<std::size_t>(xx)) * C + c];
        }
        tmp[(y * W + x) * C + c] = acc;
      }
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int t = -r; t <= r; ++t) {
          const long yy = static_cast<long>(y) + t;
          if (yy < 0 || yy >= static_cast<long>(H)) continue;
          acc += k[static_cast<std::size_t>(t + r)] * tmp[(static_cast<std::size_t>(yy) * W + x) * C + c];
        }
        dst[(y * W + x) * C + c] = acc;
      }
}

struct SsimStats {
  std::vector<double> mx, my, exx, eyy, exy, map;
};

inline SsimStats ssim_stats(const std::vector<double>& x, const std::vector<double>& y, std::size_t H, std::size_t W,
                            std::size_t C, const SsimParams& p) {
  const auto k = gaussian_kernel(p.window, p.sigma);
  SsimStats s;
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  blur(x, s.mx, H, W, C, k);
  blur(y, s.my, H, W, C, k);
  blur(xx, s.exx, H, W, C, k);
  blur(yy, s.eyy, H, W, C, k);
  blur(xy, s.exy, H, W, C, k);
  s.map.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a1 = 2.0 * s.mx[i] * s.my[i] + p.c1;
    const double a2 = 2.0 * (s.exy[i] - s.mx[i] * s.my[i]) + p.c2;
    const double b1 = s.mx[i] * s.mx[i] + s.my[i] * s.my[i] + p.c1;
    const double b2 = (s.exx[i] - s.mx[i] * s.mx[i]) + (s.eyy[i] - s.my[i] * s.my[i]) + p.c2;
    s.map[i] = a1 * a2 / (b1 * b2);
  }
  return s;
}

}  // namespace detail

/// Mean SSIM over all pixels and channels of two [H, W, C] tensors.
inline ad::Tensor ssim(ad::Tape& tape, const ad::Tensor& x, const ad::Tensor& y, const SsimParams& p = {}) {
  if (x.shape() != y.shape() || x.rank() != 3) {
    throw ShapeError("ssim: expected equal [H, W, C] shapes, got " + ad::shape_str(x.shape()) + " and " +
                     ad::shape_str(y.shape()));
  }
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  auto st = std::make_shared<detail::SsimStats>(detail::ssim_stats(x.values(), y.values(), H, W, C, p));
  double total = 0.0;
  for (double v : st->map) total += v;
  ad::Tensor out = ad::Tensor::scalar(total / static_cast<double>(st->map.size()));
  if (!ad::Tape::any_requires_grad({&x, &y})) return out;
  tape.record({x, y}, out, [x, y, out, st, H, W, C, p]() {
    const double g = out.grad()[0] / static_cast<double>(st->map.size());
    const std::size_t n = st->map.size();
    // dS/d(mu_x), dS/d(E[x^2]), dS/d(E[xy]) and the mirrored terms for y.
    std::vector<double> gmx(n), gmy(n), gexx(n), geyy(n), gexy(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double mx = st->mx[i], my = st->my[i], S = st->map[i];
      const double a1 = 2.0 * mx * my + p.c1;
      const double a2 = 2.0 * (st->exy[i] - mx * my) + p.c2;
      const double b1 = mx * mx + my * my + p.c1;
      const double b2 = (st->exx[i] - mx * mx) + (st->eyy[i] - my * my) + p.c2;
      gmx[i] = g * S * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2);
      gmy[i] = g * S * (2.0 * mx / a1 - 2.0 * mx / a2 - 2.0 * my / b1 + 2.0 * my / b2);
      gexx[i] = -g * S / b2;
      geyy[i] = -g * S / b2;
      gexy[i] = g * S * 2.0 / a2;
    }
    const auto k = detail::gaussian_kernel(p.window, p.sigma);
    std::vector<double> bmx, bmy, bexx, beyy, bexy;
    detail::blur(gmx, bmx, H, W, C, k);
    detail::blur(gmy, bmy, H, W, C, k);
    detail::blur(gexx, bexx, H, W, C, k);
    detail::blur(geyy, beyy, H, W, C, k);
    detail::blur(gexy, bexy, H, W, C, k);
    const auto xv = x.data();
    const auto yv = y.data();
    if (x.requires_grad()) {
      auto gx = x.grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += bmx[i] + 2.0 * xv[i] * bexx[i] + yv[i] * bexy[i];
    }
    if (y.requires_grad()) {
      auto gy = y.grad();
      for (std::size_t i = 0; i < n; ++i) gy[i] += bmy[i] + 2.0 * yv[i] * beyy[i] + xv[i] * bexy[i];
    }
  });
  return out;
}

inline double ssim(const Image& a, const Image& b, const SsimParams& p = {}) {
  if (!a.same_shape(b)) throw ShapeError("ssim: image shapes differ");
  const auto st = detail::ssim_stats(a.data, b.data, a.height, a.width, a.channels, p);
  double total = 0.0;
  for (double v : st.map) total += v;
  return total / static_cast<double>(st.map.size());
}

}  // namespace voxsplat::objectives
