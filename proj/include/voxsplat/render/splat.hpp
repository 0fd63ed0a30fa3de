#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "voxsplat/autodiff/ops.hpp"
#include "voxsplat/core/image.hpp"
#include "voxsplat/decoder/gaussians.hpp"
#include "voxsplat/geometry/camera.hpp"

namespace voxsplat::render {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat2 = Eigen::Matrix2d;

struct RenderSettings {
  Vec3 background = Vec3::Ones();
  double covariance_floor = 0.3;  // px^2 added to the 2D covariance diagonal
  double max_weight = 0.999;
  double cull_sigma = 3.0;
  double near_plane = 1e-6;
};

// Channels of the [H, W, 5] render tensor.
namespace channel {
inline constexpr std::size_t kColor = 0;  // 3
inline constexpr std::size_t kDepth = 3;
inline constexpr std::size_t kAlpha = 4;
inline constexpr std::size_t kCount = 5;
}  // namespace channel

struct RenderImages {
  Image color;  // H x W x 3
  Map2D depth;
  Map2D alpha;
};

namespace detail {

inline Mat3 quat_to_rotation(double w, double x, double y, double z) {
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

struct Projected {
  bool visible = false;
  double u = 0, v = 0, z = 0;
  double ca = 0, cb = 0, cc = 0;  // inverse 2D covariance [[ca, cb], [cb, cc]]
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
  Vec3 pcam = Vec3::Zero();
  Mat3 rot = Mat3::Identity();
  Mat3 sigma3 = Mat3::Zero();
  Mat23 jw = Mat23::Zero();
  Mat2 conic = Mat2::Identity();
};

/// Screen-space record of a visible Gaussian, stored in depth order.
struct Splat {
  double u, v, ca, cb, cc, z, opacity;
  double color[3];
  int x0, x1, y0, y1;
};

struct Context {
  geometry::Camera camera;
  RenderSettings settings;
  std::vector<Projected> proj;
  std::vector<Splat> splats;           // by depth rank
  std::vector<std::uint32_t> rank_index;  // depth rank -> Gaussian index
  std::vector<std::uint32_t> offsets;  // CSR per pixel over `ranks`
  std::vector<std::uint32_t> ranks;    // increasing within a pixel
  std::vector<double> falloff;         // exp(-power) per list entry
  std::vector<double> params;          // packed forward values [G, 14]
};

inline void project_all(Context& ctx, const std::vector<std::uint64_t>& keys) {
  const auto& cam = ctx.camera;
  const auto& s = ctx.settings;
  const Mat3 W = cam.rotation();
  const Vec3 t = cam.translation();
  const std::size_t G = ctx.params.size() / decoder::kParamsPerGaussian;
  ctx.proj.assign(G, Projected{});
  const int width = static_cast<int>(cam.width);
  const int height = static_cast<int>(cam.height);
  for (std::size_t i = 0; i < G; ++i) {
    const double* g = ctx.params.data() + i * decoder::kParamsPerGaussian;
    for (std::size_t k = 0; k < decoder::kParamsPerGaussian; ++k) {
      if (!std::isfinite(g[k])) {
        throw NumericalError("render: Gaussian " + std::to_string(i) + " (voxel key " + std::to_string(keys[i] / 32) +
                             ", slot " + std::to_string(keys[i] % 32) + ") has a non-finite parameter");
      }
    }
    auto& p = ctx.proj[i];
    p.pcam = W * Vec3(g[0], g[1], g[2]) + t;
    const double z = p.pcam.z();
    if (z <= s.near_plane) continue;
    p.z = z;
    p.u = cam.cx + cam.fx * p.pcam.x() / z;
    p.v = cam.cy + cam.fy * p.pcam.y() / z;
    p.rot = quat_to_rotation(g[7], g[8], g[9], g[10]);
    const Vec3 scale(g[4], g[5], g[6]);
    const Mat3 m = p.rot * scale.asDiagonal();
    p.sigma3 = m * m.transpose();
    Mat23 J;
    J << cam.fx / z, 0, -cam.fx * p.pcam.x() / (z * z),  //
        0, cam.fy / z, -cam.fy * p.pcam.y() / (z * z);
    p.jw = J * W;
    Mat2 cov = p.jw * p.sigma3 * p.jw.transpose();
    cov(0, 0) += s.covariance_floor;
    cov(1, 1) += s.covariance_floor;
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
    if (!(det > 0.0)) continue;
    p.ca = cov(1, 1) / det;
    p.cb = -cov(0, 1) / det;
    p.cc = cov(0, 0) / det;
    p.conic << p.ca, p.cb, p.cb, p.cc;
    const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
    const double lambda = mid + std::sqrt(std::max(0.0, mid * mid - det));
    const double radius = s.cull_sigma * std::sqrt(lambda);
    p.x0 = std::max(0, static_cast<int>(std::ceil(p.u - radius)));
    p.x1 = std::min(width - 1, static_cast<int>(std::floor(p.u + radius)));
    p.y0 = std::max(0, static_cast<int>(std::ceil(p.v - radius)));
    p.y1 = std::min(height - 1, static_cast<int>(std::floor(p.v + radius)));
    p.visible = p.x0 <= p.x1 && p.y0 <= p.y1;
  }
}

/// Squared Mahalanobis distance of pixel (x, y) from a splat center.
inline double mahalanobis2(const Splat& sp, double x, double y) {
  const double dx = x - sp.u;
  const double dy = y - sp.v;
  return sp.ca * dx * dx + 2.0 * sp.cb * dx * dy + sp.cc * dy * dy;
}

/// Orders visible Gaussians front to back (ties by provenance key) and builds
/// per-pixel lists of the splats whose cull ellipse covers the pixel center.
inline void bin(Context& ctx, const std::vector<std::uint64_t>& keys) {
  struct SortKey {
    double z;
    std::uint64_t key;
    std::uint32_t index;
  };
  std::vector<SortKey> sorted;
  for (std::uint32_t i = 0; i < ctx.proj.size(); ++i)
    if (ctx.proj[i].visible) sorted.push_back({ctx.proj[i].z, keys[i], i});
  std::sort(sorted.begin(), sorted.end(), [](const SortKey& a, const SortKey& b) {
    return a.z != b.z ? a.z < b.z : a.key < b.key;
  });
  ctx.rank_index.resize(sorted.size());
  ctx.splats.resize(sorted.size());
  for (std::size_t r = 0; r < sorted.size(); ++r) {
    const auto i = sorted[r].index;
    const auto& p = ctx.proj[i];
    const double* g = ctx.params.data() + i * decoder::kParamsPerGaussian;
    ctx.rank_index[r] = i;
    ctx.splats[r] = {p.u, p.v, p.ca, p.cb, p.cc, p.z, g[decoder::col::kOpacity], {g[11], g[12], g[13]}, p.x0, p.x1, p.y0, p.y1};
  }
  const double cull2 = ctx.settings.cull_sigma * ctx.settings.cull_sigma;
  const std::size_t width = ctx.camera.width;
  const std::size_t height = ctx.camera.height;
  // Rows first, then pixels within a row, so list writes stay cache-local.
  std::vector<std::vector<std::uint32_t>> rows(height);
  for (std::uint32_t r = 0; r < ctx.splats.size(); ++r)
    for (int y = ctx.splats[r].y0; y <= ctx.splats[r].y1; ++y) rows[static_cast<std::size_t>(y)].push_back(r);
  std::vector<std::vector<std::uint32_t>> pix_ranks(width);
  std::vector<std::vector<double>> pix_falloff(width);
  ctx.offsets.assign(width * height + 1, 0);
  ctx.ranks.clear();
  ctx.falloff.clear();
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      pix_ranks[x].clear();
      pix_falloff[x].clear();
    }
    for (const auto r : rows[y]) {
      const auto& sp = ctx.splats[r];
      for (int x = sp.x0; x <= sp.x1; ++x) {
        const double q = mahalanobis2(sp, x, static_cast<double>(y));
        if (q > cull2) continue;
        pix_ranks[static_cast<std::size_t>(x)].push_back(r);
        pix_falloff[static_cast<std::size_t>(x)].push_back(std::exp(-0.5 * q));
      }
    }
    for (std::size_t x = 0; x < width; ++x) {
      ctx.ranks.insert(ctx.ranks.end(), pix_ranks[x].begin(), pix_ranks[x].end());
      ctx.falloff.insert(ctx.falloff.end(), pix_falloff[x].begin(), pix_falloff[x].end());
      ctx.offsets[y * width + x + 1] = static_cast<std::uint32_t>(ctx.ranks.size());
    }
  }
}

}  // namespace detail

/// Differentiable EWA splatting of packed Gaussians [G, 14] -> [H, W, 5]
/// (rgb, depth, alpha). `keys` orders equal-depth Gaussians.
inline ad::Tensor render(ad::Tape& tape, const ad::Tensor& packed, const std::vector<std::uint64_t>& keys,
                         const geometry::Camera& camera, const RenderSettings& settings = {}) {
  if (packed.rank() != 2 || packed.dim(1) != decoder::kParamsPerGaussian) {
    throw ShapeError("render: expected packed Gaussians [G, 14], got " + ad::shape_str(packed.shape()));
  }
  if (keys.size() != packed.dim(0)) throw ShapeError("render: key count does not match Gaussian count");
  camera.validate();
  auto ctx = std::make_shared<detail::Context>();
  ctx->camera = camera;
  ctx->settings = settings;
  ctx->params = packed.values();
  detail::project_all(*ctx, keys);
  detail::bin(*ctx, keys);

  const std::size_t width = camera.width;
  const std::size_t height = camera.height;
  ad::Tensor out = ad::Tensor::zeros({height, width, channel::kCount});
  auto o = out.data();
  for (std::size_t pix = 0; pix < width * height; ++pix) {
    double T = 1.0;
    double c[3] = {0.0, 0.0, 0.0};
    double zacc = 0.0;
    for (auto k = ctx->offsets[pix]; k < ctx->offsets[pix + 1]; ++k) {
      const auto& sp = ctx->splats[ctx->ranks[k]];
      const double w = std::min(sp.opacity * ctx->falloff[k], settings.max_weight);
      const double wt = w * T;
      for (int ch = 0; ch < 3; ++ch) c[ch] += wt * sp.color[ch];
      zacc += wt * sp.z;
      T *= 1.0 - w;
    }
    const double alpha = 1.0 - T;
    double* px = o.data() + pix * channel::kCount;
    for (int ch = 0; ch < 3; ++ch) px[ch] = c[ch] + T * settings.background[ch];
    px[channel::kDepth] = zacc / (alpha + 1e-8);
    px[channel::kAlpha] = alpha;
  }

  if (!packed.requires_grad()) return out;
  tape.record({packed}, out, [packed, out, ctx]() mutable {
    const auto& cam = ctx->camera;
    const auto& s = ctx->settings;
    const std::size_t width = cam.width;
    const std::size_t height = cam.height;
    const auto gout = out.grad();
    const auto vout = out.data();

    // Per-splat (depth rank) screen-space gradients: u, v, conic (a, b, c), z, opacity, rgb.
    std::vector<double> g2(ctx->splats.size() * 10, 0.0);
    std::vector<double> w_buf, t_buf;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t pix = y * width + x;
        const auto begin = ctx->offsets[pix], end = ctx->offsets[pix + 1];
        if (begin == end) continue;
        w_buf.resize(end - begin);
        t_buf.resize(end - begin);
        double T = 1.0;
        for (auto k = begin; k < end; ++k) {
          const double w = std::min(ctx->splats[ctx->ranks[k]].opacity * ctx->falloff[k], s.max_weight);
          w_buf[k - begin] = w;
          t_buf[k - begin] = T;
          T *= 1.0 - w;
        }
        const double* go = gout.data() + pix * channel::kCount;
        const double* vo = vout.data() + pix * channel::kCount;
        const double alpha = vo[channel::kAlpha];
        const double den = alpha + 1e-8;
        const double zacc = vo[channel::kDepth] * den;
        const double gz = go[channel::kDepth] / den;
        const double galpha = go[channel::kAlpha] - go[channel::kDepth] * zacc / (den * den);
        // L = sum_i s_i w_i T_i + s_end T_final + const, with s_end from background and alpha = 1 - T_final.
        double suffix = (go[0] * s.background[0] + go[1] * s.background[1] + go[2] * s.background[2] - galpha) * T;
        for (auto k = end; k-- > begin;) {
          const auto r = ctx->ranks[k];
          const auto& sp = ctx->splats[r];
          const double w = w_buf[k - begin];
          const double Ti = t_buf[k - begin];
          const double si = go[0] * sp.color[0] + go[1] * sp.color[1] + go[2] * sp.color[2] + gz * sp.z;
          const double dw = si * Ti - suffix / (1.0 - w);
          suffix += si * w * Ti;
          double* acc = g2.data() + static_cast<std::size_t>(r) * 10;
          const double wt = w * Ti;
          acc[5] += gz * wt;  // z through the depth channel
          acc[7] += go[0] * wt;
          acc[8] += go[1] * wt;
          acc[9] += go[2] * wt;
          if (sp.opacity * ctx->falloff[k] > s.max_weight) continue;  // clamped: no gradient
          acc[6] += dw * ctx->falloff[k];
          const double gpow = -dw * w;
          const double dx = static_cast<double>(x) - sp.u;
          const double dy = static_cast<double>(y) - sp.v;
          acc[0] += gpow * -(sp.ca * dx + sp.cb * dy);
          acc[1] += gpow * -(sp.cb * dx + sp.cc * dy);
          acc[2] += gpow * 0.5 * dx * dx;
          acc[3] += gpow * dx * dy;
          acc[4] += gpow * 0.5 * dy * dy;
        }
      }
    }

    const Mat3 W = cam.rotation();
    auto gp = packed.grad();
    for (std::size_t r = 0; r < ctx->splats.size(); ++r) {
      const std::size_t i = ctx->rank_index[r];
      const auto& p = ctx->proj[i];
      const double* acc = g2.data() + r * 10;
      double* gi = gp.data() + i * decoder::kParamsPerGaussian;
      const double* g = ctx->params.data() + i * decoder::kParamsPerGaussian;
      gi[decoder::col::kOpacity] += acc[6];
      for (int ch = 0; ch < 3; ++ch) gi[decoder::col::kColor + ch] += acc[7 + ch];

      // Conic -> 2D covariance -> (J W, Sigma3D).
      Mat2 gk;
      gk << acc[2], 0.5 * acc[3], 0.5 * acc[3], acc[4];
      const Mat2 gcov = -p.conic * gk * p.conic;
      const Mat3 gsigma = p.jw.transpose() * gcov * p.jw;
      const Mat23 gjw = 2.0 * gcov * p.jw * p.sigma3;
      const Mat23 gj = gjw * W.transpose();

      const double z = p.z, px = p.pcam.x(), py = p.pcam.y();
      Vec3 gcam = Vec3::Zero();
      gcam.x() += acc[0] * cam.fx / z + gj(0, 2) * (-cam.fx / (z * z));
      gcam.y() += acc[1] * cam.fy / z + gj(1, 2) * (-cam.fy / (z * z));
      gcam.z() += acc[0] * (-cam.fx * px / (z * z)) + acc[1] * (-cam.fy * py / (z * z)) + acc[5] +
                  gj(0, 0) * (-cam.fx / (z * z)) + gj(0, 2) * (2.0 * cam.fx * px / (z * z * z)) +
                  gj(1, 1) * (-cam.fy / (z * z)) + gj(1, 2) * (2.0 * cam.fy * py / (z * z * z));
      const Vec3 gmu = W.transpose() * gcam;
      for (int a = 0; a < 3; ++a) gi[decoder::col::kCenter + a] += gmu[a];

      // Sigma3D = M M^T, M = R diag(s).
      const Vec3 scale(g[4], g[5], g[6]);
      const Mat3 m = p.rot * scale.asDiagonal();
      const Mat3 gm = 2.0 * gsigma * m;
      Mat3 grot;
      for (int c = 0; c < 3; ++c) {
        gi[decoder::col::kScale + c] += gm.col(c).dot(p.rot.col(c));
        grot.col(c) = gm.col(c) * scale[c];
      }
      const double qw = g[7], qx = g[8], qy = g[9], qz = g[10];
      Mat3 dw, dx, dy, dz;
      dw << 0, -2 * qz, 2 * qy, 2 * qz, 0, -2 * qx, -2 * qy, 2 * qx, 0;
      dx << 0, 2 * qy, 2 * qz, 2 * qy, -4 * qx, -2 * qw, 2 * qz, 2 * qw, -4 * qx;
      dy << -4 * qy, 2 * qx, 2 * qw, 2 * qx, 0, 2 * qz, -2 * qw, 2 * qz, -4 * qy;
      dz << -4 * qz, -2 * qw, 2 * qx, 2 * qw, -4 * qz, 2 * qy, 2 * qx, 2 * qy, 0;
      gi[decoder::col::kRotation + 0] += grot.cwiseProduct(dw).sum();
      gi[decoder::col::kRotation + 1] += grot.cwiseProduct(dx).sum();
      gi[decoder::col::kRotation + 2] += grot.cwiseProduct(dy).sum();
      gi[decoder::col::kRotation + 3] += grot.cwiseProduct(dz).sum();
    }
  });
  return out;
}

/// Splits a [H, W, 5] render tensor into images.
inline RenderImages to_images(const ad::Tensor& rendered) {
  const std::size_t H = rendered.dim(0), W = rendered.dim(1);
  RenderImages img{Image(W, H, 3), Map2D(W, H, 1), Map2D(W, H, 1)};
  const auto v = rendered.data();
  for (std::size_t p = 0; p < H * W; ++p) {
    for (int c = 0; c < 3; ++c) img.color.data[p * 3 + c] = v[p * channel::kCount + c];
    img.depth.data[p] = v[p * channel::kCount + channel::kDepth];
    img.alpha.data[p] = v[p * channel::kCount + channel::kAlpha];
  }
  return img;
}

/// Non-differentiable convenience over a GaussianSet.
inline RenderImages render(const decoder::GaussianSet& set, const geometry::Camera& camera,
                           const RenderSettings& settings = {}) {
  ad::Tape tape;
  return to_images(render(tape, decoder::pack(set), decoder::provenance_keys(set), camera, settings));
}

}  // namespace voxsplat::render
