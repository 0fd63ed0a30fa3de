#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "voxsplat/autodiff/ops.hpp"
#include "voxsplat/core/image.hpp"
#include "voxsplat/objectives/ssim.hpp"

namespace voxsplat::objectives {

/// How the depth-normalization stabilizer is chosen.
struct EpsilonPolicy {
  enum class Kind { kRelative, kFixed } kind = Kind::kRelative;
  double value = 0.01;  // relative: multiple of std(d(I)); fixed: the epsilon itself

  double resolve(double global_std) const { return kind == Kind::kRelative ? value * global_std + 1e-8 : value; }
  static EpsilonPolicy fixed(double eps) { return {Kind::kFixed, eps}; }
};

struct LossWeights {
  double l1 = 0.8;
  double dssim = 0.2;
  double lpips = 0.0;
  double depth_local = 1.0;
  double depth_global = 0.5;
  double tau = 0.05;
  EpsilonPolicy epsilon;
  std::size_t patch = 8;
  double alpha_threshold = 0.05;
  double depth = 0.1;
  double gan = 0.05;
  std::size_t gan_start_iter = 500;

  void validate() const {
    for (double v : {l1, dssim, lpips, depth_local, depth_global, depth, gan}) {
      if (!(v >= 0.0)) throw InvalidArgument("loss weights must be non-negative");
    }
    if (!(tau >= 0.0)) throw InvalidArgument("tau must be non-negative");
    if (patch == 0) throw InvalidArgument("depth patch size must be positive");
    if (epsilon.kind == EpsilonPolicy::Kind::kFixed && !(epsilon.value >= 0.0)) {
      throw InvalidArgument("fixed epsilon must be non-negative");
    }
  }
};

/// Image -> constant tensor [H, W, C].
inline ad::Tensor image_tensor(const Image& img) {
  return ad::Tensor::from({img.height, img.width, img.channels}, img.data);
}

/// Optional perceptual term; returns a scalar tensor.
using PerceptualScorer = std::function<ad::Tensor(ad::Tape&, const ad::Tensor&, const ad::Tensor&)>;

struct ReconstructionParts {
  ad::Tensor total;
  double l1 = 0.0;
  double dssim = 0.0;
  double lpips = 0.0;
};

inline ReconstructionParts reconstruction_loss(ad::Tape& tape, const ad::Tensor& rendered, const ad::Tensor& target,
                                               const LossWeights& w, const PerceptualScorer& perceptual = {}) {
  if (rendered.shape() != target.shape()) {
    throw ShapeError("reconstruction_loss: rendered " + ad::shape_str(rendered.shape()) + " vs target " +
                     ad::shape_str(target.shape()));
  }
  ReconstructionParts parts;
  const ad::Tensor l1 = ad::mean(tape, ad::abs(tape, ad::sub(tape, rendered, target)));
  const ad::Tensor dssim = ad::add_scalar(tape, ad::scale(tape, ssim(tape, rendered, target), -0.5), 0.5);
  parts.l1 = l1.item();
  parts.dssim = dssim.item();
  ad::Tensor total = ad::add(tape, ad::scale(tape, l1, w.l1), ad::scale(tape, dssim, w.dssim));
  if (perceptual && w.lpips > 0.0) {
    const ad::Tensor lp = perceptual(tape, rendered, target);
    parts.lpips = lp.item();
    total = ad::add(tape, total, ad::scale(tape, lp, w.lpips));
  }
  parts.total = total;
  return parts;
}

/// Truncated squared error: zero inside the tolerance band.
inline double truncated_l2(double a, double b, double tau) {
  const double r = a - b;
  return std::abs(r) > tau ? r * r : 0.0;
}

inline std::vector<double> truncated_l2(const std::vector<double>& a, const std::vector<double>& b, double tau) {
  if (a.size() != b.size()) throw ShapeError("truncated_l2: length mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = truncated_l2(a[i], b[i], tau);
  return out;
}

/// Valid-pixel patch partition of a depth map; pixel lists per non-empty patch.
struct PatchLayout {
  std::vector<std::vector<std::size_t>> patches;
  std::vector<std::size_t> valid;  // all valid pixels in patch order
};

inline PatchLayout patch_layout(std::size_t width, std::size_t height, const std::vector<bool>& mask,
                                std::size_t patch) {
  PatchLayout layout;
  for (std::size_t py = 0; py < height; py += patch) {
    for (std::size_t px = 0; px < width; px += patch) {
      std::vector<std::size_t> members;
      for (std::size_t y = py; y < std::min(height, py + patch); ++y)
        for (std::size_t x = px; x < std::min(width, px + patch); ++x)
          if (mask[y * width + x]) members.push_back(y * width + x);
      if (members.empty()) continue;
      layout.valid.insert(layout.valid.end(), members.begin(), members.end());
      layout.patches.push_back(std::move(members));
    }
  }
  return layout;
}

namespace detail {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& d, const std::vector<std::size_t>& idx) {
  MeanStd ms;
  if (idx.empty()) return ms;
  for (auto i : idx) ms.mean += d[i];
  ms.mean /= static_cast<double>(idx.size());
  double var = 0.0;
  for (auto i : idx) var += (d[i] - ms.mean) * (d[i] - ms.mean);
  ms.std = std::sqrt(var / static_cast<double>(idx.size()));
  return ms;
}

inline double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace detail

/// Local normalization: per patch, subtract the patch mean and divide by the
/// patch population std plus epsilon. Invalid pixels are 0 in the output.
inline std::vector<double> depth_normalize_local(const std::vector<double>& d, const PatchLayout& layout,
                                                 const EpsilonPolicy& eps) {
  std::vector<double> out(d.size(), 0.0);
  const double e = eps.resolve(detail::mean_std(d, layout.valid).std);
  for (const auto& p : layout.patches) {
    const auto ms = detail::mean_std(d, p);
    for (auto i : p) out[i] = detail::safe_ratio(d[i] - ms.mean, ms.std + e);
  }
  return out;
}

/// Global normalization: patch mean subtracted, divided by the image std.
inline std::vector<double> depth_normalize_global(const std::vector<double>& d, const PatchLayout& layout,
                                                  const EpsilonPolicy& eps) {
  std::vector<double> out(d.size(), 0.0);
  const double s = detail::mean_std(d, layout.valid).std;
  const double e = eps.resolve(s);
  for (const auto& p : layout.patches) {
    const auto ms = detail::mean_std(d, p);
    for (auto i : p) out[i] = detail::safe_ratio(d[i] - ms.mean, s + e);
  }
  return out;
}

struct DepthLossResult {
  ad::Tensor loss;
  std::size_t valid_pixels = 0;
  bool no_valid_pixels = false;
};

/// Depth mask: reference depth present and rendered alpha above threshold.
inline std::vector<bool> depth_mask(const std::vector<double>& reference, const std::vector<double>& alpha,
                                    double alpha_threshold) {
  std::vector<bool> m(reference.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = reference[i] > 0.0 && alpha[i] >= alpha_threshold;
  return m;
}

/// Patch-normalized depth regularizer. `rendered` has H x W elements (any
/// shape); gradients flow to it only. `alpha` selects valid pixels.
inline DepthLossResult depth_loss(ad::Tape& tape, const ad::Tensor& rendered, const std::vector<double>& alpha,
                                  const Map2D& reference, const LossWeights& w) {
  const std::size_t H = reference.height, W = reference.width;
  if (rendered.numel() != H * W || alpha.size() != H * W || reference.channels != 1) {
    throw ShapeError("depth_loss: rendered " + ad::shape_str(rendered.shape()) + " vs reference " +
                     std::to_string(H) + "x" + std::to_string(W));
  }
  DepthLossResult res;
  const auto layout = std::make_shared<PatchLayout>(patch_layout(W, H, depth_mask(reference.data, alpha, w.alpha_threshold), w.patch));
  res.valid_pixels = layout->valid.size();
  res.loss = ad::Tensor::scalar(0.0);
  if (layout->valid.empty()) {
    res.no_valid_pixels = true;
    return res;
  }
  const std::vector<double>& dh = rendered.values();
  const auto& ds = reference.data;
  const auto ln_h = depth_normalize_local(dh, *layout, w.epsilon);
  const auto ln_s = depth_normalize_local(ds, *layout, w.epsilon);
  const auto gn_h = depth_normalize_global(dh, *layout, w.epsilon);
  const auto gn_s = depth_normalize_global(ds, *layout, w.epsilon);
  const double n = static_cast<double>(layout->valid.size());
  double total = 0.0;
  for (auto i : layout->valid) {
    total += w.depth_local * truncated_l2(ln_h[i], ln_s[i], w.tau) / n;
    total += w.depth_global * truncated_l2(gn_h[i], gn_s[i], w.tau) / n;
  }
  res.loss = ad::Tensor::scalar(total);
  if (!rendered.requires_grad()) return res;

  tape.record({rendered}, res.loss, [rendered, out = res.loss, layout, ln_h, ln_s, gn_h, gn_s, w, n]() {
    const double g = out.grad()[0];
    const auto d = rendered.data();
    auto gd = rendered.grad();
    const auto global = detail::mean_std(rendered.values(), layout->valid);
    const bool relative = w.epsilon.kind == EpsilonPolicy::Kind::kRelative;
    const double eps = w.epsilon.resolve(global.std);
    // Accumulated coefficient of d(eps)/d(d_x) and of d(std_I)/d(d_x).
    double eps_coeff = 0.0;
    double std_coeff = 0.0;
    const double d_global = global.std + eps;
    for (const auto& p : layout->patches) {
      const auto ms = detail::mean_std(rendered.values(), p);
      const double np = static_cast<double>(p.size());
      const double d_local = ms.std + eps;
      double gsum_l = 0.0, gy_l = 0.0, gsum_g = 0.0, gy_g = 0.0;
      std::vector<double> gl(p.size()), gg(p.size());
      for (std::size_t k = 0; k < p.size(); ++k) {
        const auto i = p[k];
        const double rl = ln_h[i] - ln_s[i];
        const double rg = gn_h[i] - gn_s[i];
        gl[k] = std::abs(rl) > w.tau ? g * w.depth_local * 2.0 * rl / n : 0.0;
        gg[k] = std::abs(rg) > w.tau ? g * w.depth_global * 2.0 * rg / n : 0.0;
        const double y = d[i] - ms.mean;
        gsum_l += gl[k];
        gy_l += gl[k] * y;
        gsum_g += gg[k];
        gy_g += gg[k] * y;
      }
      if (d_local > 0.0) {
        const double inv = 1.0 / d_local;
        const double h = gy_l * inv * inv;
        for (std::size_t k = 0; k < p.size(); ++k) {
          const auto i = p[k];
          const double y = d[i] - ms.mean;
          gd[i] += gl[k] * inv - gsum_l * inv / np;
          if (ms.std > 0.0) gd[i] -= h * y / (np * ms.std);
        }
        eps_coeff -= h;
      }
      if (d_global > 0.0) {
        const double inv = 1.0 / d_global;
        for (std::size_t k = 0; k < p.size(); ++k) gd[p[k]] += gg[k] * inv - gsum_g * inv / np;
        const double h = gy_g * inv * inv;
        eps_coeff -= h;
        std_coeff -= h;
      }
    }
    // d(std_I)/d(d_x) = (d_x - mean_I) / (|V| std_I); relative epsilon adds 0.01 of it.
    const double total_coeff = std_coeff + (relative ? w.epsilon.value * eps_coeff : 0.0);
    if (global.std > 0.0 && total_coeff != 0.0) {
      for (auto i : layout->valid) gd[i] += total_coeff * (d[i] - global.mean) / (n * global.std);
    }
  });
  return res;
}

/// Generator objective: reconstruction + weighted depth + weighted GAN term,
/// the latter only once `iter` reaches the GAN start. Undefined parts are skipped.
inline ad::Tensor total_generator_loss(ad::Tape& tape, const ad::Tensor& rec, const ad::Tensor& depth,
                                       const ad::Tensor& gan, const LossWeights& w, std::size_t iter) {
  ad::Tensor total = rec;
  if (depth.defined()) total = ad::add(tape, total, ad::scale(tape, depth, w.depth));
  if (gan.defined() && iter >= w.gan_start_iter) total = ad::add(tape, total, ad::scale(tape, gan, w.gan));
  return total;
}

}  // namespace voxsplat::objectives
