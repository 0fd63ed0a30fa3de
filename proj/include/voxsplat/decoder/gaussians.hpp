#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "voxsplat/autodiff/ops.hpp"
#include "voxsplat/core/rng.hpp"
#include "voxsplat/geometry/voxel_grid.hpp"

namespace voxsplat::decoder {

inline constexpr std::size_t kGaussiansPerVoxel = 32;
inline constexpr std::size_t kParamsPerGaussian = 14;

// Column layout shared by raw decoder output and mapped (packed) Gaussians.
namespace col {
inline constexpr std::size_t kCenter = 0;    // 3: offset o / center mu
inline constexpr std::size_t kOpacity = 3;   // 1
inline constexpr std::size_t kScale = 4;     // 3
inline constexpr std::size_t kRotation = 7;  // 4: (w, x, y, z)
inline constexpr std::size_t kColor = 11;    // 3
}  // namespace col

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Vector4d;  // (w, x, y, z)

struct Gaussian {
  Vec3 center = Vec3::Zero();
  double opacity = 0.5;
  Vec3 scale = Vec3::Ones();
  Quat rotation = Quat(1, 0, 0, 0);
  Vec3 color = Vec3::Constant(0.5);
  std::uint32_t voxel = 0;         // dense index of the source voxel
  std::int64_t linear_index = 0;   // grid linear index of the source voxel
  std::uint32_t slot = 0;          // j in [0, 32)
};

struct GaussianSet {
  std::vector<Gaussian> gaussians;
  std::size_t size() const { return gaussians.size(); }
  bool empty() const { return gaussians.empty(); }
};

/// Depth-sort tie-break key per Gaussian: (linear voxel index, slot).
inline std::vector<std::uint64_t> provenance_keys(const geometry::VoxelGrid& grid) {
  std::vector<std::uint64_t> keys;
  keys.reserve(grid.size() * kGaussiansPerVoxel);
  for (auto lin : grid.linear_indices())
    for (std::size_t j = 0; j < kGaussiansPerVoxel; ++j) keys.push_back(static_cast<std::uint64_t>(lin) * kGaussiansPerVoxel + j);
  return keys;
}

inline std::vector<std::uint64_t> provenance_keys(const GaussianSet& set) {
  std::vector<std::uint64_t> keys;
  keys.reserve(set.size());
  for (const auto& g : set.gaussians) keys.push_back(static_cast<std::uint64_t>(g.linear_index) * kGaussiansPerVoxel + g.slot);
  return keys;
}

/// Bounded mappings from raw decoder outputs [G, 14] to packed Gaussian
/// parameters [G, 14]:
///   center  = x_p + l * (sigmoid(o) - 1/2)
///   opacity = sigmoid(a)
///   scale   = l * sigmoid(s)
///   rotation = q / |q|  (q = 0 maps to the identity)
///   color   = sigmoid(c)
inline ad::Tensor map_parameters(ad::Tape& tape, const ad::Tensor& raw, const geometry::VoxelGrid& grid) {
  const std::size_t G = grid.size() * kGaussiansPerVoxel;
  if (raw.rank() != 2 || raw.dim(0) != G || raw.dim(1) != kParamsPerGaussian) {
    throw ShapeError("map_parameters: expected raw shape [" + std::to_string(G) + ", 14], got " + ad::shape_str(raw.shape()));
  }
  const double ell = grid.voxel_length();
  ad::Tensor out = ad::Tensor::zeros({G, kParamsPerGaussian});
  auto o = out.data();
  const auto r = raw.data();
  for (std::size_t p = 0; p < grid.size(); ++p) {
    const Vec3 xp = grid.center(p);
    for (std::size_t j = 0; j < kGaussiansPerVoxel; ++j) {
      const std::size_t base = (p * kGaussiansPerVoxel + j) * kParamsPerGaussian;
      for (int a = 0; a < 3; ++a) o[base + col::kCenter + a] = xp[a] + ell * (ad::sigmoid_value(r[base + col::kCenter + a]) - 0.5);
      o[base + col::kOpacity] = ad::sigmoid_value(r[base + col::kOpacity]);
      for (int a = 0; a < 3; ++a) o[base + col::kScale + a] = ell * ad::sigmoid_value(r[base + col::kScale + a]);
      const Quat q(r[base + col::kRotation], r[base + col::kRotation + 1], r[base + col::kRotation + 2],
                   r[base + col::kRotation + 3]);
      const double n = q.norm();
      const Quat qn = n > 1e-12 ? Quat(q / n) : Quat(1, 0, 0, 0);
      for (int a = 0; a < 4; ++a) o[base + col::kRotation + a] = qn[a];
      for (int a = 0; a < 3; ++a) o[base + col::kColor + a] = ad::sigmoid_value(r[base + col::kColor + a]);
    }
  }
  if (raw.requires_grad()) {
    tape.record({raw}, out, [raw, out, ell, G]() mutable {
      const auto g = out.grad();
      const auto r = raw.data();
      const auto y = out.data();
      auto gr = raw.grad();
      auto dsig = [](double x, double s) { return (x < -40.0 || x > 40.0) ? 0.0 : s * (1.0 - s); };
      for (std::size_t i = 0; i < G; ++i) {
        const std::size_t b = i * kParamsPerGaussian;
        for (int a = 0; a < 3; ++a) {
          const std::size_t k = b + col::kCenter + a;
          const double s = ad::sigmoid_value(r[k]);
          gr[k] += g[k] * ell * dsig(r[k], s);
        }
        {
          const std::size_t k = b + col::kOpacity;
          gr[k] += g[k] * dsig(r[k], y[k]);
        }
        for (int a = 0; a < 3; ++a) {
          const std::size_t k = b + col::kScale + a;
          const double s = y[k] / ell;
          gr[k] += g[k] * ell * dsig(r[k], s);
        }
        {
          const std::size_t k = b + col::kRotation;
          const Quat q(r[k], r[k + 1], r[k + 2], r[k + 3]);
          const double n = q.norm();
          if (n > 1e-12) {
            const Quat qn = q / n;
            const Quat gq(g[k], g[k + 1], g[k + 2], g[k + 3]);
            const Quat d = (gq - qn * qn.dot(gq)) / n;
            for (int a = 0; a < 4; ++a) gr[k + a] += d[a];
          }
        }
        for (int a = 0; a < 3; ++a) {
          const std::size_t k = b + col::kColor + a;
          gr[k] += g[k] * dsig(r[k], y[k]);
        }
      }
    });
  }
  return out;
}

/// Template direction t in [-1, 1] for (linear voxel index, slot, axis):
/// splitmix64 of (linear * 37 + slot * 3 + axis), top 53 bits mapped affinely.
inline double template_component(std::int64_t linear_index, std::size_t slot, int axis) {
  const auto key = static_cast<std::uint64_t>(linear_index) * 37u + static_cast<std::uint64_t>(slot) * 3u +
                   static_cast<std::uint64_t>(axis);
  const double unit = static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53;
  return 2.0 * unit - 1.0;
}

inline Vec3 template_direction(std::int64_t linear_index, std::size_t slot) {
  return {template_component(linear_index, slot, 0), template_component(linear_index, slot, 1),
          template_component(linear_index, slot, 2)};
}

inline void check_rho(double rho) {
  if (!(rho >= 0.0 && rho < 0.5)) throw InvalidArgument("perturbation radius must lie in [0, 0.5), got " + std::to_string(rho));
}

/// Constant (gradient-free) center shift rho * l * t_{p,j} added to packed Gaussians.
inline ad::Tensor perturb(ad::Tape& tape, const ad::Tensor& packed, const geometry::VoxelGrid& grid, double rho) {
  check_rho(rho);
  if (rho == 0.0) return packed;
  const std::size_t G = grid.size() * kGaussiansPerVoxel;
  if (packed.rank() != 2 || packed.dim(0) != G || packed.dim(1) != kParamsPerGaussian) {
    throw ShapeError("perturb: packed shape " + ad::shape_str(packed.shape()) + " does not match the grid");
  }
  const double amp = rho * grid.voxel_length();
  std::vector<double> shift(G * kParamsPerGaussian, 0.0);
  const auto& lin = grid.linear_indices();
  for (std::size_t p = 0; p < grid.size(); ++p)
    for (std::size_t j = 0; j < kGaussiansPerVoxel; ++j)
      for (int a = 0; a < 3; ++a)
        shift[(p * kGaussiansPerVoxel + j) * kParamsPerGaussian + col::kCenter + a] = amp * template_component(lin[p], j, a);
  return ad::add(tape, packed, ad::Tensor::from({G, kParamsPerGaussian}, std::move(shift)));
}

inline GaussianSet perturb(const GaussianSet& set, double voxel_length, double rho) {
  check_rho(rho);
  GaussianSet out = set;
  if (rho == 0.0) return out;
  for (auto& g : out.gaussians) g.center += rho * voxel_length * template_direction(g.linear_index, g.slot);
  return out;
}

/// Unpacks [G, 14] parameters into a GaussianSet with grid provenance.
inline GaussianSet unpack(const ad::Tensor& packed, const geometry::VoxelGrid& grid) {
  const std::size_t G = grid.size() * kGaussiansPerVoxel;
  if (packed.rank() != 2 || packed.dim(0) != G || packed.dim(1) != kParamsPerGaussian) {
    throw ShapeError("unpack: packed shape " + ad::shape_str(packed.shape()) + " does not match the grid");
  }
  GaussianSet set;
  set.gaussians.resize(G);
  const auto v = packed.data();
  for (std::size_t i = 0; i < G; ++i) {
    const double* row = v.data() + i * kParamsPerGaussian;
    auto& g = set.gaussians[i];
    g.center = Vec3(row[0], row[1], row[2]);
    g.opacity = row[col::kOpacity];
    g.scale = Vec3(row[4], row[5], row[6]);
    g.rotation = Quat(row[7], row[8], row[9], row[10]);
    g.color = Vec3(row[11], row[12], row[13]);
    g.voxel = static_cast<std::uint32_t>(i / kGaussiansPerVoxel);
    g.linear_index = grid.linear_indices()[g.voxel];
    g.slot = static_cast<std::uint32_t>(i % kGaussiansPerVoxel);
  }
  return set;
}

inline ad::Tensor pack(const GaussianSet& set) {
  std::vector<double> v;
  v.reserve(set.size() * kParamsPerGaussian);
  for (const auto& g : set.gaussians) {
    v.insert(v.end(), {g.center.x(), g.center.y(), g.center.z(), g.opacity, g.scale.x(), g.scale.y(), g.scale.z(),
                       g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3], g.color.x(), g.color.y(), g.color.z()});
  }
  return ad::Tensor::from({set.size(), kParamsPerGaussian}, std::move(v));
}

}  // namespace voxsplat::decoder
