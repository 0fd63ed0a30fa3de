#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "voxsplat/autodiff/ops.hpp"
#include "voxsplat/geometry/camera.hpp"
#include "voxsplat/geometry/voxel_grid.hpp"
#include "voxsplat/features/feature_map.hpp"

namespace voxsplat::features {

/// Aggregated per-voxel features plus their learnable residuals. The refined
/// feature is always computed as base + residual, never stored.
struct FeatureVolume {
  std::shared_ptr<const geometry::VoxelGrid> grid;
  ad::Tensor base;      // [V, D], constant
  ad::Tensor residual;  // [V, D], trainable, starts at zero
  std::vector<std::uint32_t> view_counts;

  std::size_t dim() const { return base.dim(1); }
  std::size_t size() const { return base.dim(0); }
};

/// Maps an image pixel coordinate to feature-grid texel coordinates using the
/// half-texel convention.
inline ad::SamplePoint image_to_feature_coords(double u, double v, std::size_t image_width, std::size_t image_height,
                                               std::size_t feature_width, std::size_t feature_height) {
  return {(u + 0.5) / static_cast<double>(image_width) * static_cast<double>(feature_width) - 0.5,
          (v + 0.5) / static_cast<double>(image_height) * static_cast<double>(feature_height) - 0.5};
}

struct BackprojectOptions {
  double occlusion_margin_voxels = 1.5;
};

/// Projects every occupied voxel center into each view, samples that view's
/// features bilinearly and averages over the views that see the voxel.
/// A view is skipped when the projection is invalid, falls outside the image,
/// or lies more than the occlusion margin behind the coarse depth.
inline FeatureVolume backproject(std::shared_ptr<const geometry::VoxelGrid> grid, const std::vector<FeatureMap>& features,
                                 const std::vector<geometry::Camera>& cameras, const std::vector<Map2D>& coarse_depths,
                                 const BackprojectOptions& options = {}) {
  if (features.size() != cameras.size() || features.size() != coarse_depths.size()) {
    throw ShapeError("backproject: " + std::to_string(features.size()) + " feature maps, " +
                     std::to_string(cameras.size()) + " cameras, " + std::to_string(coarse_depths.size()) +
                     " depth maps");
  }
  if (features.empty()) throw ShapeError("backproject: no views");
  const std::size_t D = features[0].dim;
  for (std::size_t v = 0; v < features.size(); ++v) {
    const auto& fm = features[v];
    if (fm.dim != D) {
      throw ShapeError("backproject: view " + std::to_string(v) + " has D = " + std::to_string(fm.dim) +
                       ", expected " + std::to_string(D));
    }
    if (fm.feature_height < 2 || fm.feature_width < 2) throw ShapeError("backproject: feature grid must be at least 2x2");
    if (fm.values.size() != fm.feature_height * fm.feature_width * D) throw ShapeError("backproject: payload size mismatch");
    if (coarse_depths[v].width != cameras[v].width || coarse_depths[v].height != cameras[v].height) {
      throw ShapeError("backproject: depth map " + std::to_string(v) + " does not match its camera size");
    }
  }

  const std::size_t V = grid->size();
  const double margin = options.occlusion_margin_voxels * grid->voxel_length();
  std::vector<double> base(V * D, 0.0);
  std::vector<std::uint32_t> counts(V, 0);
  for (std::size_t p = 0; p < V; ++p) {
    const geometry::Vec3 center = grid->center(p);
    double* acc = base.data() + p * D;
    for (std::size_t v = 0; v < features.size(); ++v) {
      const auto& cam = cameras[v];
      const auto proj = geometry::project_point(cam, center);
      if (!proj) continue;
      const double w = static_cast<double>(cam.width);
      const double h = static_cast<double>(cam.height);
      if (proj->u < -0.5 || proj->v < -0.5 || proj->u >= w - 0.5 || proj->v >= h - 0.5) continue;
      const auto px = static_cast<std::size_t>(std::floor(proj->u + 0.5));
      const auto py = static_cast<std::size_t>(std::floor(proj->v + 0.5));
      const double surface = coarse_depths[v].at(px, py);
      if (surface > 0.0 && proj->depth > surface + margin) continue;
      const auto& fm = features[v];
      const auto taps = ad::detail::bilinear_taps(
          fm.feature_height, fm.feature_width,
          image_to_feature_coords(proj->u, proj->v, cam.width, cam.height, fm.feature_width, fm.feature_height));
      for (int k = 0; k < 4; ++k) {
        const double wk = taps.weight[k];
        if (wk == 0.0) continue;
        for (std::size_t d = 0; d < D; ++d) acc[d] += wk * fm.values[taps.index[k] * D + d];
      }
      ++counts[p];
    }
    if (counts[p] > 0) {
      const double inv = 1.0 / counts[p];
      for (std::size_t d = 0; d < D; ++d) acc[d] *= inv;
    }
  }

  FeatureVolume vol;
  vol.grid = std::move(grid);
  vol.base = ad::Tensor::from({V, D}, std::move(base));
  vol.residual = ad::Tensor::zeros({V, D}, true);
  vol.view_counts = std::move(counts);
  return vol;
}

/// base + residual, differentiable in the residual only. With
/// `use_residual = false` the aggregate is returned unchanged.
inline ad::Tensor refined(ad::Tape& tape, const FeatureVolume& volume, bool use_residual = true) {
  if (!use_residual) return volume.base;
  return ad::add(tape, volume.base, volume.residual);
}

}  // namespace voxsplat::features
