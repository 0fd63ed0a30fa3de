#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "voxsplat/core/error.hpp"
#include "voxsplat/geometry/mesh.hpp"

namespace voxsplat::geometry {

using VoxelIndex = std::array<std::int32_t, 3>;

/// Sparse occupancy over an R^3 cube of voxels with side `voxel_length`.
/// Occupied voxels are kept sorted by linear index i*R^2 + j*R + k; a voxel's
/// position in that order is its dense index.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(std::int32_t resolution, Vec3 origin, double voxel_length, std::vector<std::int64_t> linear)
      : resolution_(resolution), origin_(origin), voxel_length_(voxel_length), linear_(std::move(linear)) {
    if (resolution_ < 1 || !(voxel_length_ > 0.0)) throw InvalidArgument("VoxelGrid: bad resolution or voxel length");
    std::sort(linear_.begin(), linear_.end());
    linear_.erase(std::unique(linear_.begin(), linear_.end()), linear_.end());
    const std::int64_t cells = static_cast<std::int64_t>(resolution_) * resolution_ * resolution_;
    if (!linear_.empty() && (linear_.front() < 0 || linear_.back() >= cells)) {
      throw InvalidArgument("VoxelGrid: linear index out of range");
    }
  }

  std::int32_t resolution() const { return resolution_; }
  const Vec3& origin() const { return origin_; }
  double voxel_length() const { return voxel_length_; }
  std::size_t size() const { return linear_.size(); }
  bool empty() const { return linear_.empty(); }
  const std::vector<std::int64_t>& linear_indices() const { return linear_; }

  std::int64_t linear(const VoxelIndex& ijk) const {
    const std::int64_t r = resolution_;
    return (static_cast<std::int64_t>(ijk[0]) * r + ijk[1]) * r + ijk[2];
  }

  VoxelIndex unlinear(std::int64_t lin) const {
    const std::int64_t r = resolution_;
    return {static_cast<std::int32_t>(lin / (r * r)), static_cast<std::int32_t>((lin / r) % r),
            static_cast<std::int32_t>(lin % r)};
  }

  VoxelIndex voxel(std::size_t dense) const { return unlinear(linear_[dense]); }

  bool in_range(const VoxelIndex& ijk) const {
    return std::all_of(ijk.begin(), ijk.end(), [&](std::int32_t v) { return v >= 0 && v < resolution_; });
  }

  std::optional<std::size_t> dense_index(const VoxelIndex& ijk) const {
    if (!in_range(ijk)) return std::nullopt;
    const auto lin = linear(ijk);
    const auto it = std::lower_bound(linear_.begin(), linear_.end(), lin);
    if (it == linear_.end() || *it != lin) return std::nullopt;
    return static_cast<std::size_t>(it - linear_.begin());
  }

  bool occupied(const VoxelIndex& ijk) const { return dense_index(ijk).has_value(); }

  Vec3 center(const VoxelIndex& ijk) const {
    return origin_ + voxel_length_ * Vec3(ijk[0] + 0.5, ijk[1] + 0.5, ijk[2] + 0.5);
  }
  Vec3 center(std::size_t dense) const { return center(voxel(dense)); }

  /// Cell containing a point (half-open cells, clamped into the grid).
  VoxelIndex cell_of(const Vec3& p) const {
    VoxelIndex ijk{};
    for (int a = 0; a < 3; ++a) {
      const auto c = static_cast<std::int32_t>(std::floor((p[a] - origin_[a]) / voxel_length_));
      ijk[a] = std::clamp(c, 0, resolution_ - 1);
    }
    return ijk;
  }

  /// Occupied face-neighbors (dense indices) of every occupied voxel, in
  /// fixed axis order -x, +x, -y, +y, -z, +z.
  std::vector<std::vector<std::uint32_t>> face_neighbors() const {
    static constexpr std::array<std::array<int, 3>, 6> kOffsets{
        {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};
    std::vector<std::vector<std::uint32_t>> out(size());
    for (std::size_t d = 0; d < size(); ++d) {
      const auto ijk = voxel(d);
      for (const auto& off : kOffsets) {
        const VoxelIndex n{ijk[0] + off[0], ijk[1] + off[1], ijk[2] + off[2]};
        if (auto idx = dense_index(n)) out[d].push_back(static_cast<std::uint32_t>(*idx));
      }
    }
    return out;
  }

 private:
  std::int32_t resolution_ = 0;
  Vec3 origin_ = Vec3::Zero();
  double voxel_length_ = 1.0;
  std::vector<std::int64_t> linear_;
};

/// Closed triangle / axis-aligned box overlap by the separating-axis theorem
/// (box face normals, triangle normal, and the nine edge cross products).
inline bool triangle_box_overlap(const Vec3& box_center, const Vec3& half, const std::array<Vec3, 3>& tri) {
  const Vec3 v0 = tri[0] - box_center;
  const Vec3 v1 = tri[1] - box_center;
  const Vec3 v2 = tri[2] - box_center;
  const Vec3 e0 = v1 - v0;
  const Vec3 e1 = v2 - v1;
  const Vec3 e2 = v0 - v2;

  auto separated = [&](const Vec3& axis) {
    const double p0 = axis.dot(v0);
    const double p1 = axis.dot(v1);
    const double p2 = axis.dot(v2);
    const double r = half.x() * std::abs(axis.x()) + half.y() * std::abs(axis.y()) + half.z() * std::abs(axis.z());
    return std::min({p0, p1, p2}) > r || std::max({p0, p1, p2}) < -r;
  };

  for (const Vec3* e : {&e0, &e1, &e2}) {
    for (int a = 0; a < 3; ++a) {
      const Vec3 axis = Vec3::Unit(a).cross(*e);
      if (axis.squaredNorm() > 0.0 && separated(axis)) return false;
    }
  }
  for (int a = 0; a < 3; ++a) {
    const double lo = std::min({v0[a], v1[a], v2[a]});
    const double hi = std::max({v0[a], v1[a], v2[a]});
    if (lo > half[a] || hi < -half[a]) return false;
  }
  const Vec3 normal = e0.cross(e1);
  if (normal.squaredNorm() > 0.0 && separated(normal)) return false;
  return true;
}

/// Cubic grid covering `bounds`: voxel length from the largest extent, the
/// cube centered on the box.
inline std::pair<Vec3, double> cubic_frame(const Aabb& bounds, std::int32_t resolution) {
  const double length = bounds.extent().maxCoeff() / resolution;
  const Vec3 origin = bounds.center() - Vec3::Constant(0.5 * length * resolution);
  return {origin, length};
}

/// Surface voxelization: a voxel is occupied iff some triangle overlaps its
/// closed cube.
inline VoxelGrid voxelize_mesh(const TriangleMesh& mesh, std::int32_t resolution, const Aabb& bounds) {
  if (resolution < 2) throw InvalidArgument("voxelize_mesh: resolution must be >= 2");
  if (mesh.triangles.empty()) throw EmptyGeometry("voxelize_mesh: mesh has no triangles");
  mesh.validate();
  if (!bounds.valid() || !(bounds.extent().maxCoeff() > 0.0)) throw InvalidArgument("voxelize_mesh: degenerate bounds");
  for (const auto& tri : mesh.triangles) {
    for (auto idx : tri) {
      if (!bounds.contains(mesh.vertices[idx])) {
        throw OutOfBounds("voxelize_mesh: vertex " + std::to_string(idx) + " lies outside the grid bounds");
      }
    }
  }
  const auto [origin, length] = cubic_frame(bounds, resolution);
  const Vec3 half = Vec3::Constant(0.5 * length);

  std::vector<std::int64_t> linear;
  VoxelGrid frame(resolution, origin, length, {});
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto tri = mesh.corners(t);
    VoxelIndex lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      const double mn = std::min({tri[0][a], tri[1][a], tri[2][a]});
      const double mx = std::max({tri[0][a], tri[1][a], tri[2][a]});
      // Closed cubes: a coordinate on a cell boundary touches both cells.
      lo[a] = std::clamp(static_cast<std::int32_t>(std::ceil((mn - origin[a]) / length)) - 1, 0, resolution - 1);
      hi[a] = std::clamp(static_cast<std::int32_t>(std::floor((mx - origin[a]) / length)), 0, resolution - 1);
    }
    for (std::int32_t i = lo[0]; i <= hi[0]; ++i)
      for (std::int32_t j = lo[1]; j <= hi[1]; ++j)
        for (std::int32_t k = lo[2]; k <= hi[2]; ++k) {
          const VoxelIndex ijk{i, j, k};
          if (triangle_box_overlap(frame.center(ijk), half, tri)) linear.push_back(frame.linear(ijk));
        }
  }
  return VoxelGrid(resolution, origin, length, std::move(linear));
}

/// Default bounds: mesh AABB inflated by 5% of its largest extent.
inline VoxelGrid voxelize_mesh(const TriangleMesh& mesh, std::int32_t resolution) {
  if (mesh.triangles.empty()) throw EmptyGeometry("voxelize_mesh: mesh has no triangles");
  return voxelize_mesh(mesh, resolution, mesh.bounds().inflated(0.05));
}

}  // namespace voxsplat::geometry
