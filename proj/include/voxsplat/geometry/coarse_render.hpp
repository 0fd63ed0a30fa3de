#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "voxsplat/core/image.hpp"
#include "voxsplat/geometry/camera.hpp"
#include "voxsplat/geometry/mesh.hpp"

namespace voxsplat::geometry {

struct Hit {
  double depth = 0.0;  // camera-frame z
  std::uint32_t triangle = 0;
  Vec3 point = Vec3::Zero();
};

/// Moller-Trumbore; returns the ray parameter (camera-frame z for pixel_ray directions).
inline std::optional<double> intersect_ray_triangle(const Vec3& origin, const Vec3& dir, const std::array<Vec3, 3>& tri) {
  const Vec3 e1 = tri[1] - tri[0];
  const Vec3 e2 = tri[2] - tri[0];
  const Vec3 p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-14) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = origin - tri[0];
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (t <= 1e-9) return std::nullopt;
  return t;
}

/// Nearest-hit ray casting of a mesh from one camera, with per-triangle
/// screen-space bounding boxes to limit the candidate pixels.
class RayCaster {
 public:
  RayCaster(const TriangleMesh& mesh, const Camera& camera) : mesh_(mesh), camera_(camera) {
    const double w = static_cast<double>(camera.width);
    const double h = static_cast<double>(camera.height);
    boxes_.reserve(mesh.triangles.size());
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
      const auto tri = mesh.corners(t);
      Box b{-1.0, w, -1.0, h, true};
      bool all_front = true;
      double u0 = std::numeric_limits<double>::infinity(), u1 = -u0, v0 = u0, v1 = -u0;
      for (const auto& p : tri) {
        const auto pr = project_point(camera, p);
        if (!pr) {
          all_front = false;
          break;
        }
        u0 = std::min(u0, pr->u);
        u1 = std::max(u1, pr->u);
        v0 = std::min(v0, pr->v);
        v1 = std::max(v1, pr->v);
      }
      if (all_front) b = {u0 - 1.0, u1 + 1.0, v0 - 1.0, v1 + 1.0, u1 >= -1.0 && u0 <= w && v1 >= -1.0 && v0 <= h};
      boxes_.push_back(b);
    }
  }

  std::optional<Hit> cast(double u, double v) const {
    const auto [origin, dir] = pixel_ray(camera_, u, v);
    std::optional<Hit> best;
    for (std::size_t t = 0; t < mesh_.triangles.size(); ++t) {
      const Box& b = boxes_[t];
      if (!b.visible || u < b.u0 || u > b.u1 || v < b.v0 || v > b.v1) continue;
      const auto tri = mesh_.corners(t);
      const auto hit = intersect_ray_triangle(origin, dir, tri);
      if (hit && (!best || *hit < best->depth)) best = Hit{*hit, static_cast<std::uint32_t>(t), origin + *hit * dir};
    }
    return best;
  }

 private:
  struct Box {
    double u0, u1, v0, v1;
    bool visible;
  };
  const TriangleMesh& mesh_;
  Camera camera_;
  std::vector<Box> boxes_;
};

struct CoarseRender {
  Map2D depth;       // camera-frame z, 0 where no surface
  Map2D silhouette;  // 1 inside, 0 outside
  Map2D edges;       // 1 on edges
};

/// Raw 3x3 Sobel gradient magnitude with border replication.
inline Map2D sobel_magnitude(const Map2D& m) {
  Map2D out(m.width, m.height, 1);
  const auto w = static_cast<std::int64_t>(m.width);
  const auto h = static_cast<std::int64_t>(m.height);
  auto px = [&](std::int64_t x, std::int64_t y) {
    return m.at(static_cast<std::size_t>(std::clamp<std::int64_t>(x, 0, w - 1)),
                static_cast<std::size_t>(std::clamp<std::int64_t>(y, 0, h - 1)));
  };
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
      out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

/// Edges = depth Sobel magnitude above `relative_threshold * scene_diagonal`,
/// or silhouette pixels with a 4-neighbor outside the silhouette.
inline Map2D extract_edges(const Map2D& depth, const Map2D& silhouette, double scene_diagonal,
                           double relative_threshold = 0.02) {
  Map2D edges(depth.width, depth.height, 1);
  const Map2D grad = sobel_magnitude(depth);
  const double threshold = relative_threshold * scene_diagonal;
  for (std::size_t y = 0; y < depth.height; ++y) {
    for (std::size_t x = 0; x < depth.width; ++x) {
      bool edge = grad.at(x, y) > threshold;
      if (!edge && silhouette.at(x, y) > 0.5) {
        const bool l = x > 0 && silhouette.at(x - 1, y) < 0.5;
        const bool r = x + 1 < depth.width && silhouette.at(x + 1, y) < 0.5;
        const bool u = y > 0 && silhouette.at(x, y - 1) < 0.5;
        const bool d = y + 1 < depth.height && silhouette.at(x, y + 1) < 0.5;
        edge = l || r || u || d;
      }
      edges.at(x, y) = edge ? 1.0 : 0.0;
    }
  }
  return edges;
}

inline CoarseRender render_coarse(const TriangleMesh& mesh, const Camera& camera) {
  camera.validate();
  mesh.validate();
  CoarseRender out{Map2D(camera.width, camera.height, 1), Map2D(camera.width, camera.height, 1),
                   Map2D(camera.width, camera.height, 1)};
  const RayCaster caster(mesh, camera);
  for (std::size_t y = 0; y < camera.height; ++y) {
    for (std::size_t x = 0; x < camera.width; ++x) {
      if (auto hit = caster.cast(static_cast<double>(x), static_cast<double>(y))) {
        out.depth.at(x, y) = hit->depth;
        out.silhouette.at(x, y) = 1.0;
      }
    }
  }
  const double diag = mesh.vertices.empty() ? 0.0 : mesh.bounds().diagonal();
  out.edges = extract_edges(out.depth, out.silhouette, diag);
  return out;
}

}  // namespace voxsplat::geometry
