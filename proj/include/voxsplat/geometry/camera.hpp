#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "voxsplat/core/binary_io.hpp"
#include "voxsplat/core/error.hpp"
#include "voxsplat/geometry/mesh.hpp"

namespace voxsplat::geometry {

using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

/// Pinhole camera, OpenCV convention: x right, y down, z forward.
/// Pixel (x, y) has its center at (u, v) = (x, y).
struct Camera {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  std::size_t width = 1, height = 1;
  Mat4 world_to_camera = Mat4::Identity();

  Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
  Vec3 to_camera(const Vec3& p) const { return rotation() * p + translation(); }
  Vec3 position() const { return -rotation().transpose() * translation(); }

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw InvalidArgument("camera focal lengths must be positive");
    if (width == 0 || height == 0) throw InvalidArgument("camera image size must be nonzero");
    if (!(cx >= 0.0 && cx < static_cast<double>(width) && cy >= 0.0 && cy < static_cast<double>(height))) {
      throw InvalidArgument("camera principal point lies outside the image");
    }
    if (!world_to_camera.allFinite()) throw InvalidArgument("camera pose is not finite");
    const Mat3 r = rotation();
    if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 || std::abs(r.determinant() - 1.0) > 1e-6) {
      throw InvalidArgument("camera rotation is not orthonormal with det +1");
    }
    const Eigen::RowVector4d last = world_to_camera.row(3);
    if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12) {
      throw InvalidArgument("camera pose last row must be (0, 0, 0, 1)");
    }
  }

  /// Same pose, intrinsics rescaled to a new image size.
  Camera resized(std::size_t new_width, std::size_t new_height) const {
    Camera c = *this;
    const double sx = static_cast<double>(new_width) / static_cast<double>(width);
    const double sy = static_cast<double>(new_height) / static_cast<double>(height);
    c.fx = fx * sx;
    c.fy = fy * sy;
    c.cx = (cx + 0.5) * sx - 0.5;
    c.cy = (cy + 0.5) * sy - 0.5;
    c.width = new_width;
    c.height = new_height;
    return c;
  }
};

inline std::optional<Projection> project_point(const Camera& camera, const Vec3& world) {
  const Vec3 p = camera.to_camera(world);
  if (p.z() <= 1e-8) return std::nullopt;
  return Projection{camera.cx + camera.fx * p.x() / p.z(), camera.cy + camera.fy * p.y() / p.z(), p.z()};
}

/// Inverse of project_point for a known camera-frame depth.
inline Vec3 unproject(const Camera& camera, double u, double v, double depth) {
  const Vec3 p((u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth);
  return camera.rotation().transpose() * (p - camera.translation());
}

/// World-space ray through pixel coordinate (u, v); direction has unit camera-z.
inline std::pair<Vec3, Vec3> pixel_ray(const Camera& camera, double u, double v) {
  const Vec3 dir_cam((u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0);
  return {camera.position(), camera.rotation().transpose() * dir_cam};
}

/// Builds a world-to-camera pose looking from `eye` at `target` with +Z world up.
inline Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ()) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-12) right = forward.cross(Vec3::UnitY());
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = -r * eye;
  return m;
}

struct OrbitIntrinsics {
  std::size_t width = 64;
  std::size_t height = 64;
  double fov_degrees = 50.0;
};

/// `count` cameras evenly spaced in azimuth (starting at 0 degrees, +X axis),
/// all looking at `center` with the principal point at the image center.
inline std::vector<Camera> orbit_trajectory(const Vec3& center, double radius, double elevation_degrees,
                                            std::size_t count, const OrbitIntrinsics& intr = {},
                                            double azimuth_offset_degrees = 0.0) {
  if (count == 0) throw InvalidArgument("orbit_trajectory: count must be >= 1");
  if (!(radius > 0.0)) throw InvalidArgument("orbit_trajectory: radius must be positive");
  const double deg = std::numbers::pi / 180.0;
  const double f = 0.5 * static_cast<double>(intr.width) / std::tan(0.5 * intr.fov_degrees * deg);
  std::vector<Camera> cams;
  cams.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double az = (azimuth_offset_degrees + 360.0 * static_cast<double>(k) / static_cast<double>(count)) * deg;
    const double el = elevation_degrees * deg;
    const Vec3 eye = center + radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    Camera c;
    c.fx = c.fy = f;
    c.width = intr.width;
    c.height = intr.height;
    c.cx = 0.5 * static_cast<double>(intr.width);
    c.cy = 0.5 * static_cast<double>(intr.height);
    c.world_to_camera = look_at(eye, center);
    cams.push_back(c);
  }
  return cams;
}

inline nlohmann::json camera_to_json(const Camera& c) {
  nlohmann::json j;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["width"] = c.width;
  j["height"] = c.height;
  std::vector<double> m(16);
  for (int r = 0; r < 4; ++r)
    for (int col = 0; col < 4; ++col) m[r * 4 + col] = c.world_to_camera(r, col);
  j["world_to_camera"] = m;
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera c;
  try {
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<std::size_t>();
    c.height = j.at("height").get<std::size_t>();
    const auto m = j.at("world_to_camera").get<std::vector<double>>();
    if (m.size() != 16) throw FormatError("world_to_camera must have 16 entries");
    for (int r = 0; r < 4; ++r)
      for (int col = 0; col < 4; ++col) c.world_to_camera(r, col) = m[r * 4 + col];
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("camera JSON: ") + e.what());
  }
  c.validate();
  return c;
}

inline std::vector<Camera> load_cameras(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
  if (!j.is_array()) throw FormatError(path + ": expected a JSON array of cameras");
  std::vector<Camera> cams;
  for (const auto& item : j) {
    try {
      cams.push_back(camera_from_json(item));
    } catch (const InvalidArgument& e) {
      throw FormatError(path + ": " + e.what());
    }
  }
  return cams;
}

inline void save_cameras(const std::string& path, const std::vector<Camera>& cams) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : cams) j.push_back(camera_to_json(c));
  io::write_text(path, j.dump(2) + "\n");
}

}  // namespace voxsplat::geometry
