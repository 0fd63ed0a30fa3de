#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "voxsplat/core/error.hpp"

namespace voxsplat::geometry {

using Vec3 = Eigen::Vector3d;
using Triangle = std::array<std::uint32_t, 3>;

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  bool valid() const { return (max.array() >= min.array()).all(); }
  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
  double diagonal() const { return extent().norm(); }
  bool contains(const Vec3& p) const { return (p.array() >= min.array()).all() && (p.array() <= max.array()).all(); }

  /// Grows every side by `fraction` of the largest extent.
  Aabb inflated(double fraction) const {
    const double pad = fraction * extent().maxCoeff();
    return {min.array() - pad, max.array() + pad};
  }
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  std::array<Vec3, 3> corners(std::size_t t) const {
    const auto& tri = triangles[t];
    return {vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]};
  }

  Aabb bounds() const {
    Aabb box;
    for (const auto& v : vertices) box.extend(v);
    return box;
  }

  /// Throws on out-of-range indices or non-finite coordinates.
  void validate() const {
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      if (!vertices[i].allFinite()) throw InvalidArgument("mesh vertex " + std::to_string(i) + " is not finite");
    }
    for (std::size_t t = 0; t < triangles.size(); ++t) {
      for (auto idx : triangles[t]) {
        if (idx >= vertices.size()) {
          throw InvalidArgument("triangle " + std::to_string(t) + " references vertex " + std::to_string(idx) +
                                " of " + std::to_string(vertices.size()));
        }
      }
    }
  }

  /// Appends another mesh, offsetting its indices.
  void append(const TriangleMesh& other) {
    const auto base = static_cast<std::uint32_t>(vertices.size());
    vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
    for (auto tri : other.triangles) triangles.push_back({tri[0] + base, tri[1] + base, tri[2] + base});
  }
};

/// Parses the `v x y z` / `f a b c` OBJ subset. Faces with more than three
/// vertices are rejected; texture/normal suffixes (`a/b/c`) are ignored.
inline TriangleMesh parse_obj(const std::string& text, const std::string& source = "<obj>") {
  TriangleMesh mesh;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    auto where = [&] { return source + ":" + std::to_string(line_no); };
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) throw FormatError(where() + ": malformed vertex");
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<std::int64_t> idx;
      std::string tok;
      while (ls >> tok) {
        try {
          idx.push_back(std::stoll(tok.substr(0, tok.find('/'))));
        } catch (const std::exception&) {
          throw FormatError(where() + ": malformed face index '" + tok + "'");
        }
      }
      if (idx.size() != 3) throw FormatError(where() + ": only triangular faces are supported");
      Triangle tri{};
      for (int k = 0; k < 3; ++k) {
        if (idx[k] < 1) throw FormatError(where() + ": face indices are 1-based");
        tri[k] = static_cast<std::uint32_t>(idx[k] - 1);
      }
      mesh.triangles.push_back(tri);
    } else if (tag == "vn" || tag == "vt" || tag == "o" || tag == "g" || tag == "s" || tag == "usemtl" ||
               tag == "mtllib") {
      continue;
    } else {
      throw FormatError(where() + ": unsupported OBJ directive '" + tag + "'");
    }
  }
  try {
    mesh.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(source + ": " + e.what());
  }
  return mesh;
}

inline TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_obj(ss.str(), path);
}

inline void save_obj(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace voxsplat::geometry
