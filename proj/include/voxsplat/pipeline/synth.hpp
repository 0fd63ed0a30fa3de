#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "voxsplat/core/image.hpp"
#include "voxsplat/core/rng.hpp"
#include "voxsplat/features/feature_map.hpp"
#include "voxsplat/filter/pseudo_gt.hpp"
#include "voxsplat/geometry/camera.hpp"
#include "voxsplat/geometry/coarse_render.hpp"
#include "voxsplat/geometry/mesh.hpp"

namespace voxsplat::pipeline {

using geometry::Vec3;

enum class Scene { kCube, kTwoRooms, kTerrace };

inline Scene parse_scene(const std::string& name) {
  if (name == "cube") return Scene::kCube;
  if (name == "two_rooms") return Scene::kTwoRooms;
  if (name == "terrace") return Scene::kTerrace;
  throw InvalidArgument("unknown scene '" + name + "' (expected cube, two_rooms or terrace)");
}

inline std::string scene_name(Scene s) {
  switch (s) {
    case Scene::kCube: return "cube";
    case Scene::kTwoRooms: return "two_rooms";
    case Scene::kTerrace: return "terrace";
  }
  return "";
}

/// Mesh with a material id per triangle.
struct TexturedMesh {
  geometry::TriangleMesh mesh;
  std::vector<int> material;
};

/// Columns of height h over a regular cell grid: top faces plus the vertical
/// faces between neighbors of different height. No bottom or hidden faces.
struct Heightfield {
  double x0 = 0.0, y0 = 0.0, cell = 0.25;
  int nx = 0, ny = 0;
  std::vector<double> height;
  std::vector<int> top_material;
  int side_material = 0;

  double h(int i, int j) const { return (i < 0 || j < 0 || i >= nx || j >= ny) ? 0.0 : height[static_cast<std::size_t>(j * nx + i)]; }

  TexturedMesh build() const {
    TexturedMesh out;
    auto& m = out.mesh;
    const auto quad = [&](const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d, int mat) {
      const auto base = static_cast<std::uint32_t>(m.vertices.size());
      m.vertices.insert(m.vertices.end(), {a, b, c, d});
      m.triangles.push_back({base, base + 1, base + 2});
      m.triangles.push_back({base, base + 2, base + 3});
      out.material.push_back(mat);
      out.material.push_back(mat);
    };
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const double xa = x0 + i * cell, xb = xa + cell, ya = y0 + j * cell, yb = ya + cell;
        const double z = h(i, j);
        quad({xa, ya, z}, {xb, ya, z}, {xb, yb, z}, {xa, yb, z}, top_material[static_cast<std::size_t>(j * nx + i)]);
        // Each column emits the vertical faces toward lower neighbors (outside counts as 0).
        if (const double n = h(i + 1, j); z > n) quad({xb, ya, n}, {xb, yb, n}, {xb, yb, z}, {xb, ya, z}, side_material);
        if (const double n = h(i - 1, j); z > n) quad({xa, yb, n}, {xa, ya, n}, {xa, ya, z}, {xa, yb, z}, side_material);
        if (const double n = h(i, j + 1); z > n) quad({xb, yb, n}, {xa, yb, n}, {xa, yb, z}, {xb, yb, z}, side_material);
        if (const double n = h(i, j - 1); z > n) quad({xa, ya, n}, {xb, ya, n}, {xb, ya, z}, {xa, ya, z}, side_material);
      }
    }
    return out;
  }
};

inline Heightfield scene_heightfield(Scene scene) {
  Heightfield hf;
  hf.cell = 0.25;
  switch (scene) {
    case Scene::kCube: {
      hf.nx = hf.ny = 16;
      hf.x0 = hf.y0 = -2.0;
      hf.height.assign(256, 0.0);
      hf.top_material.assign(256, 0);
      for (int j = 6; j < 10; ++j)
        for (int i = 6; i < 10; ++i) {
          hf.height[static_cast<std::size_t>(j * 16 + i)] = 1.0;
          hf.top_material[static_cast<std::size_t>(j * 16 + i)] = 1;
        }
      hf.side_material = 2;
      break;
    }
    case Scene::kTwoRooms: {
      hf.nx = 16;
      hf.ny = 10;
      hf.x0 = -2.0;
      hf.y0 = -1.25;
      hf.height.assign(160, 0.0);
      hf.top_material.assign(160, 0);
      for (int j = 0; j < 10; ++j)
        for (int i = 0; i < 16; ++i) {
          const auto k = static_cast<std::size_t>(j * 16 + i);
          const bool wall = i == 0 || i == 15 || j == 0 || j == 9 || (i == 8 && (j < 4 || j > 5));
          hf.height[k] = wall ? 0.75 : 0.0;
          hf.top_material[k] = wall ? 2 : (i < 8 ? 0 : 3);
        }
      hf.side_material = 4;
      break;
    }
    case Scene::kTerrace: {
      hf.nx = 16;
      hf.ny = 12;
      hf.x0 = -2.0;
      hf.y0 = -1.5;
      hf.height.assign(192, 0.0);
      hf.top_material.assign(192, 0);
      for (int j = 0; j < 12; ++j)
        for (int i = 0; i < 16; ++i) {
          const auto k = static_cast<std::size_t>(j * 16 + i);
          const int level = j / 3;
          hf.height[k] = 0.35 * level;
          hf.top_material[k] = level == 0 ? 0 : level;
        }
      for (int i : {3, 4}) {
        hf.height[static_cast<std::size_t>(4 * 16 + i)] = 0.6;
        hf.top_material[static_cast<std::size_t>(4 * 16 + i)] = 4;
      }
      hf.height[static_cast<std::size_t>(7 * 16 + 11)] = 1.0;
      hf.top_material[static_cast<std::size_t>(7 * 16 + 11)] = 4;
      hf.side_material = 5;
      break;
    }
  }
  return hf;
}

inline TexturedMesh build_scene(Scene scene) { return scene_heightfield(scene).build(); }

/// Procedural albedo: checkers, stripes and bricks; no near-white colors.
inline Vec3 albedo(int material, const Vec3& p) {
  const auto checker = [](double a, double b, double period) {
    return (static_cast<long>(std::floor(a / period)) + static_cast<long>(std::floor(b / period))) % 2 != 0;
  };
  const auto stripe = [](double a, double period) { return static_cast<long>(std::floor(a / period)) % 2 != 0; };
  switch (material) {
    case 0: return checker(p.x(), p.y(), 0.5) ? Vec3(0.62, 0.48, 0.30) : Vec3(0.32, 0.25, 0.18);
    case 1: return stripe(p.x() + p.y(), 0.35) ? Vec3(0.20, 0.45, 0.70) : Vec3(0.75, 0.55, 0.15);
    case 2: return stripe(p.x(), 0.4) ? Vec3(0.30, 0.55, 0.28) : Vec3(0.15, 0.32, 0.16);
    case 3: return stripe(p.y(), 0.3) ? Vec3(0.70, 0.30, 0.30) : Vec3(0.40, 0.15, 0.18);
    case 4: return checker(p.x(), p.y(), 0.125) ? Vec3(0.55, 0.20, 0.55) : Vec3(0.80, 0.65, 0.25);
    default: {
      const bool row = stripe(p.z(), 0.12);
      const double shift = row ? 0.125 : 0.0;
      const bool joint = std::fmod(std::abs(p.x() + p.y() + shift), 0.25) < 0.04;
      return joint ? Vec3(0.35, 0.33, 0.30) : Vec3(0.62, 0.32, 0.22);
    }
  }
}

inline Vec3 shade(const Vec3& color, const Vec3& normal) {
  const Vec3 light = Vec3(0.3, 0.5, 0.8).normalized();
  return color * (0.6 + 0.4 * std::max(0.0, normal.dot(light)));
}

/// Per-view corruption emulating inconsistent pseudo-GT.
struct ViewNoise {
  double hue_degrees = 0.0;
  double gain = 1.0;
  double warp_pixels = 0.0;
  double phase_u = 0.0, phase_v = 0.0;
};

inline ViewNoise sample_view_noise(double level, std::uint64_t seed, std::uint32_t view) {
  ViewNoise n;
  if (level <= 0.0) return n;
  Rng rng(splitmix64(seed * 1000003ull + view));
  n.hue_degrees = level * 180.0 * rng.uniform(-1.0, 1.0);
  n.gain = 1.0 + 0.5 * level * rng.uniform(-1.0, 1.0);
  n.warp_pixels = 8.0 * level;
  n.phase_u = 2.0 * std::numbers::pi * rng.uniform();
  n.phase_v = 2.0 * std::numbers::pi * rng.uniform();
  return n;
}

inline Vec3 rotate_hue(const Vec3& c, double degrees) {
  if (degrees == 0.0) return c;
  const double t = degrees * std::numbers::pi / 180.0;
  const Vec3 k = Vec3::Ones().normalized();
  return c * std::cos(t) + k.cross(c) * std::sin(t) + k * k.dot(c) * (1.0 - std::cos(t));
}

/// Ray-traced view of the textured scene with 2x2 supersampling and a white background.
inline Image render_textured(const TexturedMesh& scene, const geometry::Camera& cam, const ViewNoise& noise = {}) {
  const geometry::RayCaster caster(scene.mesh, cam);
  Image img(cam.width, cam.height, 3);
  const double W = static_cast<double>(cam.width), H = static_cast<double>(cam.height);
  for (std::size_t y = 0; y < cam.height; ++y) {
    for (std::size_t x = 0; x < cam.width; ++x) {
      Vec3 acc = Vec3::Zero();
      for (int s = 0; s < 4; ++s) {
        double u = static_cast<double>(x) - 0.25 + 0.5 * (s % 2);
        double v = static_cast<double>(y) - 0.25 + 0.5 * (s / 2);
        if (noise.warp_pixels != 0.0) {
          const double du = noise.warp_pixels * std::sin(2.0 * std::numbers::pi * 1.5 * v / H + noise.phase_u);
          const double dv = noise.warp_pixels * std::sin(2.0 * std::numbers::pi * 1.5 * u / W + noise.phase_v);
          u += du;
          v += dv;
        }
        const auto hit = caster.cast(u, v);
        if (!hit) {
          acc += Vec3::Ones();
          continue;
        }
        const auto tri = scene.mesh.corners(hit->triangle);
        Vec3 n = (tri[1] - tri[0]).cross(tri[2] - tri[0]).normalized();
        if (n.dot(hit->point - cam.position()) > 0.0) n = -n;
        Vec3 c = shade(albedo(scene.material[hit->triangle], hit->point), n);
        c = rotate_hue(c, noise.hue_degrees) * noise.gain;
        acc += c.cwiseMax(0.0).cwiseMin(1.0);
      }
      for (int c = 0; c < 3; ++c) img.at(x, y, static_cast<std::size_t>(c)) = acc[c] / 4.0;
    }
  }
  return img;
}

/// Fixed orthonormal projection of 24 histogram bins to `dim` features.
inline Eigen::MatrixXd feature_projection(std::size_t dim, std::uint64_t seed = 0xFEA7u) {
  Rng rng(seed);
  const std::size_t in = 24;
  Eigen::MatrixXd g(static_cast<Eigen::Index>(std::max(dim, in)), static_cast<Eigen::Index>(in));
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.normal();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), static_cast<Eigen::Index>(in));
  return q.topRows(static_cast<Eigen::Index>(dim));
}

/// Soft per-channel color histograms (8 bins) over the image region of each
/// feature cell, projected to `dim` dimensions.
inline features::FeatureMap histogram_features(const Image& img, std::uint32_t view_id, std::size_t grid, std::size_t dim) {
  features::FeatureMap fm;
  fm.view_id = view_id;
  fm.feature_height = fm.feature_width = grid;
  fm.dim = dim;
  fm.image_height = img.height;
  fm.image_width = img.width;
  fm.values.assign(grid * grid * dim, 0.0);
  const Eigen::MatrixXd proj = feature_projection(dim);
  for (std::size_t fy = 0; fy < grid; ++fy) {
    for (std::size_t fx = 0; fx < grid; ++fx) {
      Eigen::VectorXd hist = Eigen::VectorXd::Zero(24);
      const std::size_t x0 = fx * img.width / grid, x1 = (fx + 1) * img.width / grid;
      const std::size_t y0 = fy * img.height / grid, y1 = (fy + 1) * img.height / grid;
      double count = 0.0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
          count += 1.0;
          for (std::size_t c = 0; c < 3; ++c) {
            const double v = img.at(x, y, c);
            for (int b = 0; b < 8; ++b) {
              const double w = std::max(0.0, 1.0 - std::abs(v - (b + 0.5) / 8.0) * 8.0);
              hist[static_cast<Eigen::Index>(c * 8 + static_cast<std::size_t>(b))] += w;
            }
          }
        }
      if (count > 0.0) hist /= count;
      const Eigen::VectorXd f = 4.0 * proj * hist;
      for (std::size_t d = 0; d < dim; ++d) fm.values[(fy * grid + fx) * dim + d] = f[static_cast<Eigen::Index>(d)];
    }
  }
  return fm;
}

struct SynthOptions {
  Scene scene = Scene::kTerrace;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::size_t views = 12;
  std::size_t image_size = 64;
  std::size_t feature_grid = 16;
  std::size_t feature_dim = 32;
  double radius = 6.5;
  double elevation = 35.0;
};

inline std::string view_name(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03zu", v);
  return buf;
}

struct SynthDataset {
  TexturedMesh scene;
  std::vector<geometry::Camera> cameras, heldout_cameras;
  std::vector<Image> images, clean, heldout;
  std::vector<features::FeatureMap> features;
  std::map<std::uint32_t, double> scores;
};

inline SynthDataset synthesize(const SynthOptions& opt) {
  SynthDataset ds;
  ds.scene = build_scene(opt.scene);
  const Vec3 center = ds.scene.mesh.bounds().center();
  const geometry::OrbitIntrinsics intr{opt.image_size, opt.image_size, 50.0};
  ds.cameras = geometry::orbit_trajectory(center, opt.radius, opt.elevation, opt.views, intr);
  ds.heldout_cameras =
      geometry::orbit_trajectory(center, opt.radius, opt.elevation, opt.views, intr, 180.0 / static_cast<double>(opt.views));
  Rng score_rng(splitmix64(opt.seed ^ 0x5C0E5ull));
  for (std::size_t v = 0; v < opt.views; ++v) {
    const auto id = static_cast<std::uint32_t>(v);
    ds.clean.push_back(render_textured(ds.scene, ds.cameras[v]));
    ds.images.push_back(opt.noise > 0.0 ? render_textured(ds.scene, ds.cameras[v], sample_view_noise(opt.noise, opt.seed, id))
                                        : ds.clean.back());
    ds.features.push_back(histogram_features(ds.images.back(), id, opt.feature_grid, opt.feature_dim));
    ds.scores[id] = 0.95 - 0.3 * opt.noise * score_rng.uniform();
    ds.heldout.push_back(render_textured(ds.scene, ds.heldout_cameras[v]));
  }
  return ds;
}

/// Writes the dataset plus a ready-to-train `dataset.cfg` with absolute paths.
inline void write_dataset(const SynthDataset& ds, const SynthOptions& opt, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const fs::path root = fs::absolute(out_dir);
  for (const char* sub : {"images", "features", "clean", "heldout"}) fs::create_directories(root / sub);
  geometry::save_obj((root / "mesh.obj").string(), ds.scene.mesh);
  geometry::save_cameras((root / "cameras.json").string(), ds.cameras);
  geometry::save_cameras((root / "heldout_cameras.json").string(), ds.heldout_cameras);
  for (std::size_t v = 0; v < ds.images.size(); ++v) {
    write_ppm((root / "images" / (view_name(v) + ".ppm")).string(), ds.images[v]);
    write_ppm((root / "clean" / (view_name(v) + ".ppm")).string(), ds.clean[v]);
    write_ppm((root / "heldout" / (view_name(v) + ".ppm")).string(), ds.heldout[v]);
    features::save_feature_map((root / "features" / (view_name(v) + ".gdfv")).string(), ds.features[v]);
  }
  filter::save_scores((root / "scores.json").string(), ds.scores);
  const nlohmann::json meta = {{"scene", scene_name(opt.scene)}, {"noise", opt.noise},       {"seed", opt.seed},
                               {"views", opt.views},              {"image_size", opt.image_size},
                               {"feature_grid", opt.feature_grid}, {"feature_dim", opt.feature_dim}};
  io::write_text((root / "dataset.json").string(), meta.dump(2) + "\n");
  std::string cfg;
  cfg += "mesh = " + (root / "mesh.obj").string() + "\n";
  cfg += "cameras = " + (root / "cameras.json").string() + "\n";
  cfg += "images = " + (root / "images").string() + "\n";
  cfg += "features = " + (root / "features").string() + "\n";
  cfg += "scores = " + (root / "scores.json").string() + "\n";
  cfg += "render_width = " + std::to_string(opt.image_size) + "\n";
  cfg += "render_height = " + std::to_string(opt.image_size) + "\n";
  io::write_text((root / "dataset.cfg").string(), cfg);
}

}  // namespace voxsplat::pipeline
