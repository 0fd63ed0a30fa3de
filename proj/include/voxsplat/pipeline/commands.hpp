#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxsplat/pipeline/train.hpp"

namespace voxsplat::pipeline {

struct VoxelizeResult {
  std::size_t occupied = 0;
  double voxel_length = 0.0;
  std::int32_t resolution = 0;
};

/// Writes voxels.json (grid frame plus sorted linear indices).
inline VoxelizeResult cmd_voxelize(const std::string& mesh_path, std::int32_t resolution, const std::string& out_dir) {
  if (resolution < 2 || resolution > 1024 || (resolution & (resolution - 1)) != 0) {
    throw ConfigError("voxelize: resolution must be a power of two in [2, 1024]");
  }
  const auto grid = geometry::voxelize_mesh(geometry::load_obj(mesh_path), resolution);
  std::filesystem::create_directories(out_dir);
  const nlohmann::json j = {{"resolution", grid.resolution()},
                            {"origin", {grid.origin().x(), grid.origin().y(), grid.origin().z()}},
                            {"voxel_length", grid.voxel_length()},
                            {"occupied", grid.size()},
                            {"linear", grid.linear_indices()}};
  write_text_atomic((std::filesystem::path(out_dir) / "voxels.json").string(), j.dump() + "\n");
  return {grid.size(), grid.voxel_length(), grid.resolution()};
}

/// Per camera: view_NNN_depth.gdfv (exact depth), view_NNN_silhouette.ppm and
/// view_NNN_edges.ppm.
inline std::size_t cmd_condition_export(const std::string& mesh_path, const std::string& cameras_path,
                                        const std::string& out_dir) {
  const auto mesh = geometry::load_obj(mesh_path);
  const auto cams = geometry::load_cameras(cameras_path);
  std::filesystem::create_directories(out_dir);
  for (std::size_t v = 0; v < cams.size(); ++v) {
    const auto id = static_cast<std::uint32_t>(v);
    const auto cr = geometry::render_coarse(mesh, cams[v]);
    features::save_feature_map(view_file(out_dir, id, "_depth.gdfv"), features::depth_as_feature_map(cr.depth, id));
    write_ppm(view_file(out_dir, id, "_silhouette.ppm"), cr.silhouette);
    write_ppm(view_file(out_dir, id, "_edges.ppm"), cr.edges);
  }
  return cams.size();
}

struct FilterOptions {
  std::string mesh, cameras, images, scores, out_dir;
  filter::Thresholds thresholds;
  std::size_t target_count = 12;
};

/// Scores every candidate view and writes selection.json.
inline filter::Selection cmd_filter(const FilterOptions& opt) {
  const auto mesh = geometry::load_obj(opt.mesh);
  const auto cams = geometry::load_cameras(opt.cameras);
  std::map<std::uint32_t, double> scores;
  std::vector<std::string> warnings;
  if (!opt.scores.empty()) {
    scores = filter::load_scores(opt.scores);
  } else {
    warnings.push_back("no semantic score file; every view is treated as semantic score 1.0");
  }
  std::vector<filter::CandidateView> cands;
  for (std::size_t v = 0; v < cams.size(); ++v) {
    const auto id = static_cast<std::uint32_t>(v);
    const auto path = view_file(opt.images, id, ".ppm");
    const auto img = read_ppm(path);
    if (img.width != cams[v].width || img.height != cams[v].height) {
      throw FormatError(path + ": image size does not match its camera");
    }
    filter::CandidateView c;
    c.view_id = id;
    if (const auto it = scores.find(id); it != scores.end()) c.semantic = it->second;
    c.geometric = filter::geometric_score(img, geometry::render_coarse(mesh, cams[v]).silhouette);
    cands.push_back(c);
  }
  auto sel = filter::select_views(cands, opt.thresholds, opt.target_count);
  sel.warnings.insert(sel.warnings.begin(), warnings.begin(), warnings.end());
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : cands) {
    per.push_back({{"view_id", c.view_id},
                   {"semantic", c.semantic ? nlohmann::json(*c.semantic) : nlohmann::json(nullptr)},
                   {"geometric", c.geometric}});
  }
  std::filesystem::create_directories(opt.out_dir);
  const nlohmann::json j = {{"selected", sel.selected},
                            {"candidates", per},
                            {"insufficient", sel.insufficient},
                            {"warnings", sel.warnings},
                            {"thresholds", {{"semantic", opt.thresholds.semantic}, {"geometric", opt.thresholds.geometric}}},
                            {"target_count", opt.target_count}};
  write_text_atomic((std::filesystem::path(opt.out_dir) / "selection.json").string(), j.dump(2) + "\n");
  return sel;
}

inline SynthDataset cmd_synthesize_testdata(const SynthOptions& opt, const std::string& out_dir) {
  auto ds = synthesize(opt);
  write_dataset(ds, opt, out_dir);
  return ds;
}

inline Model load_model(const std::string& checkpoint_path) {
  if (!std::filesystem::exists(checkpoint_path)) throw IoError("checkpoint not found: " + checkpoint_path);
  return model_from_tensors(ad::load_checkpoint(checkpoint_path));
}

/// Renders the checkpoint from every camera: view_NNN.ppm (color) and
/// view_NNN_depth.gdfv. Width/height of 0 keep the camera's own size.
inline std::size_t cmd_render(const std::string& checkpoint_path, const std::string& cameras_path, const std::string& out_dir,
                              std::size_t width = 0, std::size_t height = 0) {
  const auto model = load_model(checkpoint_path);
  const auto cams = geometry::load_cameras(cameras_path);
  const auto packed = packed_gaussians(model);
  std::filesystem::create_directories(out_dir);
  for (std::size_t v = 0; v < cams.size(); ++v) {
    const auto id = static_cast<std::uint32_t>(v);
    const auto cam = width && height ? cams[v].resized(width, height) : cams[v];
    ad::Tape tape;
    const auto img = render::to_images(render::render(tape, packed, model.keys, cam));
    write_ppm(view_file(out_dir, id, ".ppm"), img.color);
    features::save_feature_map(view_file(out_dir, id, "_depth.gdfv"), features::depth_as_feature_map(img.depth, id));
  }
  return cams.size();
}

inline std::size_t cmd_export_ply(const std::string& checkpoint_path, const std::string& out_path) {
  const auto model = load_model(checkpoint_path);
  const auto set = model.gaussian_set();
  decoder::export_ply(set, out_path);
  return set.size();
}

struct MetricsOptions {
  std::string checkpoint, mesh, cameras, references, selection;
  std::size_t width = 64, height = 64;
};

/// Scores the checkpoint against reference images; reference depth comes
/// from the coarse mesh.
inline Evaluation cmd_metrics(const MetricsOptions& opt) {
  const auto model = load_model(opt.checkpoint);
  const auto mesh = geometry::load_obj(opt.mesh);
  const auto views = load_views(mesh, geometry::load_cameras(opt.cameras), opt.references, opt.selection, opt.width, opt.height);
  return evaluate(packed_gaussians(model), model.keys, views);
}

}  // namespace voxsplat::pipeline
