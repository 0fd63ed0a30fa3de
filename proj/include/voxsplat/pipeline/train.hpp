#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxsplat/autodiff/adam.hpp"
#include "voxsplat/autodiff/checkpoint.hpp"
#include "voxsplat/decoder/ply.hpp"
#include "voxsplat/features/feature_map.hpp"
#include "voxsplat/filter/pseudo_gt.hpp"
#include "voxsplat/geometry/camera.hpp"
#include "voxsplat/geometry/coarse_render.hpp"
#include "voxsplat/geometry/mesh.hpp"
#include "voxsplat/geometry/voxel_grid.hpp"
#include "voxsplat/objectives/discriminator.hpp"
#include "voxsplat/objectives/losses.hpp"
#include "voxsplat/objectives/metrics.hpp"
#include "voxsplat/objectives/ssim.hpp"
#include "voxsplat/pipeline/config.hpp"
#include "voxsplat/pipeline/manifest.hpp"
#include "voxsplat/pipeline/model.hpp"
#include "voxsplat/pipeline/synth.hpp"
#include "voxsplat/render/splat.hpp"

namespace voxsplat::pipeline {

inline std::string view_file(const std::string& dir, std::uint32_t id, const std::string& ext) {
  return (std::filesystem::path(dir) / (view_name(id) + ext)).string();
}

inline std::string checkpoint_name(std::size_t iter) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06zu.gdck", iter);
  return buf;
}

/// Brings an image to the render resolution by integer box downsampling.
inline Image fit_image(const Image& img, std::size_t width, std::size_t height, const std::string& source) {
  if (img.width == width && img.height == height) return img;
  if (img.width % width == 0 && img.height % height == 0 && img.width / width == img.height / height) {
    return box_downsample(img, img.width / width);
  }
  throw FormatError(source + ": " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                    " cannot be reduced to " + std::to_string(width) + "x" + std::to_string(height));
}

/// Selection file: a JSON array of view ids, or an object with "selected".
inline std::vector<std::uint32_t> load_selection(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  if (j.is_object() && j.contains("selected")) j = j["selected"];
  if (!j.is_array()) throw FormatError(path + ": expected an array of view ids");
  std::vector<std::uint32_t> ids;
  for (const auto& v : j) {
    if (!v.is_number_unsigned()) throw FormatError(path + ": view ids must be non-negative integers");
    ids.push_back(v.get<std::uint32_t>());
  }
  return ids;
}

struct TrainingView {
  std::uint32_t id = 0;
  geometry::Camera camera;  // at render resolution
  Image target;
  Map2D reference_depth;
};

struct TrainingData {
  geometry::TriangleMesh mesh;
  std::vector<geometry::Camera> cameras;  // every camera of the input file
  std::vector<TrainingView> views;        // selected views
  std::vector<features::FeatureMap> features;
  std::vector<std::string> warnings;
};

/// Loads the selected views (all cameras when no selection file is set) at
/// render resolution with their coarse reference depth.
inline std::vector<TrainingView> load_views(const geometry::TriangleMesh& mesh, const std::vector<geometry::Camera>& cameras,
                                            const std::string& images, const std::string& selection, std::size_t width,
                                            std::size_t height) {
  std::vector<std::uint32_t> ids;
  if (!selection.empty()) {
    ids = load_selection(selection);
  } else {
    for (std::size_t v = 0; v < cameras.size(); ++v) ids.push_back(static_cast<std::uint32_t>(v));
  }
  if (ids.empty()) throw FormatError("no views to load");
  std::vector<TrainingView> views;
  for (auto id : ids) {
    if (id >= cameras.size()) {
      throw FormatError("view " + std::to_string(id) + " has no camera (" + std::to_string(cameras.size()) + " cameras)");
    }
    TrainingView tv;
    tv.id = id;
    tv.camera = cameras[id].resized(width, height);
    const auto path = view_file(images, id, ".ppm");
    tv.target = fit_image(read_ppm(path), width, height, path);
    tv.reference_depth = geometry::render_coarse(mesh, tv.camera).depth;
    views.push_back(std::move(tv));
  }
  return views;
}

inline TrainingData load_training_data(const RunConfig& cfg) {
  for (const auto& [name, value] : {std::pair<const char*, const std::string&>{"mesh", cfg.mesh},
                                    {"cameras", cfg.cameras},
                                    {"images", cfg.images},
                                    {"features", cfg.features}}) {
    if (value.empty()) throw ConfigError(std::string("train: '") + name + "' is not set");
  }
  TrainingData data;
  data.mesh = geometry::load_obj(cfg.mesh);
  data.cameras = geometry::load_cameras(cfg.cameras);
  data.views = load_views(data.mesh, data.cameras, cfg.images, cfg.selection, cfg.render_width, cfg.render_height);
  for (const auto& v : data.views) data.features.push_back(features::load_feature_map(view_file(cfg.features, v.id, ".gdfv")));
  return data;
}

/// Voxelizes the mesh and aggregates the selected views' features.
inline features::FeatureVolume build_volume(const RunConfig& cfg, const TrainingData& data) {
  auto grid = std::make_shared<const geometry::VoxelGrid>(geometry::voxelize_mesh(data.mesh, cfg.grid_resolution));
  std::vector<geometry::Camera> cams;
  std::vector<Map2D> depths;
  for (const auto& v : data.views) {
    cams.push_back(data.cameras[v.id]);
    depths.push_back(geometry::render_coarse(data.mesh, cams.back()).depth);
  }
  return features::backproject(grid, data.features, cams, depths);
}

inline Model build_model(const RunConfig& cfg, const TrainingData& data) {
  auto volume = build_volume(cfg, data);
  decoder::DecoderConfig hc;
  hc.feature_dim = volume.dim();
  hc.hidden = cfg.hidden;
  hc.neighbor_mix = cfg.neighbor_mix;
  return Model(std::move(volume), hc, cfg.seed, cfg.rho, cfg.use_residuals);
}

struct IterationLog {
  std::size_t iter = 0;
  double l_rec = 0.0;
  std::optional<double> l_depth, l_gan_g, l_gan_d;
  double psnr = 0.0, ssim = 0.0, depth_psnr = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"iter", iter}, {"l_rec", l_rec}};
    if (l_depth) j["l_depth"] = *l_depth;
    if (l_gan_g) j["l_gan_g"] = *l_gan_g;
    if (l_gan_d) j["l_gan_d"] = *l_gan_d;
    j["psnr"] = psnr;
    j["ssim"] = ssim;
    j["depth_psnr"] = depth_psnr;
    return j;
  }
};

struct ViewMetrics {
  std::uint32_t id = 0;
  objectives::ImageMetrics metrics;
  double sharpness = 0.0;
};

struct Evaluation {
  std::vector<ViewMetrics> views;
  double psnr = 0.0, ssim = 0.0, depth_psnr = 0.0, sharpness = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& v : views) {
      per.push_back({{"view_id", v.id},
                     {"psnr", v.metrics.psnr},
                     {"ssim", v.metrics.ssim},
                     {"depth_psnr", v.metrics.depth_psnr},
                     {"sharpness", v.sharpness}});
    }
    return {{"psnr", psnr}, {"ssim", ssim}, {"depth_psnr", depth_psnr}, {"sharpness", sharpness}, {"views", per}};
  }
};

/// Renders every view and scores it against its reference image and depth.
/// `on_render` receives each rendering, e.g. to save it.
inline Evaluation evaluate(const ad::Tensor& packed, const std::vector<std::uint64_t>& keys,
                           const std::vector<TrainingView>& views, const render::RenderSettings& settings = {},
                           const std::function<void(const TrainingView&, const render::RenderImages&)>& on_render = {}) {
  Evaluation ev;
  for (const auto& v : views) {
    ad::Tape tape;
    const auto img = render::to_images(render::render(tape, packed.detach(), keys, v.camera, settings));
    if (on_render) on_render(v, img);
    ViewMetrics vm;
    vm.id = v.id;
    vm.metrics = objectives::metrics(img.color, v.target, img.depth, v.reference_depth);
    vm.sharpness = objectives::laplacian_sharpness(img.color);
    ev.psnr += vm.metrics.psnr;
    ev.ssim += vm.metrics.ssim;
    ev.depth_psnr += vm.metrics.depth_psnr;
    ev.sharpness += vm.sharpness;
    ev.views.push_back(vm);
  }
  if (!views.empty()) {
    const double n = static_cast<double>(views.size());
    ev.psnr /= n;
    ev.ssim /= n;
    ev.depth_psnr /= n;
    ev.sharpness /= n;
  }
  return ev;
}

inline ad::Tensor packed_gaussians(const Model& model) {
  ad::Tape tape;
  return model.gaussians(tape).detach();
}

/// Two-optimizer training state: the consistency optimizer owns the decoder
/// head and the feature residuals, the GAN optimizer owns the discriminator.
class Trainer {
 public:
  Trainer(RunConfig cfg, TrainingData data, Model model)
      : cfg_(std::move(cfg)),
        data_(std::move(data)),
        model_(std::move(model)),
        consistency_(model_.consistency_parameters(), ad::AdamOptions{cfg_.lr_consistency, 0.9, 0.999, 1e-8}),
        gan_(model_.disc->parameters(), ad::AdamOptions{cfg_.lr_gan, 0.9, 0.999, 1e-8}) {
    for (const auto& v : data_.views) targets_.push_back(objectives::image_tensor(v.target));
  }

  std::size_t iteration() const { return iteration_; }
  const RunConfig& config() const { return cfg_; }
  const TrainingData& data() const { return data_; }
  const Model& model() const { return model_; }
  const ad::Adam& consistency_optimizer() const { return consistency_; }
  const ad::Adam& gan_optimizer() const { return gan_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  bool gan_active(std::size_t iter) const { return cfg_.use_gan && iter >= cfg_.weights.gan_start_iter; }

  /// View indices (into data().views) of the batch for iteration `iter`.
  std::vector<std::size_t> batch(std::size_t iter) const {
    std::vector<std::size_t> b;
    for (std::size_t k = 0; k < cfg_.batch_size; ++k) b.push_back(((iter - 1) * cfg_.batch_size + k) % data_.views.size());
    return b;
  }

  IterationLog step() {
    try {
      return advance();
    } catch (const NumericalError& e) {
      const std::string what = e.what();
      if (what.rfind("iteration ", 0) == 0) throw;
      throw NumericalError("iteration " + std::to_string(iteration_) + ": " + what);
    }
  }

  ad::NamedTensors checkpoint() const {
    auto out = model_tensors(model_);
    out["meta.iteration"] = ad::Tensor::from({1}, {static_cast<double>(iteration_)});
    detail::save_adam(out, "adam.consistency", consistency_);
    detail::save_adam(out, "adam.gan", gan_);
    return out;
  }

  /// Restores optimizer state and the iteration counter; the model itself is
  /// rebuilt by `resume`.
  void restore(const ad::NamedTensors& ckpt) {
    detail::load_adam(ckpt, "adam.consistency", consistency_);
    detail::load_adam(ckpt, "adam.gan", gan_);
    iteration_ = static_cast<std::size_t>(detail::require(ckpt, "meta.iteration").item());
  }

  const render::RenderSettings& settings() const { return settings_; }

 private:
  IterationLog advance() {
    const std::size_t iter = ++iteration_;
    const auto views = batch(iter);
    const double n = static_cast<double>(views.size());
    IterationLog log;
    log.iter = iter;

    ad::Tape tape;
    const auto packed = model_.gaussians(tape);
    std::vector<ad::Tensor> colors;
    ad::Tensor rec, depth;
    bool no_depth_pixels = false;
    for (auto vi : views) {
      const auto& view = data_.views[vi];
      const auto out = render::render(tape, packed, model_.keys, view.camera, settings_);
      const auto color = ad::slice(tape, out, 2, 0, 3);
      colors.push_back(color);
      const auto parts = objectives::reconstruction_loss(tape, color, targets_[vi], cfg_.weights);
      rec = rec.defined() ? ad::add(tape, rec, parts.total) : parts.total;
      const auto img = render::to_images(out);
      if (cfg_.use_depth) {
        const auto d = objectives::depth_loss(tape, ad::slice(tape, out, 2, 3, 4), img.alpha.data, view.reference_depth,
                                              cfg_.weights);
        no_depth_pixels = no_depth_pixels || d.no_valid_pixels;
        depth = depth.defined() ? ad::add(tape, depth, d.loss) : d.loss;
      }
      const auto m = objectives::metrics(img.color, view.target, img.depth, view.reference_depth);
      log.psnr += m.psnr / n;
      log.ssim += m.ssim / n;
      log.depth_psnr += m.depth_psnr / n;
    }
    rec = ad::scale(tape, rec, 1.0 / n);
    log.l_rec = rec.item();
    require_finite(iter, "l_rec", log.l_rec);
    if (depth.defined()) {
      depth = ad::scale(tape, depth, 1.0 / n);
      log.l_depth = depth.item();
      require_finite(iter, "l_depth", *log.l_depth);
      if (no_depth_pixels) warn_once("no valid depth pixels in some views; their depth term is 0");
    }

    ad::Tensor gan_g;
    if (gan_active(iter)) {
      // Discriminator step first, on the current batch with detached fakes.
      ad::Tape dtape;
      std::vector<ad::Tensor> reals, fakes;
      for (std::size_t k = 0; k < views.size(); ++k) {
        reals.push_back(targets_[views[k]]);
        fakes.push_back(colors[k].detach());
      }
      const auto l_d = objectives::gan_discriminator_loss(dtape, *model_.disc, objectives::to_nchw(dtape, reals),
                                                          objectives::to_nchw(dtape, fakes));
      log.l_gan_d = l_d.item();
      require_finite(iter, "l_gan_d", *log.l_gan_d);
      dtape.backward(l_d);
      gan_.step();

      gan_g = objectives::gan_generator_loss(tape, *model_.disc, objectives::to_nchw(tape, colors));
      log.l_gan_g = gan_g.item();
      require_finite(iter, "l_gan_g", *log.l_gan_g);
    }

    const auto total = objectives::total_generator_loss(tape, rec, depth, gan_g, cfg_.weights, iter);
    require_finite(iter, "l_total", total.item());
    tape.backward(total);
    consistency_.step();
    return log;
  }

  static void require_finite(std::size_t iter, const char* term, double v) {
    if (!std::isfinite(v)) {
      throw NumericalError("iteration " + std::to_string(iter) + ": " + term + " is not finite (" + std::to_string(v) + ")");
    }
  }

  void warn_once(const std::string& msg) {
    if (std::find(warnings_.begin(), warnings_.end(), msg) == warnings_.end()) warnings_.push_back(msg);
  }

  RunConfig cfg_;
  TrainingData data_;
  Model model_;
  ad::Adam consistency_;
  ad::Adam gan_;
  render::RenderSettings settings_;
  std::vector<ad::Tensor> targets_;
  std::vector<std::string> warnings_;
  std::size_t iteration_ = 0;
};

/// Rebuilds a trainer from a checkpoint. Model-shape settings must agree
/// with the checkpoint.
inline Trainer resume_trainer(const RunConfig& cfg, TrainingData data, const std::string& checkpoint_path) {
  const auto ckpt = ad::load_checkpoint(checkpoint_path);
  Model model = model_from_tensors(ckpt);
  const auto& hc = model.head->config();
  if (hc.hidden != cfg.hidden || hc.neighbor_mix != cfg.neighbor_mix || model.rho != cfg.rho ||
      model.use_residuals != cfg.use_residuals || model.grid->resolution() != cfg.grid_resolution) {
    throw ConfigError("resume: checkpoint " + checkpoint_path +
                      " was trained with different hidden/neighbor_mix/rho/use_residuals/grid_resolution");
  }
  if (model.volume.view_counts.size() != model.grid->size()) throw FormatError("resume: corrupt feature volume");
  Trainer t(cfg, std::move(data), std::move(model));
  t.restore(ckpt);
  if (t.iteration() >= cfg.total_iters) {
    throw ConfigError("resume: checkpoint is at iteration " + std::to_string(t.iteration()) + ", total_iters is " +
                      std::to_string(cfg.total_iters));
  }
  return t;
}

struct TrainOptions {
  std::string resume;  // checkpoint path, optional
  std::function<void(const IterationLog&)> on_iteration;
  std::function<void(const std::string&)> on_warning;
};

struct TrainResult {
  nlohmann::json manifest;
  std::vector<IterationLog> log;
  Evaluation final_metrics;
};

/// Full training run: loads inputs, trains, writes checkpoints, the final
/// checkpoint, PLY, training-view renders, the metric log and the manifest.
inline TrainResult train(const RunConfig& cfg, const TrainOptions& opt = {}) {
  namespace fs = std::filesystem;
  using clock = std::chrono::steady_clock;
  const auto seconds = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
  cfg.validate();
  const auto t0 = clock::now();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "renders");

  auto data = load_training_data(cfg);
  std::optional<Trainer> trainer;
  if (opt.resume.empty()) {
    auto model = build_model(cfg, data);
    trainer.emplace(cfg, std::move(data), std::move(model));
  } else {
    trainer.emplace(resume_trainer(cfg, std::move(data), opt.resume));
  }
  const auto t1 = clock::now();

  std::set<std::size_t> extra(cfg.extra_checkpoints.begin(), cfg.extra_checkpoints.end());
  TrainResult result;
  std::ofstream log_file(out / "metrics.jsonl", std::ios::trunc);
  if (!log_file) throw IoError("cannot write " + (out / "metrics.jsonl").string());
  while (trainer->iteration() < cfg.total_iters) {
    const auto entry = trainer->step();
    log_file << entry.to_json().dump() << "\n" << std::flush;
    result.log.push_back(entry);
    if (opt.on_iteration) opt.on_iteration(entry);
    if (entry.iter % cfg.checkpoint_interval == 0 || extra.count(entry.iter)) {
      ad::save_checkpoint((out / checkpoint_name(entry.iter)).string(), trainer->checkpoint());
    }
  }
  log_file.close();
  const auto t2 = clock::now();

  ad::save_checkpoint((out / "checkpoint.gdck").string(), trainer->checkpoint());
  const auto packed = packed_gaussians(trainer->model());
  decoder::export_ply(decoder::unpack(packed, *trainer->model().grid), (out / "gaussians.ply").string());
  result.final_metrics = evaluate(packed, trainer->model().keys, trainer->data().views, trainer->settings(),
                                  [&](const TrainingView& v, const render::RenderImages& img) {
                                    write_ppm(view_file((out / "renders").string(), v.id, ".ppm"), img.color);
                                  });
  const auto t3 = clock::now();

  auto& m = result.manifest;
  m["config"] = cfg.to_json();
  m["inputs"] = {{"mesh", hash_input(cfg.mesh)},         {"cameras", hash_input(cfg.cameras)},
                 {"images", hash_input(cfg.images)},     {"features", hash_input(cfg.features)},
                 {"scores", hash_input(cfg.scores)},     {"selection", hash_input(cfg.selection)},
                 {"resume", hash_input(opt.resume)}};
  m["resumed_from"] = opt.resume.empty() ? nlohmann::json(nullptr) : nlohmann::json(opt.resume);
  m["grid"] = {{"resolution", trainer->model().grid->resolution()},
               {"occupied_voxels", trainer->model().grid->size()},
               {"voxel_length", trainer->model().grid->voxel_length()},
               {"gaussians", trainer->model().keys.size()}};
  m["training_views"] = nlohmann::json::array();
  for (const auto& v : trainer->data().views) m["training_views"].push_back(v.id);
  m["log"] = nlohmann::json::array();
  for (const auto& e : result.log) m["log"].push_back(e.to_json());
  m["final_metrics"] = result.final_metrics.to_json();
  m["warnings"] = trainer->warnings();
  m["timings"] = {{"setup_seconds", seconds(t0, t1)},
                  {"training_seconds", seconds(t1, t2)},
                  {"export_seconds", seconds(t2, t3)},
                  {"total_seconds", seconds(t0, t3)},
                  {"seconds_per_iteration", result.log.empty() ? 0.0 : seconds(t1, t2) / static_cast<double>(result.log.size())}};
  write_text_atomic((out / "manifest.json").string(), m.dump(2) + "\n");
  if (opt.on_warning)
    for (const auto& w : trainer->warnings()) opt.on_warning(w);
  return result;
}

}  // namespace voxsplat::pipeline
