#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "voxsplat/pipeline/commands.hpp"

namespace {

using namespace voxsplat;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

std::string pick(const std::string& flag, const std::string& fallback) { return flag.empty() ? fallback : flag; }

void print_warning(const std::string& w) { std::cerr << "warning: " << w << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxsplat: coarse mesh + pseudo-GT views to a 3D Gaussian scene"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "key=value run configuration file");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out_dir, "output directory");

  // voxelize
  auto* vox = app.add_subcommand("voxelize", "voxelize a mesh and report grid statistics");
  std::string vox_mesh;
  std::int32_t vox_res = 0;
  vox->add_option("--mesh", vox_mesh, "OBJ mesh");
  vox->add_option("--resolution", vox_res, "grid resolution");

  // condition-export
  auto* cond = app.add_subcommand("condition-export", "render coarse depth, silhouette and edges per camera");
  std::string cond_mesh, cond_cams;
  cond->add_option("--mesh", cond_mesh, "OBJ mesh");
  cond->add_option("--cameras", cond_cams, "cameras JSON");

  // filter
  auto* filt = app.add_subcommand("filter", "score and select pseudo-GT views");
  pipeline::FilterOptions fopt;
  filt->add_option("--mesh", fopt.mesh, "OBJ mesh");
  filt->add_option("--cameras", fopt.cameras, "cameras JSON");
  filt->add_option("--images", fopt.images, "directory of view_NNN.ppm");
  filt->add_option("--scores", fopt.scores, "semantic scores JSON");
  filt->add_option("--semantic-threshold", fopt.thresholds.semantic, "minimum semantic score");
  filt->add_option("--geometric-threshold", fopt.thresholds.geometric, "minimum silhouette IoU");
  filt->add_option("--target", fopt.target_count, "number of views to keep");

  // synthesize-testdata
  auto* syn = app.add_subcommand("synthesize-testdata", "generate a procedural dataset");
  pipeline::SynthOptions sopt;
  std::string scene = "terrace";
  syn->add_option("--scene", scene, "cube, two_rooms or terrace")->check(CLI::IsMember({"cube", "two_rooms", "terrace"}));
  syn->add_option("--noise", sopt.noise, "pseudo-GT inconsistency level")->check(CLI::Range(0.0, 1.0));
  syn->add_option("--views", sopt.views, "number of training views");
  syn->add_option("--size", sopt.image_size, "image width and height");

  // train
  auto* tr = app.add_subcommand("train", "optimize the Gaussian scene");
  bool no_gan = false, no_depth = false, no_residuals = false;
  std::optional<std::size_t> iters;
  std::vector<std::string> sets;
  std::string resume;
  tr->add_flag("--no-gan", no_gan, "disable the adversarial term");
  tr->add_flag("--no-depth", no_depth, "disable the depth term");
  tr->add_flag("--no-residuals", no_residuals, "freeze the voxel feature residuals at zero");
  tr->add_option("--iters", iters, "total iterations");
  tr->add_option("--set", sets, "override a config key (key=value)");
  tr->add_option("--resume", resume, "checkpoint to resume from");

  // render
  auto* ren = app.add_subcommand("render", "render a checkpoint from a camera file");
  std::string ren_ckpt, ren_cams;
  std::size_t ren_w = 0, ren_h = 0;
  ren->add_option("--checkpoint", ren_ckpt, "checkpoint file")->required();
  ren->add_option("--cameras", ren_cams, "cameras JSON");
  ren->add_option("--width", ren_w, "output width (default: camera width)");
  ren->add_option("--height", ren_h, "output height (default: camera height)");

  // export-ply
  auto* ply = app.add_subcommand("export-ply", "write the Gaussians of a checkpoint as PLY");
  std::string ply_ckpt, ply_out;
  ply->add_option("--checkpoint", ply_ckpt, "checkpoint file")->required();
  ply->add_option("--output", ply_out, "PLY path (default: <out>/gaussians.ply)");

  // metrics
  auto* met = app.add_subcommand("metrics", "score a checkpoint against reference images");
  pipeline::MetricsOptions mopt;
  std::size_t met_w = 0, met_h = 0;
  met->add_option("--checkpoint", mopt.checkpoint, "checkpoint file")->required();
  met->add_option("--mesh", mopt.mesh, "OBJ mesh for reference depth");
  met->add_option("--cameras", mopt.cameras, "cameras JSON");
  met->add_option("--references", mopt.references, "directory of view_NNN.ppm");
  met->add_option("--selection", mopt.selection, "selection JSON restricting the views");
  met->add_option("--width", met_w, "evaluation width");
  met->add_option("--height", met_h, "evaluation height");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    pipeline::RunConfig cfg;
    if (!config_path.empty()) cfg = pipeline::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    if (*vox) {
      const auto r = pipeline::cmd_voxelize(pick(vox_mesh, cfg.mesh), vox_res ? vox_res : cfg.grid_resolution, cfg.out_dir);
      std::cout << "occupied " << r.occupied << " voxels, voxel_length " << r.voxel_length << ", resolution "
                << r.resolution << "\n";
    } else if (*cond) {
      const auto n = pipeline::cmd_condition_export(pick(cond_mesh, cfg.mesh), pick(cond_cams, cfg.cameras), cfg.out_dir);
      std::cout << "exported conditioning for " << n << " cameras\n";
    } else if (*filt) {
      fopt.mesh = pick(fopt.mesh, cfg.mesh);
      fopt.cameras = pick(fopt.cameras, cfg.cameras);
      fopt.images = pick(fopt.images, cfg.images);
      fopt.scores = pick(fopt.scores, cfg.scores);
      fopt.out_dir = cfg.out_dir;
      const auto sel = pipeline::cmd_filter(fopt);
      for (const auto& w : sel.warnings) print_warning(w);
      std::cout << "selected " << sel.selected.size() << " views\n";
    } else if (*syn) {
      sopt.scene = pipeline::parse_scene(scene);
      sopt.seed = cfg.seed;
      pipeline::cmd_synthesize_testdata(sopt, cfg.out_dir);
      std::cout << "wrote " << sopt.views << " views to " << cfg.out_dir << "\n";
    } else if (*tr) {
      for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(pipeline::detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
      }
      if (no_gan) cfg.use_gan = false;
      if (no_depth) cfg.use_depth = false;
      if (no_residuals) cfg.use_residuals = false;
      if (iters) cfg.total_iters = *iters;
      pipeline::TrainOptions topt;
      topt.resume = resume;
      topt.on_warning = print_warning;
      topt.on_iteration = [&](const pipeline::IterationLog& e) {
        if (e.iter == 1 || e.iter % 50 == 0 || e.iter == cfg.total_iters) std::cerr << e.to_json().dump() << "\n";
      };
      const auto res = pipeline::train(cfg, topt);
      std::cout << res.manifest["final_metrics"].dump() << "\n";
    } else if (*ren) {
      const auto n = pipeline::cmd_render(ren_ckpt, pick(ren_cams, cfg.cameras), cfg.out_dir, ren_w, ren_h);
      std::cout << "rendered " << n << " views\n";
    } else if (*ply) {
      const auto path = pick(ply_out, (std::filesystem::path(cfg.out_dir) / "gaussians.ply").string());
      std::filesystem::create_directories(std::filesystem::path(path).parent_path().empty()
                                              ? std::filesystem::path(".")
                                              : std::filesystem::path(path).parent_path());
      const auto n = pipeline::cmd_export_ply(ply_ckpt, path);
      std::cout << "wrote " << n << " Gaussians to " << path << "\n";
    } else if (*met) {
      mopt.mesh = pick(mopt.mesh, cfg.mesh);
      mopt.cameras = pick(mopt.cameras, cfg.cameras);
      mopt.references = pick(mopt.references, cfg.images);
      if (mopt.cameras == cfg.cameras) mopt.selection = pick(mopt.selection, cfg.selection);
      mopt.width = met_w ? met_w : cfg.render_width;
      mopt.height = met_h ? met_h : cfg.render_height;
      const auto ev = pipeline::cmd_metrics(mopt);
      std::cout << ev.to_json().dump() << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
