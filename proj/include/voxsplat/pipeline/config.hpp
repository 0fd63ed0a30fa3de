#pragma once

#include <charconv>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxsplat/core/binary_io.hpp"
#include "voxsplat/objectives/losses.hpp"

namespace voxsplat::pipeline {

struct RunConfig {
  // Inputs and outputs.
  std::string mesh;
  std::string cameras;
  std::string images;    // directory of view_NNN.ppm
  std::string features;  // directory of view_NNN.gdfv
  std::string scores;    // optional
  std::string selection; // optional list of view ids to train on
  std::string out_dir = "out";

  std::int32_t grid_resolution = 64;
  std::size_t gaussians_per_voxel = 32;
  std::size_t render_width = 64;
  std::size_t render_height = 64;

  objectives::LossWeights weights;
  double lr_consistency = 1e-4;
  double lr_gan = 5e-6;
  std::size_t total_iters = 1000;
  std::size_t batch_size = 2;
  std::size_t checkpoint_interval = 250;
  std::vector<std::size_t> extra_checkpoints;
  double rho = 0.25;
  std::uint64_t seed = 0;

  std::size_t hidden = 128;
  bool neighbor_mix = true;
  bool use_gan = true;
  bool use_depth = true;
  bool use_residuals = true;

  void set(const std::string& key, const std::string& value);
  void validate() const;
  nlohmann::json to_json() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& raw) {
  using detail::parse_bool;
  using detail::parse_number;
  const std::string v = detail::trim(raw);
  auto& w = weights;
  const std::map<std::string, std::function<void()>> setters = {
      {"mesh", [&] { mesh = v; }},
      {"cameras", [&] { cameras = v; }},
      {"images", [&] { images = v; }},
      {"features", [&] { features = v; }},
      {"scores", [&] { scores = v; }},
      {"selection", [&] { selection = v; }},
      {"out_dir", [&] { out_dir = v; }},
      {"grid_resolution", [&] { grid_resolution = parse_number<std::int32_t>(key, v); }},
      {"gaussians_per_voxel", [&] { gaussians_per_voxel = parse_number<std::size_t>(key, v); }},
      {"render_width", [&] { render_width = parse_number<std::size_t>(key, v); }},
      {"render_height", [&] { render_height = parse_number<std::size_t>(key, v); }},
      {"lambda_l1", [&] { w.l1 = parse_number<double>(key, v); }},
      {"lambda_dssim", [&] { w.dssim = parse_number<double>(key, v); }},
      {"lambda_lpips", [&] { w.lpips = parse_number<double>(key, v); }},
      {"lambda_local", [&] { w.depth_local = parse_number<double>(key, v); }},
      {"lambda_global", [&] { w.depth_global = parse_number<double>(key, v); }},
      {"tau", [&] { w.tau = parse_number<double>(key, v); }},
      {"epsilon_policy",
       [&] {
         if (v == "relative") {
           w.epsilon.kind = objectives::EpsilonPolicy::Kind::kRelative;
         } else if (v == "fixed") {
           w.epsilon.kind = objectives::EpsilonPolicy::Kind::kFixed;
         } else {
           throw ConfigError("config key 'epsilon_policy': expected relative or fixed");
         }
       }},
      {"epsilon", [&] { w.epsilon.value = parse_number<double>(key, v); }},
      {"patch_size", [&] { w.patch = parse_number<std::size_t>(key, v); }},
      {"alpha_threshold", [&] { w.alpha_threshold = parse_number<double>(key, v); }},
      {"lambda_depth", [&] { w.depth = parse_number<double>(key, v); }},
      {"lambda_gan", [&] { w.gan = parse_number<double>(key, v); }},
      {"gan_start_iter", [&] { w.gan_start_iter = parse_number<std::size_t>(key, v); }},
      {"lr_consistency", [&] { lr_consistency = parse_number<double>(key, v); }},
      {"lr_gan", [&] { lr_gan = parse_number<double>(key, v); }},
      {"total_iters", [&] { total_iters = parse_number<std::size_t>(key, v); }},
      {"batch_size", [&] { batch_size = parse_number<std::size_t>(key, v); }},
      {"checkpoint_interval", [&] { checkpoint_interval = parse_number<std::size_t>(key, v); }},
      {"extra_checkpoints",
       [&] {
         extra_checkpoints.clear();
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) {
           if (!detail::trim(item).empty()) extra_checkpoints.push_back(parse_number<std::size_t>(key, detail::trim(item)));
         }
       }},
      {"rho", [&] { rho = parse_number<double>(key, v); }},
      {"seed", [&] { seed = parse_number<std::uint64_t>(key, v); }},
      {"hidden", [&] { hidden = parse_number<std::size_t>(key, v); }},
      {"neighbor_mix", [&] { neighbor_mix = parse_bool(key, v); }},
      {"use_gan", [&] { use_gan = parse_bool(key, v); }},
      {"use_depth", [&] { use_depth = parse_bool(key, v); }},
      {"use_residuals", [&] { use_residuals = parse_bool(key, v); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second();
}

inline void RunConfig::validate() const {
  if (total_iters < 1) throw ConfigError("total_iters must be at least 1");
  if (use_gan && weights.gan_start_iter > total_iters) throw ConfigError("gan_start_iter must not exceed total_iters");
  if (grid_resolution < 2 || !detail::is_power_of_two(static_cast<std::size_t>(grid_resolution)) || grid_resolution > 1024) {
    throw ConfigError("grid_resolution must be a power of two in [2, 1024]");
  }
  for (std::size_t r : {render_width, render_height}) {
    if (!detail::is_power_of_two(r) || r > 1024) throw ConfigError("render resolution must be a power of two <= 1024");
  }
  if (gaussians_per_voxel != 32) throw ConfigError("gaussians_per_voxel is fixed at 32");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be at least 1");
  if (!(rho >= 0.0 && rho < 0.5)) throw ConfigError("rho must lie in [0, 0.5)");
  if (!(lr_consistency > 0.0) || !(lr_gan > 0.0)) throw ConfigError("learning rates must be positive");
  if (hidden < 1) throw ConfigError("hidden must be at least 1");
  try {
    weights.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

inline nlohmann::json RunConfig::to_json() const {
  const auto& w = weights;
  return {
      {"mesh", mesh},
      {"cameras", cameras},
      {"images", images},
      {"features", features},
      {"scores", scores},
      {"selection", selection},
      {"out_dir", out_dir},
      {"grid_resolution", grid_resolution},
      {"gaussians_per_voxel", gaussians_per_voxel},
      {"render_width", render_width},
      {"render_height", render_height},
      {"lambda_l1", w.l1},
      {"lambda_dssim", w.dssim},
      {"lambda_lpips", w.lpips},
      {"lambda_local", w.depth_local},
      {"lambda_global", w.depth_global},
      {"tau", w.tau},
      {"epsilon_policy", w.epsilon.kind == objectives::EpsilonPolicy::Kind::kRelative ? "relative" : "fixed"},
      {"epsilon", w.epsilon.value},
      {"patch_size", w.patch},
      {"alpha_threshold", w.alpha_threshold},
      {"lambda_depth", w.depth},
      {"lambda_gan", w.gan},
      {"gan_start_iter", w.gan_start_iter},
      {"lr_consistency", lr_consistency},
      {"lr_gan", lr_gan},
      {"total_iters", total_iters},
      {"batch_size", batch_size},
      {"checkpoint_interval", checkpoint_interval},
      {"extra_checkpoints", extra_checkpoints},
      {"rho", rho},
      {"seed", seed},
      {"hidden", hidden},
      {"neighbor_mix", neighbor_mix},
      {"use_gan", use_gan},
      {"use_depth", use_depth},
      {"use_residuals", use_residuals},
  };
}

/// Flat key=value text; '#' starts a comment.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source = "config") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    cfg.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

inline RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  apply_config_text(cfg, text, path);
  return cfg;
}

inline std::string config_text(const RunConfig& cfg) {
  std::ostringstream os;
  const auto j = cfg.to_json();
  for (const auto& [key, value] : j.items()) {
    os << key << " = ";
    if (value.is_string()) {
      os << value.get<std::string>();
    } else if (value.is_array()) {
      for (std::size_t i = 0; i < value.size(); ++i) os << (i ? "," : "") << value[i].dump();
    } else {
      os << value.dump();
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace voxsplat::pipeline
