#pragma once

#include <memory>
#include <string>
#include <vector>

#include "voxsplat/autodiff/adam.hpp"
#include "voxsplat/autodiff/checkpoint.hpp"
#include "voxsplat/decoder/decoder_head.hpp"
#include "voxsplat/decoder/gaussians.hpp"
#include "voxsplat/features/feature_volume.hpp"
#include "voxsplat/objectives/discriminator.hpp"
#include "voxsplat/render/splat.hpp"

namespace voxsplat::pipeline {

inline constexpr std::uint64_t kHeadStream = 0x4EADull;
inline constexpr std::uint64_t kDiscStream = 0xD15Cull;

/// Everything needed to produce Gaussians: voxel grid, feature volume,
/// decoder head and the perturbation scale, plus the discriminator.
struct Model {
  std::shared_ptr<const geometry::VoxelGrid> grid;
  features::FeatureVolume volume;
  std::unique_ptr<decoder::DecoderHead> head;
  std::unique_ptr<objectives::Discriminator> disc;
  std::vector<std::vector<std::uint32_t>> neighbors;
  std::vector<std::uint64_t> keys;
  double rho = 0.25;
  bool use_residuals = true;

  Model() = default;
  Model(features::FeatureVolume vol, const decoder::DecoderConfig& head_config, std::uint64_t seed, double rho_,
        bool use_residuals_)
      : grid(vol.grid), volume(std::move(vol)), rho(rho_), use_residuals(use_residuals_) {
    Rng head_rng(splitmix64(seed ^ kHeadStream));
    Rng disc_rng(splitmix64(seed ^ kDiscStream));
    head = std::make_unique<decoder::DecoderHead>(head_config, head_rng);
    disc = std::make_unique<objectives::Discriminator>(disc_rng);
    finish();
  }

  void finish() {
    neighbors = grid->face_neighbors();
    keys = decoder::provenance_keys(*grid);
  }

  /// Packed, mapped and perturbed Gaussians [V * 32, 14].
  ad::Tensor gaussians(ad::Tape& tape) const {
    const auto raw = decoder::decode(tape, volume, *head, neighbors, use_residuals);
    return decoder::perturb(tape, decoder::map_parameters(tape, raw, *grid), *grid, rho);
  }

  decoder::GaussianSet gaussian_set() const {
    ad::Tape tape;
    return decoder::unpack(gaussians(tape), *grid);
  }

  std::vector<ad::Tensor> consistency_parameters() const {
    auto params = head->parameters();
    if (use_residuals) params.push_back(volume.residual);
    return params;
  }
};

namespace detail {

inline ad::Tensor vector_tensor(const std::vector<double>& v) { return ad::Tensor::from({v.size()}, v); }

inline const ad::Tensor& require(const ad::NamedTensors& t, const std::string& name) {
  const auto it = t.find(name);
  if (it == t.end()) throw FormatError("checkpoint is missing '" + name + "'");
  return it->second;
}

inline void save_adam(ad::NamedTensors& out, const std::string& prefix, const ad::Adam& adam) {
  out[prefix + ".step"] = ad::Tensor::from({1}, {static_cast<double>(adam.step_count())});
  for (std::size_t i = 0; i < adam.params().size(); ++i) {
    out[prefix + ".m." + std::to_string(i)] = vector_tensor(adam.first_moment(i));
    out[prefix + ".v." + std::to_string(i)] = vector_tensor(adam.second_moment(i));
  }
}

inline void load_adam(const ad::NamedTensors& in, const std::string& prefix, ad::Adam& adam) {
  adam.set_step_count(static_cast<std::size_t>(require(in, prefix + ".step").item()));
  for (std::size_t i = 0; i < adam.params().size(); ++i) {
    const auto& m = require(in, prefix + ".m." + std::to_string(i));
    const auto& v = require(in, prefix + ".v." + std::to_string(i));
    if (m.numel() != adam.first_moment(i).size() || v.numel() != adam.second_moment(i).size()) {
      throw FormatError("checkpoint optimizer state '" + prefix + "' does not match the model");
    }
    adam.first_moment(i) = m.values();
    adam.second_moment(i) = v.values();
  }
}

}  // namespace detail

/// Serializes the model (and optionally optimizer state and iteration).
inline ad::NamedTensors model_tensors(const Model& m) {
  ad::NamedTensors out;
  const auto& g = *m.grid;
  out["grid.meta"] = ad::Tensor::from({5}, {static_cast<double>(g.resolution()), g.origin().x(), g.origin().y(),
                                            g.origin().z(), g.voxel_length()});
  std::vector<double> lin(g.linear_indices().begin(), g.linear_indices().end());
  out["grid.linear"] = detail::vector_tensor(lin);
  out["features.base"] = m.volume.base;
  out["features.residual"] = m.volume.residual;
  std::vector<double> counts(m.volume.view_counts.begin(), m.volume.view_counts.end());
  out["features.view_counts"] = detail::vector_tensor(counts);
  const auto& hc = m.head->config();
  out["model.meta"] = ad::Tensor::from({6}, {static_cast<double>(hc.feature_dim), static_cast<double>(hc.hidden),
                                             hc.neighbor_mix ? 1.0 : 0.0, hc.opacity_bias, m.rho,
                                             m.use_residuals ? 1.0 : 0.0});
  for (const auto& [name, t] : m.head->named_parameters()) out[name] = t;
  for (const auto& [name, t] : m.disc->named_parameters()) out[name] = t;
  return out;
}

inline Model model_from_tensors(const ad::NamedTensors& in) {
  using detail::require;
  const auto gm = require(in, "grid.meta").values();
  if (gm.size() != 5) throw FormatError("checkpoint grid.meta must hold 5 values");
  std::vector<std::int64_t> lin;
  for (double v : require(in, "grid.linear").values()) lin.push_back(static_cast<std::int64_t>(v));
  Model m;
  m.grid = std::make_shared<const geometry::VoxelGrid>(static_cast<std::int32_t>(gm[0]), geometry::Vec3(gm[1], gm[2], gm[3]),
                                                       gm[4], std::move(lin));
  const auto meta = require(in, "model.meta").values();
  if (meta.size() != 6) throw FormatError("checkpoint model.meta must hold 6 values");
  decoder::DecoderConfig hc;
  hc.feature_dim = static_cast<std::size_t>(meta[0]);
  hc.hidden = static_cast<std::size_t>(meta[1]);
  hc.neighbor_mix = meta[2] != 0.0;
  hc.opacity_bias = meta[3];
  m.rho = meta[4];
  m.use_residuals = meta[5] != 0.0;
  m.volume.grid = m.grid;
  m.volume.base = require(in, "features.base").clone(false);
  m.volume.residual = require(in, "features.residual").clone(true);
  for (double v : require(in, "features.view_counts").values()) m.volume.view_counts.push_back(static_cast<std::uint32_t>(v));
  if (m.volume.base.rank() != 2 || m.volume.base.dim(0) != m.grid->size() || m.volume.base.dim(1) != hc.feature_dim ||
      m.volume.residual.shape() != m.volume.base.shape()) {
    throw FormatError("checkpoint feature volume does not match its grid");
  }
  Rng dummy(0);
  m.head = std::make_unique<decoder::DecoderHead>(hc, dummy);
  m.head->load(in);
  m.disc = std::make_unique<objectives::Discriminator>(dummy);
  m.disc->load(in);
  m.finish();
  return m;
}

}  // namespace voxsplat::pipeline
