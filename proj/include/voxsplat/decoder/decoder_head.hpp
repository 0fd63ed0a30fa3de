#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "voxsplat/autodiff/checkpoint.hpp"
#include "voxsplat/autodiff/ops.hpp"
#include "voxsplat/core/rng.hpp"
#include "voxsplat/decoder/gaussians.hpp"
#include "voxsplat/features/feature_volume.hpp"

namespace voxsplat::decoder {

struct DecoderConfig {
  std::size_t feature_dim = 32;
  std::size_t hidden = 128;
  bool neighbor_mix = true;
  double opacity_bias = -2.0;  // sigmoid(-2) ~ 0.12 initial opacity
};

/// Shared per-voxel head: optional neighbor mix, then a two-hidden-layer MLP
/// producing 32 x 14 raw Gaussian parameters per voxel.
class DecoderHead {
 public:
  DecoderHead(const DecoderConfig& config, Rng& rng) : config_(config) {
    const std::size_t D = config.feature_dim;
    const std::size_t in = config.neighbor_mix ? 2 * D : D;
    const std::size_t out = kGaussiansPerVoxel * kParamsPerGaussian;
    if (config.neighbor_mix) {
      mix_w_ = he_uniform({D, D}, D, rng);
      mix_b_ = ad::Tensor::zeros({D}, true);
    }
    w1_ = he_uniform({in, config.hidden}, in, rng);
    b1_ = ad::Tensor::zeros({config.hidden}, true);
    w2_ = he_uniform({config.hidden, config.hidden}, config.hidden, rng);
    b2_ = ad::Tensor::zeros({config.hidden}, true);
    w3_ = he_uniform({config.hidden, out}, config.hidden, rng);
    b3_ = ad::Tensor::zeros({out}, true);
    auto b3 = b3_.data();
    for (std::size_t j = 0; j < kGaussiansPerVoxel; ++j) b3[j * kParamsPerGaussian + col::kOpacity] = config.opacity_bias;
  }

  const DecoderConfig& config() const { return config_; }

  /// refined: [V, D]; neighbors: face-neighbor lists per voxel. Returns [V * 32, 14].
  ad::Tensor forward(ad::Tape& tape, const ad::Tensor& refined,
                     const std::vector<std::vector<std::uint32_t>>& neighbors) const {
    if (refined.rank() != 2 || refined.dim(1) != config_.feature_dim) {
      throw ShapeError("decoder: expected features [V, " + std::to_string(config_.feature_dim) + "], got " +
                       ad::shape_str(refined.shape()));
    }
    const std::size_t V = refined.dim(0);
    ad::Tensor x = refined;
    if (config_.neighbor_mix) {
      if (neighbors.size() != V) throw ShapeError("decoder: neighbor table size does not match voxel count");
      const auto mixed = ad::add(tape, ad::matmul(tape, ad::row_mean(tape, refined, neighbors), mix_w_), mix_b_);
      x = ad::concat(tape, {refined, mixed}, 1);
    }
    auto h = ad::leaky_relu(tape, ad::add(tape, ad::matmul(tape, x, w1_), b1_), 0.2);
    h = ad::leaky_relu(tape, ad::add(tape, ad::matmul(tape, h, w2_), b2_), 0.2);
    const auto raw = ad::add(tape, ad::matmul(tape, h, w3_), b3_);
    return ad::reshape(tape, raw, {V * kGaussiansPerVoxel, kParamsPerGaussian});
  }

  std::vector<ad::Tensor> parameters() const {
    std::vector<ad::Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  /// Parameters keyed "head.<name>", in a fixed order.
  std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, ad::Tensor>> out;
    if (config_.neighbor_mix) {
      out.emplace_back("head.mix_w", mix_w_);
      out.emplace_back("head.mix_b", mix_b_);
    }
    out.emplace_back("head.w1", w1_);
    out.emplace_back("head.b1", b1_);
    out.emplace_back("head.w2", w2_);
    out.emplace_back("head.b2", b2_);
    out.emplace_back("head.w3", w3_);
    out.emplace_back("head.b3", b3_);
    return out;
  }

  /// Copies values from a checkpoint; every parameter must be present with a matching shape.
  void load(const ad::NamedTensors& tensors) {
    for (auto& [name, t] : named_parameters()) {
      const auto it = tensors.find(name);
      if (it == tensors.end()) throw FormatError("checkpoint is missing " + name);
      if (it->second.shape() != t.shape()) {
        throw ShapeError(name + ": checkpoint shape " + ad::shape_str(it->second.shape()) + " vs " + ad::shape_str(t.shape()));
      }
      std::copy(it->second.data().begin(), it->second.data().end(), t.values().begin());
    }
  }

 private:
  static ad::Tensor he_uniform(ad::Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(ad::numel_of(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return ad::Tensor::from(std::move(shape), std::move(v), true);
  }

  DecoderConfig config_;
  ad::Tensor mix_w_, mix_b_, w1_, b1_, w2_, b2_, w3_, b3_;
};

/// Raw Gaussian parameters for a feature volume.
inline ad::Tensor decode(ad::Tape& tape, const features::FeatureVolume& volume, const DecoderHead& head,
                         const std::vector<std::vector<std::uint32_t>>& neighbors, bool use_residual = true) {
  return head.forward(tape, features::refined(tape, volume, use_residual), neighbors);
}

}  // namespace voxsplat::decoder
