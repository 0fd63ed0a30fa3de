#pragma once

#include <string>
#include <utility>
#include <vector>

#include "voxsplat/autodiff/checkpoint.hpp"
#include "voxsplat/autodiff/ops.hpp"
#include "voxsplat/core/rng.hpp"

namespace voxsplat::objectives {

/// Patch discriminator: three 4x4 stride-2 convolutions (16, 32, 64 channels)
/// with leaky_relu(0.2), then a 1-channel 4x4 convolution producing a score map.
class Discriminator {
 public:
  static constexpr std::size_t kMinSize = 32;

  explicit Discriminator(Rng& rng, std::size_t in_channels = 3) {
    const std::size_t ch[] = {in_channels, 16, 32, 64};
    for (int l = 0; l < 3; ++l) {
      weights_.push_back(normal({ch[l + 1], ch[l], 4, 4}, rng));
      biases_.push_back(ad::Tensor::zeros({ch[l + 1]}, true));
    }
    weights_.push_back(normal({1, 64, 4, 4}, rng));
    biases_.push_back(ad::Tensor::zeros({1}, true));
  }

  /// images: [N, C, H, W] -> scores [N, 1, H', W']. With `frozen`, weights
  /// enter as constants so gradients reach only the images.
  ad::Tensor forward(ad::Tape& tape, const ad::Tensor& images, bool frozen = false) const {
    if (images.rank() != 4) throw ShapeError("discriminator: expected [N, C, H, W], got " + ad::shape_str(images.shape()));
    if (images.dim(2) < kMinSize || images.dim(3) < kMinSize) {
      throw InvalidArgument("discriminator: images must be at least 32x32, got " + std::to_string(images.dim(2)) + "x" +
                            std::to_string(images.dim(3)));
    }
    ad::Tensor x = images;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      const ad::Tensor w = frozen ? weights_[l].detach() : weights_[l];
      const ad::Tensor b = frozen ? biases_[l].detach() : biases_[l];
      const bool last = l + 1 == weights_.size();
      x = ad::conv2d(tape, x, w, b, last ? 1 : 2, last ? 0 : 1);
      if (!last) x = ad::leaky_relu(tape, x, 0.2);
    }
    return x;
  }

  std::vector<ad::Tensor> parameters() const {
    std::vector<ad::Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, ad::Tensor>> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.emplace_back("disc.w" + std::to_string(l + 1), weights_[l]);
      out.emplace_back("disc.b" + std::to_string(l + 1), biases_[l]);
    }
    return out;
  }

  void load(const ad::NamedTensors& tensors) {
    for (auto& [name, t] : named_parameters()) {
      const auto it = tensors.find(name);
      if (it == tensors.end()) throw FormatError("checkpoint is missing " + name);
      if (it->second.shape() != t.shape()) throw ShapeError(name + ": checkpoint shape mismatch");
      std::copy(it->second.data().begin(), it->second.data().end(), t.values().begin());
    }
  }

 private:
  static ad::Tensor normal(ad::Shape shape, Rng& rng) {
    std::vector<double> v(ad::numel_of(shape));
    for (auto& x : v) x = 0.02 * rng.normal();
    return ad::Tensor::from(std::move(shape), std::move(v), true);
  }

  std::vector<ad::Tensor> weights_, biases_;
};

/// Stacks [H, W, C] images into a [N, C, H, W] batch.
inline ad::Tensor to_nchw(ad::Tape& tape, const std::vector<ad::Tensor>& images) {
  std::vector<ad::Tensor> parts;
  for (const auto& img : images) {
    if (img.rank() != 3) throw ShapeError("to_nchw: expected [H, W, C], got " + ad::shape_str(img.shape()));
    const auto chw = ad::permute(tape, img, {2, 0, 1});
    parts.push_back(ad::reshape(tape, chw, {1, img.dim(2), img.dim(0), img.dim(1)}));
  }
  return parts.size() == 1 ? parts[0] : ad::concat(tape, parts, 0);
}

/// Hinge discriminator loss: 0.5 * (mean relu(1 - D(real)) + mean relu(1 + D(fake))).
/// Score maps share a shape, so spatial-then-batch averaging equals the global mean.
inline ad::Tensor discriminator_hinge(ad::Tape& tape, const ad::Tensor& real_scores, const ad::Tensor& fake_scores) {
  const auto real_term = ad::mean(tape, ad::max_with_scalar(tape, ad::add_scalar(tape, ad::scale(tape, real_scores, -1.0), 1.0), 0.0));
  const auto fake_term = ad::mean(tape, ad::max_with_scalar(tape, ad::add_scalar(tape, fake_scores, 1.0), 0.0));
  return ad::scale(tape, ad::add(tape, real_term, fake_term), 0.5);
}

/// Generator adversarial loss: negated mean fake score.
inline ad::Tensor generator_hinge(ad::Tape& tape, const ad::Tensor& fake_scores) {
  return ad::scale(tape, ad::mean(tape, fake_scores), -1.0);
}

inline ad::Tensor gan_discriminator_loss(ad::Tape& tape, const Discriminator& disc, const ad::Tensor& real,
                                         const ad::Tensor& fake) {
  return discriminator_hinge(tape, disc.forward(tape, real), disc.forward(tape, fake.detach()));
}

inline ad::Tensor gan_generator_loss(ad::Tape& tape, const Discriminator& disc, const ad::Tensor& fake) {
  return generator_hinge(tape, disc.forward(tape, fake, true));
}

}  // namespace voxsplat::objectives
