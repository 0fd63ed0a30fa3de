#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "voxsplat/autodiff/tensor.hpp"

namespace voxsplat::ad {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Each instance owns the moments of its own
/// parameter list; two optimizers never share state.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
      first_.emplace_back(p.numel(), 0.0);
      second_.emplace_back(p.numel(), 0.0);
    }
  }

  /// Applies one update from the accumulated gradients, then zeroes them.
  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) {
        throw MissingGradient("adam: parameter " + std::to_string(i) + " of shape " + shape_str(params_[i].shape()) +
                              " has no gradient");
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto value = params_[i].data();
      const auto g = params_[i].grad();
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t k = 0; k < value.size(); ++k) {
        m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * g[k];
        v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * g[k] * g[k];
        const double m_hat = m[k] / bc1;
        const double v_hat = v[k] / bc2;
        value[k] -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
      }
      params_[i].zero_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t step_count() const { return step_; }
  void set_step_count(std::size_t s) { step_ = s; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::vector<double>& first_moment(std::size_t i) { return first_.at(i); }
  std::vector<double>& second_moment(std::size_t i) { return second_.at(i); }
  const std::vector<double>& first_moment(std::size_t i) const { return first_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return second_.at(i); }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t step_ = 0;
};

}  // namespace voxsplat::ad
