#pragma once

#include "histex/nn/params.hpp"

#include <vector>

namespace histex {

/// Adaptive moment estimation with decoupled weight decay.
class AdamW {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-4;
  };

  AdamW(const nn::ParamSet& params, Options options);

  /// Updates every trainable parameter with the gradients in `grads`; untouched entries count as zero.
  void step(nn::ParamSet& params, const nn::GradBuffer& grads);
  long steps() const noexcept { return step_; }

 private:
  Options options_;
  long step_ = 0;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
};

}  // namespace histex
