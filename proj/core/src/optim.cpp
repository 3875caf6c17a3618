#include "histex/optim.hpp"

#include <cmath>

namespace histex {

AdamW::AdamW(const nn::ParamSet& params, Options options) : options_(options) {
  first_moment_.resize(params.size());
  second_moment_.resize(params.size());
  for (const auto& p : params) {
    if (!p.trainable) continue;
    first_moment_[p.id].assign(p.value.size(), 0.0);
    second_moment_[p.id].assign(p.value.size(), 0.0);
  }
}

void AdamW::step(nn::ParamSet& params, const nn::GradBuffer& grads) {
  ++step_;
  const double bias1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bias2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  const double decay = 1.0 - options_.learning_rate * options_.weight_decay;
  for (auto& p : params) {
    if (!p.trainable) continue;
    auto& m = first_moment_[p.id];
    auto& v = second_moment_[p.id];
    const bool has_grad = grads.touched(p.id);
    const auto g = grads.values(p.id);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = has_grad ? g[i] : 0.0;
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * gi;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * gi * gi;
      p.value[i] *= decay;
      p.value[i] -= options_.learning_rate * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + options_.epsilon);
    }
  }
}

}  // namespace histex
