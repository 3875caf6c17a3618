#pragma once

#include "histex/types.hpp"

#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace histex::nn {

/// A named parameter tensor. Element addresses are stable for the life of the owning ParamSet.
struct Param {
  std::string name;
  std::vector<Index> shape;
  std::vector<double> value;
  std::size_t id = 0;
  bool trainable = true;

  Index numel() const noexcept { return static_cast<Index>(value.size()); }
  /// Views the tensor as rows = shape[0], cols = product of the remaining dims.
  MatrixMap matrix();
  ConstMatrixMap matrix() const;
};

class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;

  Param& add(std::string name, std::vector<Index> shape, bool trainable = true);

  std::size_t size() const noexcept { return params_.size(); }
  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Index total_elements() const;
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  std::deque<Param> params_;
};

/// Per-parameter gradient accumulators, allocated on first touch.
class GradBuffer {
 public:
  explicit GradBuffer(const ParamSet& params);

  double* data(const Param& p);
  MatrixMap matrix(const Param& p);
  bool touched(std::size_t id) const { return !grads_[id].empty(); }
  std::span<const double> values(std::size_t id) const { return grads_[id]; }

  void zero();
  /// this += other, parameter by parameter.
  void accumulate(const GradBuffer& other);
  void scale(double factor);

 private:
  const ParamSet* params_;
  std::vector<std::vector<double>> grads_;
};

using InitRng = std::mt19937_64;

void init_uniform(Param& p, double bound, InitRng& rng);
void init_constant(Param& p, double value);

}  // namespace histex::nn
