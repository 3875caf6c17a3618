#include "histex/nn/params.hpp"

#include "histex/error.hpp"

#include <functional>
#include <numeric>

namespace histex::nn {

MatrixMap Param::matrix() {
  const Index rows = shape.empty() ? 1 : shape.front();
  return MatrixMap(value.data(), rows, rows == 0 ? 0 : numel() / rows);
}

ConstMatrixMap Param::matrix() const {
  const Index rows = shape.empty() ? 1 : shape.front();
  return ConstMatrixMap(value.data(), rows, rows == 0 ? 0 : numel() / rows);
}

Param& ParamSet::add(std::string name, std::vector<Index> shape, bool trainable) {
  require(find(name) == nullptr, ErrorKind::ShapeMismatch, "duplicate parameter name " + name);
  const Index n = std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
  Param p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.value.assign(static_cast<size_t>(n), 0.0);
  p.id = params_.size();
  p.trainable = trainable;
  params_.push_back(std::move(p));
  return params_.back();
}

Param* ParamSet::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

const Param* ParamSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Index ParamSet::total_elements() const {
  Index n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

std::vector<std::vector<double>> ParamSet::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParamSet::restore(const std::vector<std::vector<double>>& values) {
  require(values.size() == params_.size(), ErrorKind::ShapeMismatch, "snapshot parameter count differs");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    require(values[i].size() == params_[i].value.size(), ErrorKind::ShapeMismatch,
            "snapshot size differs for " + params_[i].name);
    params_[i].value = values[i];
  }
}

GradBuffer::GradBuffer(const ParamSet& params) : params_(&params), grads_(params.size()) {}

double* GradBuffer::data(const Param& p) {
  auto& g = grads_.at(p.id);
  if (g.empty()) g.assign(p.value.size(), 0.0);
  return g.data();
}

MatrixMap GradBuffer::matrix(const Param& p) {
  double* d = data(p);
  const Index rows = p.shape.empty() ? 1 : p.shape.front();
  return MatrixMap(d, rows, rows == 0 ? 0 : p.numel() / rows);
}

void GradBuffer::zero() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
}

void GradBuffer::accumulate(const GradBuffer& other) {
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (other.grads_[i].empty()) continue;
    double* dst = data((*params_)[i]);
    const auto& src = other.grads_[i];
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
  }
}

void GradBuffer::scale(double factor) {
  for (auto& g : grads_)
    for (auto& v : g) v *= factor;
}

void init_uniform(Param& p, double bound, InitRng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.value) v = dist(rng);
}

void init_constant(Param& p, double value) { std::fill(p.value.begin(), p.value.end(), value); }

}  // namespace histex::nn
