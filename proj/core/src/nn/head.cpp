#include "histex/nn/head.hpp"

#include "histex/error.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace histex::nn {

double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) noexcept {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Linear::Linear(ParamSet& params, const std::string& weight_name, const std::string& bias_name, Index in_dim,
               Index out_dim)
    : in_dim_(in_dim), out_dim_(out_dim) {
  require(in_dim > 0 && out_dim > 0, ErrorKind::ShapeMismatch, weight_name + ": dimensions must be positive");
  weight_ = &params.add(weight_name, {out_dim, in_dim});
  bias_ = &params.add(bias_name, {out_dim});
}

Matrix Linear::forward(const Matrix& x) const {
  require(x.cols() == in_dim_, ErrorKind::ShapeMismatch,
          weight_->name + ": expected " + std::to_string(in_dim_) + " input columns, got " + std::to_string(x.cols()));
  Matrix y = x * weight_->matrix().transpose();
  y.rowwise() += Eigen::Map<const RowVector>(bias_->value.data(), out_dim_);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy, GradBuffer& grads) const {
  grads.matrix(*weight_).noalias() += dy.transpose() * x;
  Eigen::Map<RowVector>(grads.data(*bias_), out_dim_) += dy.colwise().sum();
  return dy * weight_->matrix();
}

ProjectionHead::ProjectionHead(ParamSet& params, const std::string& prefix, Index in_dim, Index out_dim,
                               double dropout_rate)
    : first_(params, prefix + ".W1", prefix + ".b1", in_dim, out_dim),
      second_(params, prefix + ".W2", prefix + ".b2", out_dim, out_dim),
      dropout_rate_(dropout_rate) {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0,1)");
  gain_ = &params.add(prefix + ".ln_gain", {out_dim});
  shift_ = &params.add(prefix + ".ln_bias", {out_dim});
  init_constant(*gain_, 1.0);
}

Matrix ProjectionHead::forward(const Matrix& z, Mode mode, DropoutRng* rng, HeadCache* cache) const {
  require(z.allFinite(), ErrorKind::NonFiniteInput, "projection head input is not finite");
  Matrix pre = first_.forward(z);
  Matrix h1 = pre.unaryExpr([](double v) { return gelu(v); });
  Matrix h2 = second_.forward(h1);

  Matrix scale;
  if (mode == Mode::Train && dropout_rate_ > 0.0) {
    if (rng == nullptr) throw std::invalid_argument("train-mode dropout needs a random stream");
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double keep = 1.0 / (1.0 - dropout_rate_);
    scale.resize(h2.rows(), h2.cols());
    for (Index i = 0; i < scale.size(); ++i) scale.data()[i] = uniform(*rng) < dropout_rate_ ? 0.0 : keep;
    h2.array() *= scale.array();
  }

  const Matrix r = h1 + h2;
  const Index d = r.cols();
  Matrix normalized(r.rows(), d);
  Vector inv_std(r.rows());
  for (Index i = 0; i < r.rows(); ++i) {
    const double mean = r.row(i).mean();
    const double var = (r.row(i).array() - mean).square().sum() / static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    normalized.row(i) = (r.row(i).array() - mean) * inv_std[i];
  }
  Matrix out = normalized;
  const Eigen::Map<const RowVector> g(gain_->value.data(), d);
  const Eigen::Map<const RowVector> b(shift_->value.data(), d);
  out.array().rowwise() *= g.array();
  out.rowwise() += b;

  if (cache) {
    cache->input = z;
    cache->pre_activation = std::move(pre);
    cache->h1 = std::move(h1);
    cache->dropout_scale = std::move(scale);
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Matrix ProjectionHead::backward(const HeadCache& cache, const Matrix& dout, GradBuffer& grads) const {
  const Index d = dout.cols();
  const Eigen::Map<const RowVector> g(gain_->value.data(), d);
  Eigen::Map<RowVector>(grads.data(*gain_), d) += (dout.array() * cache.normalized.array()).colwise().sum().matrix();
  Eigen::Map<RowVector>(grads.data(*shift_), d) += dout.colwise().sum();

  Matrix dn = dout;
  dn.array().rowwise() *= g.array();
  Matrix dr(dout.rows(), d);
  for (Index i = 0; i < dout.rows(); ++i) {
    const double sum_dn = dn.row(i).sum();
    const double sum_dn_n = dn.row(i).dot(cache.normalized.row(i));
    dr.row(i) = (cache.inv_std[i] / static_cast<double>(d)) *
                (static_cast<double>(d) * dn.row(i).array() - sum_dn - cache.normalized.row(i).array() * sum_dn_n)
                    .matrix();
  }

  Matrix da2 = dr;
  if (cache.dropout_scale.size() > 0) da2.array() *= cache.dropout_scale.array();
  Matrix dh1 = dr + second_.backward(cache.h1, da2, grads);
  Matrix da1 = dh1.array() * cache.pre_activation.unaryExpr([](double v) { return gelu_derivative(v); }).array();
  return first_.backward(cache.input, da1, grads);
}

Matrix layer_norm_rows(const Matrix& x, double epsilon) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() / static_cast<double>(x.cols());
    out.row(i) = (x.row(i).array() - mean) / std::sqrt(var + epsilon);
  }
  return out;
}

}  // namespace histex::nn
