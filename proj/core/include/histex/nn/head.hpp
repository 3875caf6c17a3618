#pragma once

#include "histex/nn/params.hpp"

#include <random>
#include <string>

namespace histex::nn {

enum class Mode { Train, Eval };

using DropoutRng = std::mt19937_64;

/// Exact Gaussian-CDF GELU and its derivative.
double gelu(double x) noexcept;
double gelu_derivative(double x) noexcept;

inline constexpr double kLayerNormEpsilon = 1e-5;
inline constexpr double kDropoutRate = 0.1;

/// Affine map y = x W^T + b with W stored out x in.
class Linear {
 public:
  Linear(ParamSet& params, const std::string& weight_name, const std::string& bias_name, Index in_dim, Index out_dim);

  Index in_dim() const noexcept { return in_dim_; }
  Index out_dim() const noexcept { return out_dim_; }
  Param& weight() noexcept { return *weight_; }
  Param& bias() noexcept { return *bias_; }

  Matrix forward(const Matrix& x) const;
  /// Accumulates dW, db and returns dx.
  Matrix backward(const Matrix& x, const Matrix& dy, GradBuffer& grads) const;

 private:
  Index in_dim_;
  Index out_dim_;
  Param* weight_;
  Param* bias_;
};

struct HeadCache {
  Matrix input;
  Matrix pre_activation;  // W1 z + b1
  Matrix h1;
  Matrix dropout_scale;   // 0 or 1/(1-p) per element; empty in eval mode
  Matrix normalized;      // (r - mean) / std before gain/bias
  Vector inv_std;
};

/// h1 = GELU(W1 z + b1); h2 = Dropout(W2 h1 + b2); out = LayerNorm(h1 + h2).
/// Parameters: `<prefix>.W1`, `.b1`, `.W2`, `.b2`, `.ln_gain`, `.ln_bias`.
class ProjectionHead {
 public:
  ProjectionHead(ParamSet& params, const std::string& prefix, Index in_dim, Index out_dim,
                 double dropout_rate = kDropoutRate);

  Index in_dim() const noexcept { return first_.in_dim(); }
  Index out_dim() const noexcept { return first_.out_dim(); }
  double dropout_rate() const noexcept { return dropout_rate_; }

  Linear& first() noexcept { return first_; }
  Linear& second() noexcept { return second_; }
  Param& gain() noexcept { return *gain_; }
  Param& shift() noexcept { return *shift_; }

  /// `rng` is required in Train mode when dropout_rate > 0.
  Matrix forward(const Matrix& z, Mode mode, DropoutRng* rng, HeadCache* cache = nullptr) const;
  Matrix backward(const HeadCache& cache, const Matrix& dout, GradBuffer& grads) const;

 private:
  Linear first_;
  Linear second_;
  Param* gain_;
  Param* shift_;
  double dropout_rate_;
};

/// Row-wise layer normalization with unit gain and zero shift.
Matrix layer_norm_rows(const Matrix& x, double epsilon = kLayerNormEpsilon);

}  // namespace histex::nn
