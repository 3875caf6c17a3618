#include "histex/nn/layers.hpp"

#include "histex/error.hpp"

#include <cmath>
#include <limits>

namespace histex::nn {
namespace {

struct ConvCache final : LayerCache {
  FeatureMap input;
};

struct MaskCache final : LayerCache {
  std::vector<std::uint8_t> mask;
  Shape3 shape{};
};

struct InputCache final : LayerCache {
  FeatureMap input;
};

struct PoolCache final : LayerCache {
  std::vector<std::int32_t> argmax;
  Shape3 input_shape{};
};

struct ShapeCache final : LayerCache {
  Shape3 input_shape{};
};

struct SequentialCache final : LayerCache {
  std::vector<CachePtr> caches;
};

struct BottleneckCache final : LayerCache {
  CachePtr main;
  CachePtr shortcut;
  std::vector<std::uint8_t> mask;
};

Shape3 shape_of(const FeatureMap& f) { return {f.channels, f.height, f.width}; }

int conv_out(int in, int kernel, int stride, int padding) { return (in + 2 * padding - kernel) / stride + 1; }

bool is_pointwise(const ConvSpec& s) { return s.kernel == 1 && s.stride == 1 && s.padding == 0; }

/// Unfolds receptive fields into a (Cin*k*k) x (Hout*Wout) matrix.
Matrix im2col(const FeatureMap& in, const ConvSpec& s, int out_h, int out_w) {
  const int k = s.kernel;
  Matrix cols(static_cast<Index>(in.channels) * k * k, static_cast<Index>(out_h) * out_w);
  for (int c = 0; c < in.channels; ++c) {
    const double* plane = in.data.data() + static_cast<size_t>(c) * in.plane();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.data() + ((static_cast<Index>(c) * k + ky) * k + kx) * cols.cols();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.padding + ky;
          double* dst = row + static_cast<Index>(oy) * out_w;
          if (iy < 0 || iy >= in.height) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<Index>(iy) * in.width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride - s.padding + kx;
            dst[ox] = (ix >= 0 && ix < in.width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const Matrix& cols, const ConvSpec& s, int out_h, int out_w, FeatureMap& din) {
  const int k = s.kernel;
  for (int c = 0; c < din.channels; ++c) {
    double* plane = din.data.data() + static_cast<size_t>(c) * din.plane();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.data() + ((static_cast<Index>(c) * k + ky) * k + kx) * cols.cols();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.padding + ky;
          if (iy < 0 || iy >= din.height) continue;
          double* dst = plane + static_cast<Index>(iy) * din.width;
          const double* src = row + static_cast<Index>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride - s.padding + kx;
            if (ix >= 0 && ix < din.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void relu_inplace(FeatureMap& f, std::vector<std::uint8_t>* mask) {
  if (mask) mask->resize(f.data.size());
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const bool on = f.data[i] > 0.0;
    if (!on) f.data[i] = 0.0;
    if (mask) (*mask)[i] = on;
  }
}

void relu_backward_inplace(FeatureMap& d, const std::vector<std::uint8_t>& mask) {
  for (std::size_t i = 0; i < d.data.size(); ++i)
    if (!mask[i]) d.data[i] = 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------

Conv2d::Conv2d(ParamSet& params, const std::string& name, ConvSpec spec) : spec_(spec) {
  require(spec.in_channels > 0 && spec.out_channels > 0 && spec.kernel > 0 && spec.stride > 0 && spec.padding >= 0,
          ErrorKind::ShapeMismatch, "invalid convolution spec for " + name);
  weight_ = &params.add(name + ".weight", {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
  if (spec.bias) bias_ = &params.add(name + ".bias", {spec.out_channels});
}

Shape3 Conv2d::output_shape(Shape3 in) const {
  require(in.channels == spec_.in_channels, ErrorKind::ShapeMismatch,
          weight_->name + ": expected " + std::to_string(spec_.in_channels) + " input channels, got " +
              std::to_string(in.channels));
  const int h = conv_out(in.height, spec_.kernel, spec_.stride, spec_.padding);
  const int w = conv_out(in.width, spec_.kernel, spec_.stride, spec_.padding);
  require(h > 0 && w > 0, ErrorKind::ShapeMismatch, weight_->name + ": input too small");
  return {spec_.out_channels, h, w};
}

FeatureMap Conv2d::forward(FeatureMap in, CachePtr* cache) const {
  const Shape3 os = output_shape(shape_of(in));
  FeatureMap out(os.channels, os.height, os.width);
  const auto w = weight_->matrix();
  if (is_pointwise(spec_)) {
    out.matrix().noalias() = w * in.matrix();
  } else {
    const Matrix cols = im2col(in, spec_, os.height, os.width);
    out.matrix().noalias() = w * cols;
  }
  if (bias_) {
    auto m = out.matrix();
    for (int c = 0; c < os.channels; ++c) m.row(c).array() += bias_->value[static_cast<size_t>(c)];
  }
  if (cache) {
    auto c = std::make_unique<ConvCache>();
    c->input = std::move(in);
    *cache = std::move(c);
  }
  return out;
}

FeatureMap Conv2d::backward(const LayerCache& cache, FeatureMap dout, GradBuffer& grads) const {
  const auto& input = static_cast<const ConvCache&>(cache).input;
  const auto w = weight_->matrix();
  auto dw = grads.matrix(*weight_);
  FeatureMap din(input.channels, input.height, input.width);
  if (bias_) {
    double* db = grads.data(*bias_);
    const auto d = dout.matrix();
    for (int c = 0; c < dout.channels; ++c) db[c] += d.row(c).sum();
  }
  if (is_pointwise(spec_)) {
    dw.noalias() += dout.matrix() * input.matrix().transpose();
    din.matrix().noalias() = w.transpose() * dout.matrix();
    return din;
  }
  const Matrix cols = im2col(input, spec_, dout.height, dout.width);
  dw.noalias() += dout.matrix() * cols.transpose();
  const Matrix dcols = w.transpose() * dout.matrix();
  col2im(dcols, spec_, dout.height, dout.width, din);
  return din;
}

// ---------------------------------------------------------------------------

FeatureMap ReLU::forward(FeatureMap in, CachePtr* cache) const {
  if (!cache) {
    relu_inplace(in, nullptr);
    return in;
  }
  auto c = std::make_unique<MaskCache>();
  relu_inplace(in, &c->mask);
  c->shape = shape_of(in);
  *cache = std::move(c);
  return in;
}

FeatureMap ReLU::backward(const LayerCache& cache, FeatureMap dout, GradBuffer&) const {
  relu_backward_inplace(dout, static_cast<const MaskCache&>(cache).mask);
  return dout;
}

// ---------------------------------------------------------------------------

FrozenBatchNorm::FrozenBatchNorm(ParamSet& params, const std::string& name, int channels, double epsilon)
    : epsilon_(epsilon) {
  gamma_ = &params.add(name + ".gamma", {channels});
  beta_ = &params.add(name + ".beta", {channels});
  running_mean_ = &params.add(name + ".running_mean", {channels}, false);
  running_var_ = &params.add(name + ".running_var", {channels}, false);
  init_constant(*gamma_, 1.0);
  init_constant(*running_var_, 1.0);
}

FeatureMap FrozenBatchNorm::forward(FeatureMap in, CachePtr* cache) const {
  require(in.channels == static_cast<int>(gamma_->value.size()), ErrorKind::ShapeMismatch,
          gamma_->name + ": channel count mismatch");
  FeatureMap out(in.channels, in.height, in.width);
  auto o = out.matrix();
  const auto x = in.matrix();
  for (int c = 0; c < in.channels; ++c) {
    const double scale = gamma_->value[c] / std::sqrt(running_var_->value[c] + epsilon_);
    const double shift = beta_->value[c] - running_mean_->value[c] * scale;
    o.row(c) = x.row(c).array() * scale + shift;
  }
  if (cache) {
    auto cc = std::make_unique<InputCache>();
    cc->input = std::move(in);
    *cache = std::move(cc);
  }
  return out;
}

FeatureMap FrozenBatchNorm::backward(const LayerCache& cache, FeatureMap dout, GradBuffer& grads) const {
  const auto& input = static_cast<const InputCache&>(cache).input;
  double* dgamma = grads.data(*gamma_);
  double* dbeta = grads.data(*beta_);
  auto d = dout.matrix();
  const auto x = input.matrix();
  for (int c = 0; c < dout.channels; ++c) {
    const double inv_std = 1.0 / std::sqrt(running_var_->value[c] + epsilon_);
    const double mean = running_mean_->value[c];
    dgamma[c] += (d.row(c).array() * (x.row(c).array() - mean) * inv_std).sum();
    dbeta[c] += d.row(c).sum();
    d.row(c) *= gamma_->value[c] * inv_std;
  }
  return dout;
}

// ---------------------------------------------------------------------------

Shape3 MaxPool2d::output_shape(Shape3 in) const {
  return {in.channels, conv_out(in.height, kernel_, stride_, padding_), conv_out(in.width, kernel_, stride_, padding_)};
}

FeatureMap MaxPool2d::forward(FeatureMap in, CachePtr* cache) const {
  const Shape3 os = output_shape(shape_of(in));
  FeatureMap out(os.channels, os.height, os.width);
  std::vector<std::int32_t> argmax(cache ? out.data.size() : 0);
  for (int c = 0; c < os.channels; ++c) {
    const double* plane = in.data.data() + static_cast<size_t>(c) * in.plane();
    for (int oy = 0; oy < os.height; ++oy) {
      for (int ox = 0; ox < os.width; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::int32_t where = -1;
        for (int ky = 0; ky < kernel_; ++ky) {
          const int iy = oy * stride_ - padding_ + ky;
          if (iy < 0 || iy >= in.height) continue;
          for (int kx = 0; kx < kernel_; ++kx) {
            const int ix = ox * stride_ - padding_ + kx;
            if (ix < 0 || ix >= in.width) continue;
            const double v = plane[iy * in.width + ix];
            if (v > best) {
              best = v;
              where = iy * in.width + ix;
            }
          }
        }
        const size_t o = (static_cast<size_t>(c) * os.height + oy) * os.width + ox;
        out.data[o] = best;
        if (cache) argmax[o] = where;
      }
    }
  }
  if (cache) {
    auto cc = std::make_unique<PoolCache>();
    cc->argmax = std::move(argmax);
    cc->input_shape = shape_of(in);
    *cache = std::move(cc);
  }
  return out;
}

FeatureMap MaxPool2d::backward(const LayerCache& cache, FeatureMap dout, GradBuffer&) const {
  const auto& pc = static_cast<const PoolCache&>(cache);
  FeatureMap din(pc.input_shape.channels, pc.input_shape.height, pc.input_shape.width);
  const Index out_plane = dout.plane();
  for (int c = 0; c < dout.channels; ++c) {
    double* plane = din.data.data() + static_cast<size_t>(c) * din.plane();
    for (Index i = 0; i < out_plane; ++i) {
      const size_t o = static_cast<size_t>(c) * out_plane + i;
      plane[pc.argmax[o]] += dout.data[o];
    }
  }
  return din;
}

// ---------------------------------------------------------------------------

FeatureMap GlobalAvgPool::forward(FeatureMap in, CachePtr* cache) const {
  FeatureMap out(in.channels, 1, 1);
  const auto m = in.matrix();
  const double inv = 1.0 / static_cast<double>(in.plane());
  for (int c = 0; c < in.channels; ++c) out.data[c] = m.row(c).sum() * inv;
  if (cache) {
    auto cc = std::make_unique<ShapeCache>();
    cc->input_shape = shape_of(in);
    *cache = std::move(cc);
  }
  return out;
}

FeatureMap GlobalAvgPool::backward(const LayerCache& cache, FeatureMap dout, GradBuffer&) const {
  const auto s = static_cast<const ShapeCache&>(cache).input_shape;
  FeatureMap din(s.channels, s.height, s.width);
  const double inv = 1.0 / static_cast<double>(din.plane());
  auto m = din.matrix();
  for (int c = 0; c < s.channels; ++c) m.row(c).setConstant(dout.data[c] * inv);
  return din;
}

// ---------------------------------------------------------------------------

Shape3 Sequential::output_shape(Shape3 in) const {
  for (const auto& l : layers_) in = l->output_shape(in);
  return in;
}

FeatureMap Sequential::forward(FeatureMap in, CachePtr* cache) const {
  if (!cache) {
    for (const auto& l : layers_) in = l->forward(std::move(in), nullptr);
    return in;
  }
  auto sc = std::make_unique<SequentialCache>();
  sc->caches.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) in = layers_[i]->forward(std::move(in), &sc->caches[i]);
  *cache = std::move(sc);
  return in;
}

FeatureMap Sequential::backward(const LayerCache& cache, FeatureMap dout, GradBuffer& grads) const {
  const auto& sc = static_cast<const SequentialCache&>(cache);
  for (std::size_t i = layers_.size(); i-- > 0;) dout = layers_[i]->backward(*sc.caches[i], std::move(dout), grads);
  return dout;
}

// ---------------------------------------------------------------------------

Bottleneck::Bottleneck(ParamSet& params, const std::string& name, int in_channels, int width, int stride,
                       int expansion) {
  const int out_channels = width * expansion;
  main_.push(std::make_unique<Conv2d>(params, name + ".conv1", ConvSpec{in_channels, width, 1, 1, 0, false}));
  main_.push(std::make_unique<FrozenBatchNorm>(params, name + ".bn1", width));
  main_.push(std::make_unique<ReLU>());
  main_.push(std::make_unique<Conv2d>(params, name + ".conv2", ConvSpec{width, width, 3, stride, 1, false}));
  main_.push(std::make_unique<FrozenBatchNorm>(params, name + ".bn2", width));
  main_.push(std::make_unique<ReLU>());
  main_.push(std::make_unique<Conv2d>(params, name + ".conv3", ConvSpec{width, out_channels, 1, 1, 0, false}));
  main_.push(std::make_unique<FrozenBatchNorm>(params, name + ".bn3", out_channels));
  if (stride != 1 || in_channels != out_channels) {
    shortcut_ = std::make_unique<Sequential>();
    shortcut_->push(
        std::make_unique<Conv2d>(params, name + ".downsample.0", ConvSpec{in_channels, out_channels, 1, stride, 0, false}));
    shortcut_->push(std::make_unique<FrozenBatchNorm>(params, name + ".downsample.1", out_channels));
  }
}

Shape3 Bottleneck::output_shape(Shape3 in) const { return main_.output_shape(in); }

FeatureMap Bottleneck::forward(FeatureMap in, CachePtr* cache) const {
  std::unique_ptr<BottleneckCache> bc;
  if (cache) bc = std::make_unique<BottleneckCache>();
  FeatureMap skip = shortcut_ ? shortcut_->forward(in, bc ? &bc->shortcut : nullptr) : in;
  FeatureMap out = main_.forward(std::move(in), bc ? &bc->main : nullptr);
  require(out.data.size() == skip.data.size(), ErrorKind::ShapeMismatch, "bottleneck branch shapes differ");
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += skip.data[i];
  relu_inplace(out, bc ? &bc->mask : nullptr);
  if (cache) *cache = std::move(bc);
  return out;
}

FeatureMap Bottleneck::backward(const LayerCache& cache, FeatureMap dout, GradBuffer& grads) const {
  const auto& bc = static_cast<const BottleneckCache&>(cache);
  relu_backward_inplace(dout, bc.mask);
  FeatureMap dskip = shortcut_ ? shortcut_->backward(*bc.shortcut, dout, grads) : dout;
  FeatureMap din = main_.backward(*bc.main, std::move(dout), grads);
  for (std::size_t i = 0; i < din.data.size(); ++i) din.data[i] += dskip.data[i];
  return din;
}

}  // namespace histex::nn
