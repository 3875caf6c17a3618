#pragma once

#include "histex/nn/params.hpp"

#include <memory>
#include <string>
#include <vector>

namespace histex::nn {

/// Planar CHW activation of a single sample.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, 0.0) {}

  Index plane() const noexcept { return static_cast<Index>(height) * width; }
  MatrixMap matrix() { return MatrixMap(data.data(), channels, plane()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data.data(), channels, plane()); }
};

struct Shape3 {
  int channels;
  int height;
  int width;
  bool operator==(const Shape3&) const = default;
};

struct LayerCache {
  virtual ~LayerCache() = default;
};
using CachePtr = std::unique_ptr<LayerCache>;

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Shape3 output_shape(Shape3 in) const = 0;
  /// When `cache` is non-null the layer stores what backward() needs.
  virtual FeatureMap forward(FeatureMap in, CachePtr* cache) const = 0;
  /// Accumulates parameter gradients into `grads` and returns the input gradient.
  virtual FeatureMap backward(const LayerCache& cache, FeatureMap dout, GradBuffer& grads) const = 0;
};

struct ConvSpec {
  int in_channels;
  int out_channels;
  int kernel;
  int stride = 1;
  int padding = 0;
  bool bias = true;
};

class Conv2d final : public Layer {
 public:
  Conv2d(ParamSet& params, const std::string& name, ConvSpec spec);

  Shape3 output_shape(Shape3 in) const override;
  FeatureMap forward(FeatureMap in, CachePtr* cache) const override;
  FeatureMap backward(const LayerCache& cache, FeatureMap dout, GradBuffer& grads) const override;

  const ConvSpec& spec() const noexcept { return spec_; }
  Param& weight() noexcept { return *weight_; }
  Param* bias() noexcept { return bias_; }

 private:
  ConvSpec spec_;
  Param* weight_;
  Param* bias_ = nullptr;
};

class ReLU final : public Layer {
 public:
  Shape3 output_shape(Shape3 in) const override { return in; }
  FeatureMap forward(FeatureMap in, CachePtr* cache) const override;
  FeatureMap backward(const LayerCache& cache, FeatureMap dout, GradBuffer& grads) const override;
};

/// Batch normalization with frozen running statistics; only gain and shift are trainable.
class FrozenBatchNorm final : public Layer {
 public:
  FrozenBatchNorm(ParamSet& params, const std::string& name, int channels, double epsilon = 1e-5);

  Shape3 output_shape(Shape3 in) const override { return in; }
  FeatureMap forward(FeatureMap in, CachePtr* cache) const override;
  FeatureMap backward(const LayerCache& cache, FeatureMap dout, GradBuffer& grads) const override;

 private:
  Param* gamma_;
  Param* beta_;
  Param* running_mean_;
  Param* running_var_;
  double epsilon_;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int padding) : kernel_(kernel), stride_(stride), padding_(padding) {}

  Shape3 output_shape(Shape3 in) const override;
  FeatureMap forward(FeatureMap in, CachePtr* cache) const override;
  FeatureMap backward(const LayerCache& cache, FeatureMap dout, GradBuffer& grads) const override;

 private:
  int kernel_, stride_, padding_;
};

class GlobalAvgPool final : public Layer {
 public:
  Shape3 output_shape(Shape3 in) const override { return {in.channels, 1, 1}; }
  FeatureMap forward(FeatureMap in, CachePtr* cache) const override;
  FeatureMap backward(const LayerCache& cache, FeatureMap dout, GradBuffer& grads) const override;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  void push(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const noexcept { return layers_.size(); }

  Shape3 output_shape(Shape3 in) const override;
  FeatureMap forward(FeatureMap in, CachePtr* cache) const override;
  FeatureMap backward(const LayerCache& cache, FeatureMap dout, GradBuffer& grads) const override;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Residual bottleneck: 1x1 -> 3x3 (strided) -> 1x1 expansion, each followed by batch norm,
/// with an optional projection shortcut.
class Bottleneck final : public Layer {
 public:
  Bottleneck(ParamSet& params, const std::string& name, int in_channels, int width, int stride, int expansion = 4);

  Shape3 output_shape(Shape3 in) const override;
  FeatureMap forward(FeatureMap in, CachePtr* cache) const override;
  FeatureMap backward(const LayerCache& cache, FeatureMap dout, GradBuffer& grads) const override;

 private:
  Sequential main_;
  std::unique_ptr<Sequential> shortcut_;
};

}  // namespace histex::nn
