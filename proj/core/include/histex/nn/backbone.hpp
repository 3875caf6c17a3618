#pragma once

#include "histex/image.hpp"
#include "histex/nn/layers.hpp"

#include <memory>
#include <string>
#include <vector>

namespace histex::nn {

enum class BackboneKind { Compact, Residual50 };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(const std::string& text);

/// One conv + ReLU block of the compact backbone.
struct ConvBlockSpec {
  int out_channels;
  int kernel;
  int stride;
  int padding;
};

/// Compact backbone: conv/ReLU blocks followed by global average pooling.
/// The default stem uses a 4x4 stride-4 patchifying block so a 256x256 patch costs ~4M MACs.
struct CompactSpec {
  std::vector<ConvBlockSpec> blocks{{8, 4, 4, 0}, {16, 3, 2, 1}, {32, 3, 2, 1}};

  int feature_dim() const { return blocks.empty() ? 3 : blocks.back().out_channels; }
};

struct BackboneCache {
  CachePtr cache;
  Shape3 input_shape{};
};

class Backbone {
 public:
  /// Registers parameters under `prefix` (e.g. "image.backbone").
  /// Convolution weights use fan-in scaled uniform init, biases start at zero.
  static Backbone compact(ParamSet& params, const std::string& prefix, const CompactSpec& spec, InitRng& rng);
  /// Bottleneck residual network with [3,4,6,3] stages, 2048 pooled features.
  /// The last batch-norm gain of every block starts at zero so the random network stays well scaled.
  static Backbone residual50(ParamSet& params, const std::string& prefix, InitRng& rng);

  Backbone(Backbone&&) noexcept = default;
  Backbone& operator=(Backbone&&) noexcept = default;

  BackboneKind kind() const noexcept { return kind_; }
  int feature_dim() const noexcept { return feature_dim_; }
  /// Spatial shape of the last feature map for a given input (before pooling).
  Shape3 trunk_output_shape(Shape3 input) const;

  /// Pooled features of one RGB raster, channels scaled to [0,1].
  Vector forward(const Raster& image) const;
  Vector forward(const FeatureMap& input, BackboneCache* cache) const;
  /// Accumulates gradients for d(loss)/d(features) = `dfeatures`.
  void backward(const BackboneCache& cache, const Vector& dfeatures, GradBuffer& grads) const;

  static FeatureMap to_feature_map(const Raster& image);

 private:
  Backbone(BackboneKind kind, int feature_dim) : kind_(kind), feature_dim_(feature_dim) {}

  BackboneKind kind_;
  int feature_dim_;
  Sequential trunk_;
  GlobalAvgPool pool_;
};

}  // namespace histex::nn
