#include "histex/nn/backbone.hpp"

#include "histex/error.hpp"

#include <cmath>

namespace histex::nn {
namespace {

void init_conv_weights(ParamSet& params, std::size_t first_param, InitRng& rng) {
  for (std::size_t i = first_param; i < params.size(); ++i) {
    Param& p = params[i];
    if (p.shape.size() != 4) continue;
    const double fan_in = static_cast<double>(p.shape[1] * p.shape[2] * p.shape[3]);
    init_uniform(p, std::sqrt(6.0 / fan_in), rng);
  }
}

}  // namespace

std::string to_string(BackboneKind kind) { return kind == BackboneKind::Compact ? "compact" : "residual50"; }

BackboneKind parse_backbone_kind(const std::string& text) {
  if (text == "compact") return BackboneKind::Compact;
  if (text == "residual50") return BackboneKind::Residual50;
  fail(ErrorKind::ParseError, "unknown backbone '" + text + "' (expected compact or residual50)");
}

Backbone Backbone::compact(ParamSet& params, const std::string& prefix, const CompactSpec& spec, InitRng& rng) {
  require(!spec.blocks.empty(), ErrorKind::ShapeMismatch, "compact backbone needs at least one block");
  Backbone b(BackboneKind::Compact, spec.feature_dim());
  const std::size_t first = params.size();
  int in_channels = Raster::kChannels;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& blk = spec.blocks[i];
    b.trunk_.push(std::make_unique<Conv2d>(
        params, prefix + ".block" + std::to_string(i),
        ConvSpec{in_channels, blk.out_channels, blk.kernel, blk.stride, blk.padding, true}));
    b.trunk_.push(std::make_unique<ReLU>());
    in_channels = blk.out_channels;
  }
  init_conv_weights(params, first, rng);
  return b;
}

Backbone Backbone::residual50(ParamSet& params, const std::string& prefix, InitRng& rng) {
  Backbone b(BackboneKind::Residual50, 2048);
  const std::size_t first = params.size();
  b.trunk_.push(std::make_unique<Conv2d>(params, prefix + ".conv1", ConvSpec{3, 64, 7, 2, 3, false}));
  b.trunk_.push(std::make_unique<FrozenBatchNorm>(params, prefix + ".bn1", 64));
  b.trunk_.push(std::make_unique<ReLU>());
  b.trunk_.push(std::make_unique<MaxPool2d>(3, 2, 1));

  constexpr int kBlocks[4] = {3, 4, 6, 3};
  constexpr int kWidths[4] = {64, 128, 256, 512};
  int in_channels = 64;
  for (int stage = 0; stage < 4; ++stage) {
    for (int i = 0; i < kBlocks[stage]; ++i) {
      const int stride = (i == 0 && stage > 0) ? 2 : 1;
      const std::string name = prefix + ".layer" + std::to_string(stage + 1) + "." + std::to_string(i);
      b.trunk_.push(std::make_unique<Bottleneck>(params, name, in_channels, kWidths[stage], stride));
      in_channels = kWidths[stage] * 4;
      init_constant(*params.find(name + ".bn3.gamma"), 0.0);
    }
  }
  init_conv_weights(params, first, rng);
  return b;
}

Shape3 Backbone::trunk_output_shape(Shape3 input) const { return trunk_.output_shape(input); }

FeatureMap Backbone::to_feature_map(const Raster& image) {
  FeatureMap f(Raster::kChannels, image.height(), image.width());
  const auto& bytes = image.bytes();
  const Index plane = f.plane();
  for (Index p = 0; p < plane; ++p)
    for (int c = 0; c < Raster::kChannels; ++c)
      f.data[static_cast<size_t>(c * plane + p)] = bytes[static_cast<size_t>(p * Raster::kChannels + c)] / 255.0;
  return f;
}

Vector Backbone::forward(const Raster& image) const { return forward(to_feature_map(image), nullptr); }

Vector Backbone::forward(const FeatureMap& input, BackboneCache* cache) const {
  FeatureMap trunk = cache ? trunk_.forward(input, &cache->cache) : trunk_.forward(input, nullptr);
  if (cache) cache->input_shape = {input.channels, input.height, input.width};
  FeatureMap pooled = pool_.forward(std::move(trunk), nullptr);
  return Eigen::Map<const Vector>(pooled.data.data(), pooled.channels);
}

void Backbone::backward(const BackboneCache& cache, const Vector& dfeatures, GradBuffer& grads) const {
  const Shape3 trunk_shape = trunk_.output_shape(cache.input_shape);
  require(dfeatures.size() == trunk_shape.channels, ErrorKind::ShapeMismatch, "feature gradient size mismatch");
  FeatureMap dtrunk(trunk_shape.channels, trunk_shape.height, trunk_shape.width);
  const double inv = 1.0 / static_cast<double>(dtrunk.plane());
  auto m = dtrunk.matrix();
  for (int c = 0; c < trunk_shape.channels; ++c) m.row(c).setConstant(dfeatures[c] * inv);
  trunk_.backward(*cache.cache, std::move(dtrunk), grads);
}

}  // namespace histex::nn
