#pragma once

#include "histex/image.hpp"
#include "histex/nn/backbone.hpp"
#include "histex/nn/head.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>

namespace histex {

using nn::BackboneKind;
using nn::Mode;

struct EncoderConfig {
  Index gene_dim = 0;
  Index embed_dim = 256;
  BackboneKind backbone = BackboneKind::Compact;
  nn::CompactSpec compact;
  double dropout = nn::kDropoutRate;
  std::uint64_t init_seed = 0;
};

struct EmbeddingBatch {
  Matrix rows;
  Mode mode = Mode::Eval;
};

/// Image tower (backbone + projection head) and spot tower (affine map + projection head)
/// sharing one parameter set. Parameter names: `image.backbone.*`, `image.head.*`,
/// `spot.linear.*`, `spot.head.*`.
class DualEncoder {
 public:
  explicit DualEncoder(const EncoderConfig& config);
  DualEncoder(const DualEncoder&) = delete;
  DualEncoder& operator=(const DualEncoder&) = delete;

  const EncoderConfig& config() const noexcept { return config_; }
  nn::ParamSet& params() noexcept { return params_; }
  const nn::ParamSet& params() const noexcept { return params_; }

  const nn::Backbone& backbone() const noexcept { return backbone_; }
  const nn::ProjectionHead& image_head() const noexcept { return image_head_; }
  const nn::Linear& spot_linear() const noexcept { return spot_linear_; }
  const nn::ProjectionHead& spot_head() const noexcept { return spot_head_; }

  /// Pooled backbone features, |B| x feature_dim. Deterministic; spread over `lanes` workers.
  Matrix image_features(std::span<const Raster* const> patches, std::size_t lanes = 1) const;

  EmbeddingBatch encode_images(std::span<const Raster* const> patches, Mode mode, nn::DropoutRng* rng = nullptr,
                               std::size_t lanes = 1) const;
  EmbeddingBatch encode_spots(const Matrix& expressions, Mode mode, nn::DropoutRng* rng = nullptr) const;

  /// FNV-1a hash over configuration and every parameter value, as 16 hex digits.
  std::string fingerprint() const;

  /// Copies every `image.backbone.*` tensor from a checkpoint file, validating shapes.
  void load_backbone_weights(const std::filesystem::path& path);

 private:
  EncoderConfig config_;
  nn::ParamSet params_;
  nn::Backbone backbone_;
  nn::ProjectionHead image_head_;
  nn::Linear spot_linear_;
  nn::ProjectionHead spot_head_;
};

/// Binary checkpoint: magic, JSON header (config echo, tensor table, caller metadata), raw doubles.
void save_encoder(const std::filesystem::path& path, const DualEncoder& model, const std::string& metadata_json = "{}");

struct LoadedEncoder {
  std::unique_ptr<DualEncoder> model;
  std::string metadata_json;
};
LoadedEncoder load_encoder(const std::filesystem::path& path);

}  // namespace histex
