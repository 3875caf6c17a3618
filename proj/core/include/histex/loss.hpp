#pragma once

#include "histex/types.hpp"

#include <string>

namespace histex {

enum class LossMode { ImageCentric, ClipSoft, ClipHard };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& text);

struct LossConfig {
  double temperature = 1.0;
  LossMode mode = LossMode::ImageCentric;
  /// Weight of the spot-side term CE(logits, targets) in image-centric mode. 0 removes it.
  double spot_loss_weight = 0.0;

  void validate() const;
};

/// Row i: -sum_j targets(i,j) * log_softmax(logits.row(i))(j).
Vector cross_entropy(const Matrix& logits, const Matrix& targets);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& x);
Matrix log_softmax_rows(const Matrix& x);

struct LossEvaluation {
  double value = 0.0;
  /// Soft (or one-hot) target matrix before any transposition; rows sum to 1.
  Matrix targets;
  Matrix logits;
  /// d value / d image embeddings and d value / d spot embeddings. Empty unless requested.
  Matrix grad_image;
  Matrix grad_spot;
};

/// Computes the configured contrastive loss for row-aligned image and spot embeddings.
LossEvaluation evaluate_contrastive(const Matrix& image_embeddings, const Matrix& spot_embeddings,
                                    const LossConfig& config, bool with_gradients);

double image_centric_loss(const Matrix& image_embeddings, const Matrix& spot_embeddings, const LossConfig& config);
/// Symmetric CLIP-style baseline: clip_hard or clip_soft according to config.mode
/// (image_centric is treated as clip_soft).
double clip_baseline_loss(const Matrix& image_embeddings, const Matrix& spot_embeddings, const LossConfig& config);
double contrastive_loss(const Matrix& image_embeddings, const Matrix& spot_embeddings, const LossConfig& config);

}  // namespace histex
