#pragma once

#include "histex/data.hpp"
#include "histex/encoders.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace histex {

inline constexpr int kDefaultTopK = 50;

struct SpotId {
  std::string slice_id;
  std::string spot_id;
  bool operator==(const SpotId&) const = default;
};

/// Reference set: image embeddings row-aligned with expression profiles.
struct EmbeddingBank {
  Matrix embeddings;
  Matrix expressions;
  std::vector<SpotId> ids;
  std::vector<std::string> gene_names;
  std::string fingerprint;

  Index size() const noexcept { return embeddings.rows(); }
  void validate() const;
};

struct TopK {
  std::vector<Index> indices;
  std::vector<double> scores;
};

struct RetrievalResult {
  std::vector<Index> indices;
  std::vector<double> scores;
  Vector imputed;
};

/// Eval-mode embeddings of every (un-augmented) pair.
EmbeddingBank build_bank(const DualEncoder& model, const std::vector<const PatchSpotPair*>& pairs,
                         const std::vector<std::string>& gene_names = {}, std::size_t lanes = 1);
EmbeddingBank build_bank(const DualEncoder& model, const std::vector<PatchSpotPair>& pairs,
                         const std::vector<std::string>& gene_names = {}, std::size_t lanes = 1);

/// K largest dot products, descending, ties to the lower bank index. Bounded heap, O(n log K).
TopK topk(std::span<const double> query, const Matrix& bank_embeddings, Index k);
TopK topk(std::span<const double> query, const EmbeddingBank& bank, Index k);

/// Mean of the selected expression rows.
Vector average_rows(const Matrix& expressions, const std::vector<Index>& indices);

RetrievalResult impute(const Raster& query_patch, const DualEncoder& model, const EmbeddingBank& bank, Index k);

/// Row-aligned predictions for every query; equivalent to impute() per query.
Matrix impute_batch(const std::vector<const Raster*>& query_patches, const DualEncoder& model,
                    const EmbeddingBank& bank, Index k, std::size_t lanes = 1);
/// Same, for query embeddings that were already computed with the bank's encoder.
Matrix impute_embeddings(const Matrix& query_embeddings, const EmbeddingBank& bank, Index k);

/// `embeddings.csv`: id,set,e1..e_{d_o} with set in {reference, query}.
void export_embeddings(const EmbeddingBank& bank, const Matrix& query_embeddings, const std::vector<SpotId>& query_ids,
                       const std::filesystem::path& path);

/// CSV bundle `<prefix>.embeddings.csv`, `.expressions.csv`, `.ids.csv`, `.meta.json`.
void save_bank(const EmbeddingBank& bank, const std::filesystem::path& prefix);
EmbeddingBank load_bank(const std::filesystem::path& prefix);

/// Throws FingerprintMismatch when the bank was not built with `model`.
void check_fingerprint(const EmbeddingBank& bank, const DualEncoder& model);

std::string format_spot_id(const SpotId& id);

/// Row-labelled expression matrix, stored as `slice_id,spot_id,<gene_1>,...`.
struct ExpressionTable {
  std::vector<SpotId> ids;
  std::vector<std::string> gene_names;
  Matrix values;
};
void save_expression_table(const ExpressionTable& table, const std::filesystem::path& path);
ExpressionTable load_expression_table(const std::filesystem::path& path);

}  // namespace histex
