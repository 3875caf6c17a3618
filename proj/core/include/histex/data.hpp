#pragma once

#include "histex/image.hpp"
#include "histex/types.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace histex {

inline constexpr int kPatchSize = 256;
inline constexpr int kPatchHalf = kPatchSize / 2;
inline constexpr int kMaxPanelSize = 3500;
inline constexpr double kTargetSum = 10000.0;

struct SpotRecord {
  std::string spot_id;
  int x = 0;
  int y = 0;
  /// One value per gene of the owning slice. Raw counts until the slice is normalized.
  std::vector<double> counts;
};

struct SliceDataset {
  std::string slice_id;
  Raster image;
  std::vector<std::string> gene_names;
  std::vector<SpotRecord> spots;
  bool normalized = false;

  /// spots x genes matrix of the current spot values.
  Matrix expression() const;
  /// Checks spot bounds, count lengths, unique spot ids and the minimum slide size.
  void validate() const;
};

enum class PanelMode { HVG, HEG };

struct GenePanel {
  PanelMode mode = PanelMode::HEG;
  std::vector<std::string> genes;
  std::vector<double> scores;

  std::size_t size() const noexcept { return genes.size(); }
};

/// Training unit: a 256x256 RGB patch and its panel-restricted expression vector.
struct PatchSpotPair {
  Raster patch;
  std::vector<double> expression;
  std::string slice_id;
  std::string spot_id;
};

struct PairBuildReport {
  std::size_t built = 0;
  std::size_t skipped_out_of_bounds = 0;
  std::vector<std::string> skipped_spot_ids;
};

// ---------------------------------------------------------------------------
// Patches

/// Crops [y-128, y+128) x [x-128, x+128). Throws OutOfBounds instead of padding.
Raster extract_patch(const Raster& slide, int x, int y);
bool patch_in_bounds(const Raster& slide, int x, int y) noexcept;

// ---------------------------------------------------------------------------
// Expression

/// Scales every spot to `target_sum` total then applies log1p. Zero-total spots stay zero.
Matrix normalize_expression(const Matrix& counts, double target_sum = kTargetSum);
void normalize_slice(SliceDataset& slice, double target_sum = kTargetSum);

/// Optional batch-effect hook: z-scores every gene within one slice (zero-variance genes become 0).
/// Output is signed, so it is not applied by the default pipeline.
Matrix standardize_per_slice(const Matrix& normalized);

/// Ranks genes by mean expression over all spots of all given slices.
GenePanel select_heg(const std::vector<Matrix>& slices, const std::vector<std::string>& gene_names,
                     std::size_t panel_size = kMaxPanelSize);

/// Per slice top-`panel_size` genes by population variance, union, then ranked by summed variance.
GenePanel select_hvg(const std::vector<Matrix>& slices, const std::vector<std::string>& gene_names,
                     std::size_t panel_size = kMaxPanelSize);

/// Convenience over normalized slices; all slices must share the same gene universe.
GenePanel select_panel(const std::vector<const SliceDataset*>& slices, PanelMode mode,
                       std::size_t panel_size = kMaxPanelSize);

/// Column index of each panel gene within `gene_names`; throws ShapeMismatch on a missing gene.
std::vector<std::size_t> panel_columns(const GenePanel& panel, const std::vector<std::string>& gene_names);

std::vector<PatchSpotPair> build_pairs(const SliceDataset& slice, const GenePanel& panel,
                                       PairBuildReport* report = nullptr);

// ---------------------------------------------------------------------------
// Augmentation

/// Element of the dihedral group of the square: rotate by 90*quarter_turns degrees
/// counter-clockwise after an optional horizontal flip.
struct DihedralTransform {
  int quarter_turns = 0;
  bool flip = false;

  static DihedralTransform from_index(int index);  // index in [0, 8)
  int index() const noexcept { return (flip ? 4 : 0) + quarter_turns; }
  bool is_identity() const noexcept { return quarter_turns == 0 && !flip; }
  bool operator==(const DihedralTransform&) const = default;
};

using AugmentRng = std::mt19937_64;

/// Square rasters only.
Raster apply_transform(const Raster& patch, DihedralTransform transform);
DihedralTransform sample_transform(AugmentRng& rng);

/// Two independently sampled transforms of the same patch; expression is copied unchanged.
std::pair<PatchSpotPair, PatchSpotPair> augment_pair(const PatchSpotPair& pair, AugmentRng& rng);

std::string to_string(PanelMode mode);
PanelMode parse_panel_mode(const std::string& text);

}  // namespace histex
