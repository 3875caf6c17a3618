#include "histex/data.hpp"

#include "histex/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace histex {
namespace {

std::vector<std::size_t> rank_desc(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

void check_slices(const std::vector<Matrix>& slices, const std::vector<std::string>& gene_names) {
  require(!slices.empty(), ErrorKind::EmptyInput, "panel selection needs at least one slice");
  require(!gene_names.empty(), ErrorKind::EmptyInput, "panel selection needs at least one gene");
  for (const auto& m : slices) {
    require(m.cols() == static_cast<Index>(gene_names.size()), ErrorKind::ShapeMismatch,
            "slice has " + std::to_string(m.cols()) + " genes, expected " + std::to_string(gene_names.size()));
  }
}

std::vector<double> population_variance(const Matrix& m) {
  std::vector<double> out(static_cast<size_t>(m.cols()), 0.0);
  if (m.rows() == 0) return out;
  const double n = static_cast<double>(m.rows());
  for (Index g = 0; g < m.cols(); ++g) {
    const double mean = m.col(g).sum() / n;
    out[static_cast<size_t>(g)] = (m.col(g).array() - mean).square().sum() / n;
  }
  return out;
}

}  // namespace

Matrix SliceDataset::expression() const {
  Matrix m(static_cast<Index>(spots.size()), static_cast<Index>(gene_names.size()));
  for (std::size_t i = 0; i < spots.size(); ++i) {
    require(spots[i].counts.size() == gene_names.size(), ErrorKind::ShapeMismatch,
            "spot " + spots[i].spot_id + " has " + std::to_string(spots[i].counts.size()) + " values, expected " +
                std::to_string(gene_names.size()));
    for (std::size_t g = 0; g < gene_names.size(); ++g) m(static_cast<Index>(i), static_cast<Index>(g)) = spots[i].counts[g];
  }
  return m;
}

void SliceDataset::validate() const {
  require(image.height() >= kPatchSize && image.width() >= kPatchSize, ErrorKind::ShapeMismatch,
          "slice " + slice_id + ": slide must be at least 256x256");
  std::unordered_set<std::string> seen;
  for (const auto& s : spots) {
    require(s.x >= 0 && s.y >= 0 && s.x < image.width() && s.y < image.height(), ErrorKind::OutOfBounds,
            "slice " + slice_id + ": spot " + s.spot_id + " lies outside the slide");
    require(s.counts.size() == gene_names.size(), ErrorKind::ShapeMismatch,
            "slice " + slice_id + ": spot " + s.spot_id + " count length differs from gene list");
    require(seen.insert(s.spot_id).second, ErrorKind::ParseError,
            "slice " + slice_id + ": duplicate spot id " + s.spot_id);
  }
}

bool patch_in_bounds(const Raster& slide, int x, int y) noexcept {
  return x - kPatchHalf >= 0 && y - kPatchHalf >= 0 && x + kPatchHalf <= slide.width() &&
         y + kPatchHalf <= slide.height();
}

Raster extract_patch(const Raster& slide, int x, int y) {
  if (!patch_in_bounds(slide, x, y)) {
    fail(ErrorKind::OutOfBounds, "patch centred at (" + std::to_string(x) + ", " + std::to_string(y) +
                                     ") exceeds slide of " + std::to_string(slide.width()) + "x" +
                                     std::to_string(slide.height()));
  }
  Raster patch(kPatchSize, kPatchSize);
  const int x0 = x - kPatchHalf;
  const int y0 = y - kPatchHalf;
  const size_t row_bytes = static_cast<size_t>(kPatchSize) * Raster::kChannels;
  for (int r = 0; r < kPatchSize; ++r) {
    const auto* src = slide.bytes().data() + (static_cast<size_t>(y0 + r) * slide.width() + x0) * Raster::kChannels;
    std::copy_n(src, row_bytes, patch.bytes().data() + static_cast<size_t>(r) * row_bytes);
  }
  return patch;
}

Matrix normalize_expression(const Matrix& counts, double target_sum) {
  require(target_sum > 0.0, ErrorKind::NonFiniteInput, "target sum must be positive");
  Matrix out(counts.rows(), counts.cols());
  for (Index i = 0; i < counts.rows(); ++i) {
    for (Index g = 0; g < counts.cols(); ++g) {
      const double v = counts(i, g);
      require(std::isfinite(v), ErrorKind::NonFiniteInput, "non-finite count at spot " + std::to_string(i));
      require(v >= 0.0, ErrorKind::NegativeCount,
              "negative count at spot " + std::to_string(i) + ", gene " + std::to_string(g));
    }
    const double total = counts.row(i).sum();
    if (total == 0.0) {
      out.row(i).setZero();
      continue;
    }
    const double scale = target_sum / total;
    for (Index g = 0; g < counts.cols(); ++g) out(i, g) = std::log1p(counts(i, g) * scale);
  }
  return out;
}

void normalize_slice(SliceDataset& slice, double target_sum) {
  const Matrix normalized = normalize_expression(slice.expression(), target_sum);
  for (std::size_t i = 0; i < slice.spots.size(); ++i) {
    auto& c = slice.spots[i].counts;
    for (std::size_t g = 0; g < c.size(); ++g) c[g] = normalized(static_cast<Index>(i), static_cast<Index>(g));
  }
  slice.normalized = true;
}

Matrix standardize_per_slice(const Matrix& normalized) {
  Matrix out = normalized;
  if (normalized.rows() == 0) return out;
  const double n = static_cast<double>(normalized.rows());
  for (Index g = 0; g < normalized.cols(); ++g) {
    const double mean = normalized.col(g).sum() / n;
    const double var = (normalized.col(g).array() - mean).square().sum() / n;
    if (var == 0.0) {
      out.col(g).setZero();
    } else {
      out.col(g) = (normalized.col(g).array() - mean) / std::sqrt(var);
    }
  }
  return out;
}

GenePanel select_heg(const std::vector<Matrix>& slices, const std::vector<std::string>& gene_names,
                     std::size_t panel_size) {
  check_slices(slices, gene_names);
  std::vector<double> sums(gene_names.size(), 0.0);
  Index total_spots = 0;
  for (const auto& m : slices) {
    total_spots += m.rows();
    for (Index g = 0; g < m.cols(); ++g) sums[static_cast<size_t>(g)] += m.col(g).sum();
  }
  require(total_spots > 0, ErrorKind::EmptyInput, "panel selection needs at least one spot");
  for (auto& s : sums) s /= static_cast<double>(total_spots);

  const auto order = rank_desc(sums);
  GenePanel panel;
  panel.mode = PanelMode::HEG;
  const std::size_t take = std::min({panel_size, order.size(), static_cast<std::size_t>(kMaxPanelSize)});
  for (std::size_t r = 0; r < take; ++r) {
    panel.genes.push_back(gene_names[order[r]]);
    panel.scores.push_back(sums[order[r]]);
  }
  return panel;
}

GenePanel select_hvg(const std::vector<Matrix>& slices, const std::vector<std::string>& gene_names,
                     std::size_t panel_size) {
  check_slices(slices, gene_names);
  panel_size = std::min(panel_size, static_cast<std::size_t>(kMaxPanelSize));

  std::vector<double> summed(gene_names.size(), 0.0);
  std::vector<bool> in_union(gene_names.size(), false);
  bool any_spots = false;
  for (const auto& m : slices) {
    if (m.rows() == 0) continue;
    any_spots = true;
    const auto variance = population_variance(m);
    for (std::size_t g = 0; g < variance.size(); ++g) summed[g] += variance[g];
    const auto order = rank_desc(variance);
    for (std::size_t r = 0; r < std::min(panel_size, order.size()); ++r) in_union[order[r]] = true;
  }
  require(any_spots, ErrorKind::EmptyInput, "panel selection needs at least one spot");

  std::vector<std::size_t> candidates;
  for (std::size_t g = 0; g < in_union.size(); ++g)
    if (in_union[g]) candidates.push_back(g);
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return summed[a] > summed[b]; });

  GenePanel panel;
  panel.mode = PanelMode::HVG;
  for (std::size_t r = 0; r < std::min(panel_size, candidates.size()); ++r) {
    panel.genes.push_back(gene_names[candidates[r]]);
    panel.scores.push_back(summed[candidates[r]]);
  }
  return panel;
}

GenePanel select_panel(const std::vector<const SliceDataset*>& slices, PanelMode mode, std::size_t panel_size) {
  require(!slices.empty(), ErrorKind::EmptyInput, "panel selection needs at least one slice");
  const auto& genes = slices.front()->gene_names;
  std::vector<Matrix> matrices;
  matrices.reserve(slices.size());
  for (const auto* s : slices) {
    if (s->gene_names == genes) {
      matrices.push_back(s->expression());
      continue;
    }
    // Same universe, different column order: realign to the first slice.
    const Matrix m = s->expression();
    Matrix aligned(m.rows(), static_cast<Index>(genes.size()));
    GenePanel as_panel;
    as_panel.genes = genes;
    const auto cols = panel_columns(as_panel, s->gene_names);
    for (std::size_t g = 0; g < cols.size(); ++g) aligned.col(static_cast<Index>(g)) = m.col(static_cast<Index>(cols[g]));
    matrices.push_back(std::move(aligned));
  }
  return mode == PanelMode::HEG ? select_heg(matrices, genes, panel_size) : select_hvg(matrices, genes, panel_size);
}

std::vector<std::size_t> panel_columns(const GenePanel& panel, const std::vector<std::string>& gene_names) {
  std::unordered_map<std::string, std::size_t> where;
  where.reserve(gene_names.size());
  for (std::size_t i = 0; i < gene_names.size(); ++i) where.emplace(gene_names[i], i);
  std::vector<std::size_t> cols;
  cols.reserve(panel.genes.size());
  for (const auto& g : panel.genes) {
    const auto it = where.find(g);
    require(it != where.end(), ErrorKind::ShapeMismatch, "panel gene '" + g + "' missing from slice");
    cols.push_back(it->second);
  }
  return cols;
}

std::vector<PatchSpotPair> build_pairs(const SliceDataset& slice, const GenePanel& panel, PairBuildReport* report) {
  const auto cols = panel_columns(panel, slice.gene_names);
  std::vector<PatchSpotPair> pairs;
  pairs.reserve(slice.spots.size());
  PairBuildReport local;
  for (const auto& spot : slice.spots) {
    if (!patch_in_bounds(slice.image, spot.x, spot.y)) {
      ++local.skipped_out_of_bounds;
      local.skipped_spot_ids.push_back(spot.spot_id);
      continue;
    }
    PatchSpotPair pair;
    pair.patch = extract_patch(slice.image, spot.x, spot.y);
    pair.expression.reserve(cols.size());
    for (const auto c : cols) pair.expression.push_back(spot.counts[c]);
    pair.slice_id = slice.slice_id;
    pair.spot_id = spot.spot_id;
    pairs.push_back(std::move(pair));
  }
  local.built = pairs.size();
  if (report) *report = std::move(local);
  return pairs;
}

DihedralTransform DihedralTransform::from_index(int index) {
  require(index >= 0 && index < 8, ErrorKind::OutOfBounds, "dihedral index must be in [0, 8)");
  return {index % 4, index >= 4};
}

Raster apply_transform(const Raster& patch, DihedralTransform t) {
  require(patch.height() == patch.width(), ErrorKind::ShapeMismatch, "dihedral transforms need a square raster");
  if (t.is_identity()) return patch;
  const int n = patch.width();
  Raster out(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      // Source coordinates after flipping horizontally, then rotating counter-clockwise.
      int sx = x;
      int sy = y;
      switch (t.quarter_turns) {
        case 1: sx = n - 1 - y; sy = x; break;
        case 2: sx = n - 1 - x; sy = n - 1 - y; break;
        case 3: sx = y; sy = n - 1 - x; break;
        default: break;
      }
      if (t.flip) sx = n - 1 - sx;
      for (int c = 0; c < Raster::kChannels; ++c) out.at(y, x, c) = patch.at(sy, sx, c);
    }
  }
  return out;
}

DihedralTransform sample_transform(AugmentRng& rng) {
  return DihedralTransform::from_index(static_cast<int>(rng() % 8));
}

std::pair<PatchSpotPair, PatchSpotPair> augment_pair(const PatchSpotPair& pair, AugmentRng& rng) {
  const auto first = sample_transform(rng);
  const auto second = sample_transform(rng);
  PatchSpotPair a{apply_transform(pair.patch, first), pair.expression, pair.slice_id, pair.spot_id};
  PatchSpotPair b{apply_transform(pair.patch, second), pair.expression, pair.slice_id, pair.spot_id};
  return {std::move(a), std::move(b)};
}

std::string to_string(PanelMode mode) { return mode == PanelMode::HVG ? "hvg" : "heg"; }

PanelMode parse_panel_mode(const std::string& text) {
  if (text == "hvg" || text == "HVG") return PanelMode::HVG;
  if (text == "heg" || text == "HEG") return PanelMode::HEG;
  fail(ErrorKind::ParseError, "unknown panel mode '" + text + "' (expected hvg or heg)");
}

}  // namespace histex
