#pragma once

#include "histex/data.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace histex {

/// Clustered toy tissue: every latent cluster owns a visual motif (palette + texture) and an
/// expression signature. Spots sit on a 256-pixel grid so patches never overlap.
struct SyntheticSpec {
  int clusters = 5;
  int genes = 64;
  int reference_slices = 4;
  int reference_spots = 500;
  int query_spots = 100;
  /// Expected library size of each spot.
  double library_size = 4000.0;
  /// Amplitude of per-pixel noise in 8-bit units.
  double pixel_noise = 18.0;
  std::uint64_t seed = 7;
};

struct SyntheticDataset {
  std::vector<SliceDataset> reference;
  std::vector<SliceDataset> query;
  /// Cluster label per spot, keyed like the slices: reference_labels[slice][spot].
  std::vector<std::vector<int>> reference_labels;
  std::vector<std::vector<int>> query_labels;
};

SyntheticDataset make_synthetic(const SyntheticSpec& spec);

/// Writes slides (PNG), spot tables (CSV) and `manifest.json` to `dir`. Query slices come last.
std::filesystem::path write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir);

/// Gene index of the dominant gene of a cluster signature.
int dominant_gene(const SyntheticSpec& spec, int cluster);

}  // namespace histex
