#pragma once

#include "histex/data.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace histex {

/// Reads `manifest.json` and every referenced slide PNG and spots CSV.
/// Relative paths resolve against the manifest's directory.
std::vector<SliceDataset> load_manifest(const std::filesystem::path& manifest_path);

/// Header `spot_id,x,y,<gene_1>,...,<gene_G>`. Fills gene_names and spots of `slice`.
void load_spots_csv(const std::filesystem::path& path, SliceDataset& slice);
void save_spots_csv(const SliceDataset& slice, const std::filesystem::path& path);

struct ManifestEntry {
  std::string slice_id;
  std::filesystem::path image;
  std::filesystem::path spots;
};
void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

/// Pairs archive: `<dir>/pairs.csv` plus `<dir>/patches/<slice_id>_<spot_id>.png`.
void save_pairs(const std::vector<PatchSpotPair>& pairs, const std::vector<std::string>& gene_names,
                const std::filesystem::path& dir);

struct PairsArchive {
  std::vector<std::string> gene_names;
  std::vector<PatchSpotPair> pairs;
};
PairsArchive load_pairs(const std::filesystem::path& dir);

/// Panel file: CSV `gene,score,rank` with 1-based rank. The file does not carry the mode.
void save_panel(const GenePanel& panel, const std::filesystem::path& path);
GenePanel load_panel(const std::filesystem::path& path, PanelMode mode = PanelMode::HEG);

/// Dataset bookkeeping row in the layout of a "training size / testing size / gene size" table.
struct DatasetSummary {
  std::string dataset;
  std::size_t training_size = 0;
  std::size_t testing_size = 0;
  std::size_t gene_size = 0;
};
void save_summary(const DatasetSummary& summary, const std::filesystem::path& path);

}  // namespace histex
