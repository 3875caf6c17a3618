#pragma once

#include <histex/data.hpp>
#include <histex/dataset_io.hpp>
#include <histex/metrics.hpp>
#include <histex/retrieval.hpp>
#include <histex/training.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace histex::app {

namespace fs = std::filesystem;

/// Everything a command may need. Flags override the config file.
struct RunConfig {
  fs::path manifest;
  fs::path workdir;
  PanelMode panel = PanelMode::HVG;
  std::size_t panel_size = kMaxPanelSize;
  int k = kDefaultTopK;
  /// Query slices; defaults to the manifest's last slice.
  std::vector<std::string> holdout;
  bool include_query_in_reference = false;
  /// Resolved to a concrete value before any command runs.
  std::optional<std::uint64_t> seed;
  TrainConfig train;
};

/// Files produced inside the work directory.
struct Layout {
  fs::path root;

  fs::path panel() const { return root / "panel.csv"; }
  fs::path reference() const { return root / "reference"; }
  fs::path query() const { return root / "query"; }
  fs::path summary() const { return root / "summary.csv"; }
};

/// Files produced by one train/impute/evaluate pipeline.
struct RunFiles {
  fs::path dir;

  fs::path checkpoint() const { return dir / "model.ckpt"; }
  fs::path losses() const { return dir / "losses.csv"; }
  fs::path run_info() const { return dir / "run.json"; }
  fs::path bank() const { return dir / "bank"; }
  fs::path predictions() const { return dir / "predictions.csv"; }
  fs::path metrics() const { return dir / "metrics.json"; }
  fs::path per_gene() const { return dir / "per_gene_metrics.csv"; }
  fs::path embeddings() const { return dir / "embeddings.csv"; }
};

DatasetSummary cmd_prepare(const RunConfig& config, std::ostream& log);
Checkpoint cmd_train(const RunConfig& config, const RunFiles& out, std::ostream& log);
ExpressionTable cmd_impute(const RunConfig& config, const RunFiles& out, std::ostream& log);
MetricsReport cmd_evaluate(const RunConfig& config, const RunFiles& out, std::ostream& log);
void cmd_export_embeddings(const RunConfig& config, const RunFiles& out, std::ostream& log);

struct AblationCell {
  std::string name;
  LossMode loss = LossMode::ImageCentric;
  bool augment = true;
  bool ok = false;
  std::string error;
  MetricsReport metrics;
};

/// {image_centric, clip_soft} x {augment on, off}; each cell lives in `<workdir>/ablation/<name>`.
/// A failing cell is recorded and the remaining cells still run.
std::vector<AblationCell> cmd_ablate(const RunConfig& config, std::ostream& log);
void save_ablation_report(const std::vector<AblationCell>& cells, const fs::path& path);

/// Parses argv, runs the selected subcommand and maps failures to exit codes:
/// 0 success, 2 usage or data error, 3 numeric failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace histex::app
