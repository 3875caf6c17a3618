#pragma once

#include "histex/types.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace histex {

/// All expression matrices here are spots x genes: per-gene metrics run down a column.

struct SsimConfig {
  double c1 = 0.01;
  double c2 = 0.03;
};

std::vector<double> rmse_per_gene(const Matrix& truth, const Matrix& prediction);

/// Divides each gene column by its maximum over spots; all-zero columns stay zero.
Matrix scale_by_max(const Matrix& expression);

/// Global structural similarity per gene with population moments; inputs are expected max-scaled.
std::vector<double> ssim_per_gene(const Matrix& truth, const Matrix& prediction, const SsimConfig& config = {});

/// Fraction of spots whose top-T predicted and top-T true gene sets intersect.
double hit_at_t(const Matrix& truth, const Matrix& prediction, int t);

/// Indices of the T largest values, ties to the lower index.
std::vector<Index> top_indices(const double* values, Index n, int t);

struct Summary {
  double median = 0.0;
  double mean = 0.0;
};
Summary summarize_values(const std::vector<double>& values);

struct MetricsReport {
  std::vector<std::string> genes;
  std::vector<double> rmse_per_gene;
  std::vector<double> ssim_per_gene;
  Summary rmse;
  Summary ssim;
  std::map<int, double> hit_at;
  Index n_spots = 0;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
  bool operator==(const MetricsReport&) const;
};

MetricsReport summarize(const std::vector<double>& rmse, const std::vector<double>& ssim,
                        const std::map<int, double>& hits, Index n_spots, std::vector<std::string> genes = {});

/// RMSE on the given values, SSIM on independently max-scaled copies, Hit@{1,2,3}.
MetricsReport evaluate_predictions(const Matrix& truth, const Matrix& prediction,
                                   const std::vector<std::string>& genes = {}, const SsimConfig& config = {});

void save_metrics_json(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport load_metrics_json(const std::filesystem::path& path);
/// `gene,rmse,ssim`.
void save_per_gene_csv(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace histex
