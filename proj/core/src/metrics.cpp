#include "histex/metrics.hpp"

#include "histex/error.hpp"
#include "internal/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace histex {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void check_pair(const Matrix& truth, const Matrix& prediction) {
  require(truth.rows() == prediction.rows() && truth.cols() == prediction.cols(), ErrorKind::ShapeMismatch,
          "truth is " + std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()) + ", prediction is " +
              std::to_string(prediction.rows()) + "x" + std::to_string(prediction.cols()));
  require(truth.allFinite() && prediction.allFinite(), ErrorKind::NonFiniteInput, "expression matrices must be finite");
}

}  // namespace

std::vector<double> rmse_per_gene(const Matrix& truth, const Matrix& prediction) {
  check_pair(truth, prediction);
  require(truth.rows() > 0, ErrorKind::EmptyInput, "RMSE needs at least one spot");
  std::vector<double> out(static_cast<size_t>(truth.cols()));
  for (Index g = 0; g < truth.cols(); ++g)
    out[static_cast<size_t>(g)] =
        std::sqrt((prediction.col(g) - truth.col(g)).squaredNorm() / static_cast<double>(truth.rows()));
  return out;
}

Matrix scale_by_max(const Matrix& expression) {
  Matrix out = expression;
  for (Index g = 0; g < expression.cols(); ++g) {
    if (expression.rows() == 0) break;
    const double m = expression.col(g).maxCoeff();
    if (m > 0.0) out.col(g) /= m;
    else out.col(g).setZero();
  }
  return out;
}

std::vector<double> ssim_per_gene(const Matrix& truth, const Matrix& prediction, const SsimConfig& config) {
  check_pair(truth, prediction);
  require(truth.rows() > 0, ErrorKind::EmptyInput, "SSIM needs at least one spot");
  const double n = static_cast<double>(truth.rows());
  const double c1 = config.c1 * config.c1;
  const double c2 = config.c2 * config.c2;
  std::vector<double> out(static_cast<size_t>(truth.cols()));
  for (Index g = 0; g < truth.cols(); ++g) {
    const auto t = truth.col(g).array();
    const auto p = prediction.col(g).array();
    const double mu_t = t.sum() / n;
    const double mu_p = p.sum() / n;
    const double var_t = (t - mu_t).square().sum() / n;
    const double var_p = (p - mu_p).square().sum() / n;
    const double cov = ((t - mu_t) * (p - mu_p)).sum() / n;
    out[static_cast<size_t>(g)] =
        ((2.0 * mu_p * mu_t + c1) * (2.0 * cov + c2)) / ((mu_p * mu_p + mu_t * mu_t + c1) * (var_p + var_t + c2));
  }
  return out;
}

std::vector<Index> top_indices(const double* values, Index n, int t) {
  std::vector<Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  const auto k = static_cast<std::ptrdiff_t>(std::min<Index>(t, n));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](Index a, Index b) {
    return values[a] > values[b] || (values[a] == values[b] && a < b);
  });
  idx.resize(static_cast<size_t>(k));
  return idx;
}

double hit_at_t(const Matrix& truth, const Matrix& prediction, int t) {
  check_pair(truth, prediction);
  require(t >= 1 && t <= truth.cols(), ErrorKind::TOutOfRange,
          "T=" + std::to_string(t) + " outside [1, " + std::to_string(truth.cols()) + "]");
  require(truth.rows() > 0, ErrorKind::EmptyInput, "Hit@T needs at least one spot");
  Index hits = 0;
  for (Index s = 0; s < truth.rows(); ++s) {
    auto pred = top_indices(prediction.data() + s * prediction.cols(), prediction.cols(), t);
    auto real = top_indices(truth.data() + s * truth.cols(), truth.cols(), t);
    std::sort(pred.begin(), pred.end());
    std::sort(real.begin(), real.end());
    std::vector<Index> common;
    std::set_intersection(pred.begin(), pred.end(), real.begin(), real.end(), std::back_inserter(common));
    if (!common.empty()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(truth.rows());
}

Summary summarize_values(const std::vector<double>& values) {
  require(!values.empty(), ErrorKind::EmptyInput, "cannot summarize an empty distribution");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  Summary s;
  s.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  return s;
}

MetricsReport summarize(const std::vector<double>& rmse, const std::vector<double>& ssim,
                        const std::map<int, double>& hits, Index n_spots, std::vector<std::string> genes) {
  MetricsReport r;
  r.genes = std::move(genes);
  r.rmse_per_gene = rmse;
  r.ssim_per_gene = ssim;
  r.rmse = summarize_values(rmse);
  r.ssim = summarize_values(ssim);
  r.hit_at = hits;
  r.n_spots = n_spots;
  return r;
}

MetricsReport evaluate_predictions(const Matrix& truth, const Matrix& prediction, const std::vector<std::string>& genes,
                                   const SsimConfig& config) {
  check_pair(truth, prediction);
  require(genes.empty() || static_cast<Index>(genes.size()) == truth.cols(), ErrorKind::ShapeMismatch,
          "gene names disagree with matrix width");
  require((truth.array() >= 0.0).all() && (prediction.array() >= 0.0).all(), ErrorKind::NonFiniteInput,
          "expression values must be non-negative before max scaling");
  const auto rmse = rmse_per_gene(truth, prediction);
  const auto ssim = ssim_per_gene(scale_by_max(truth), scale_by_max(prediction), config);
  std::map<int, double> hits;
  for (int t = 1; t <= 3; ++t)
    if (t <= truth.cols()) hits[t] = hit_at_t(truth, prediction, t);
  return summarize(rmse, ssim, hits, truth.rows(), genes);
}

std::string MetricsReport::to_json() const {
  json hits = json::object();
  for (const auto& [t, v] : hit_at) hits[std::to_string(t)] = v;
  json j = {{"n_spots", n_spots},
            {"rmse", {{"median", rmse.median}, {"mean", rmse.mean}, {"per_gene", rmse_per_gene}}},
            {"ssim", {{"median", ssim.median}, {"mean", ssim.mean}, {"per_gene", ssim_per_gene}}},
            {"hit_at", hits},
            {"genes", genes}};
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  MetricsReport r;
  try {
    const json j = json::parse(text);
    r.n_spots = j.at("n_spots").get<Index>();
    r.rmse = {j.at("rmse").at("median").get<double>(), j.at("rmse").at("mean").get<double>()};
    r.ssim = {j.at("ssim").at("median").get<double>(), j.at("ssim").at("mean").get<double>()};
    r.rmse_per_gene = j.at("rmse").at("per_gene").get<std::vector<double>>();
    r.ssim_per_gene = j.at("ssim").at("per_gene").get<std::vector<double>>();
    for (const auto& [k, v] : j.at("hit_at").items()) r.hit_at[std::stoi(k)] = v.get<double>();
    r.genes = j.value("genes", std::vector<std::string>{});
  } catch (const std::exception& e) {
    fail(ErrorKind::ParseError, std::string("metrics report: ") + e.what());
  }
  return r;
}

bool MetricsReport::operator==(const MetricsReport& o) const {
  return genes == o.genes && rmse_per_gene == o.rmse_per_gene && ssim_per_gene == o.ssim_per_gene &&
         rmse.median == o.rmse.median && rmse.mean == o.rmse.mean && ssim.median == o.ssim.median &&
         ssim.mean == o.ssim.mean && hit_at == o.hit_at && n_spots == o.n_spots;
}

void save_metrics_json(const MetricsReport& report, const fs::path& path) {
  auto out = detail::open_output(path);
  out << report.to_json() << '\n';
}

MetricsReport load_metrics_json(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::ParseError, "cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return MetricsReport::from_json(text);
}

void save_per_gene_csv(const MetricsReport& report, const fs::path& path) {
  auto out = detail::open_output(path);
  std::string buf = "gene,rmse,ssim\n";
  for (std::size_t g = 0; g < report.rmse_per_gene.size(); ++g) {
    buf += (g < report.genes.size() ? report.genes[g] : "g" + std::to_string(g + 1)) + ",";
    detail::append_double(buf, report.rmse_per_gene[g]);
    buf += ",";
    detail::append_double(buf, report.ssim_per_gene[g]);
    buf += "\n";
  }
  out << buf;
}

}  // namespace histex
