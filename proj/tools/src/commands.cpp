#include "app.hpp"

#include <histex/dataset_io.hpp>
#include <histex/error.hpp>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>

namespace histex::app {
namespace {

using json = nlohmann::json;

std::vector<const PatchSpotPair*> pointers(const std::vector<PatchSpotPair>& pairs) {
  std::vector<const PatchSpotPair*> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(&p);
  return out;
}

std::vector<SpotId> ids_of(const std::vector<PatchSpotPair>& pairs) {
  std::vector<SpotId> ids;
  ids.reserve(pairs.size());
  for (const auto& p : pairs) ids.push_back({p.slice_id, p.spot_id});
  return ids;
}

PairsArchive load_archive(const fs::path& dir) {
  require(fs::exists(dir / "pairs.csv"), ErrorKind::ParseError,
          "no pairs archive in " + dir.string() + " (run `histex prepare` first)");
  return load_pairs(dir);
}

void write_run_info(const RunConfig& config, const RunFiles& out) {
  json info = {{"seed", config.train.seed},
               {"panel", to_string(config.panel)},
               {"panel_size", config.panel_size},
               {"k", config.k},
               {"holdout", config.holdout},
               {"include_query_in_reference", config.include_query_in_reference},
               {"train", json::parse(to_json(config.train))}};
  fs::create_directories(out.dir);
  std::ofstream f(out.run_info());
  require(f.good(), ErrorKind::IoError, "cannot write " + out.run_info().string());
  f << info.dump(2) << '\n';
}

Checkpoint load_trained(const RunFiles& out) {
  require(fs::exists(out.checkpoint()), ErrorKind::ParseError,
          "no checkpoint at " + out.checkpoint().string() + " (run `histex train` first)");
  return load_checkpoint(out.checkpoint());
}

/// Bank of reference pairs, optionally with the query pairs appended (leaks query labels).
EmbeddingBank reference_bank(const RunConfig& config, const Checkpoint& ckpt, const PairsArchive& reference,
                             const PairsArchive& query) {
  require(reference.gene_names == ckpt.gene_names, ErrorKind::ShapeMismatch,
          "reference archive genes differ from the checkpoint's panel");
  auto pairs = pointers(reference.pairs);
  if (config.include_query_in_reference)
    for (const auto& p : query.pairs) pairs.push_back(&p);
  return build_bank(*ckpt.model, pairs, reference.gene_names, config.train.lanes);
}

}  // namespace

DatasetSummary cmd_prepare(const RunConfig& config, std::ostream& log) {
  require(!config.manifest.empty(), ErrorKind::ParseError, "prepare needs --manifest");
  auto slices = load_manifest(config.manifest);
  require(!slices.empty(), ErrorKind::EmptyInput, "manifest lists no slices");

  std::vector<std::string> holdout = config.holdout;
  if (holdout.empty()) holdout.push_back(slices.back().slice_id);
  for (const auto& h : holdout)
    require(std::any_of(slices.begin(), slices.end(), [&](const SliceDataset& s) { return s.slice_id == h; }),
            ErrorKind::ParseError, "holdout slice '" + h + "' is not in the manifest");
  auto is_query = [&](const SliceDataset& s) {
    return std::find(holdout.begin(), holdout.end(), s.slice_id) != holdout.end();
  };

  std::vector<const SliceDataset*> reference_slices;
  for (auto& s : slices) {
    normalize_slice(s);
    if (!is_query(s)) reference_slices.push_back(&s);
  }
  require(!reference_slices.empty(), ErrorKind::EmptyInput, "every slice is held out; nothing left for reference");

  const GenePanel panel = select_panel(reference_slices, config.panel, config.panel_size);
  std::vector<PatchSpotPair> reference, query;
  for (const auto& s : slices) {
    PairBuildReport report;
    auto pairs = build_pairs(s, panel, &report);
    if (report.skipped_out_of_bounds)
      log << "slice " << s.slice_id << ": skipped " << report.skipped_out_of_bounds
          << " spots whose patch leaves the slide\n";
    auto& dst = is_query(s) ? query : reference;
    std::move(pairs.begin(), pairs.end(), std::back_inserter(dst));
  }

  const Layout layout{config.workdir};
  save_panel(panel, layout.panel());
  save_pairs(reference, panel.genes, layout.reference());
  save_pairs(query, panel.genes, layout.query());

  DatasetSummary summary;
  const auto parent = fs::absolute(config.manifest).parent_path().filename().string();
  summary.dataset = (parent.empty() ? std::string("dataset") : parent) + "_" + to_string(config.panel);
  summary.training_size = reference.size();
  summary.testing_size = query.size();
  summary.gene_size = panel.size();
  save_summary(summary, layout.summary());
  log << "prepared " << summary.training_size << " reference and " << summary.testing_size << " query pairs over "
      << summary.gene_size << " genes\n";
  return summary;
}

Checkpoint cmd_train(const RunConfig& config, const RunFiles& out, std::ostream& log) {
  const Layout layout{config.workdir};
  const auto reference = load_archive(layout.reference());
  write_run_info(config, out);
  log << "training on " << reference.pairs.size() << " pairs, seed " << config.train.seed << "\n";
  auto ckpt = train(config.train, reference.pairs, reference.gene_names, nullptr, [&](const EpochRecord& r) {
    log << "epoch " << r.epoch << "/" << config.train.epochs << " train_loss " << r.train_loss << " test_loss "
        << r.test_loss << "\n";
  });
  save_checkpoint(ckpt, out.checkpoint());
  save_loss_curve(ckpt.history, out.losses());
  log << "best test loss " << ckpt.best_test_loss << " at epoch " << ckpt.epoch_of_best << "\n";
  return ckpt;
}

ExpressionTable cmd_impute(const RunConfig& config, const RunFiles& out, std::ostream& log) {
  const Layout layout{config.workdir};
  const auto ckpt = load_trained(out);
  const auto reference = load_archive(layout.reference());
  const auto query = load_archive(layout.query());
  require(query.gene_names == ckpt.gene_names, ErrorKind::ShapeMismatch,
          "query archive genes differ from the checkpoint's panel");

  const auto bank = reference_bank(config, ckpt, reference, query);
  save_bank(bank, out.bank());
  std::vector<const Raster*> patches;
  for (const auto& p : query.pairs) patches.push_back(&p.patch);

  ExpressionTable table;
  table.ids = ids_of(query.pairs);
  table.gene_names = query.gene_names;
  table.values = impute_batch(patches, *ckpt.model, bank, config.k, config.train.lanes);
  save_expression_table(table, out.predictions());
  log << "imputed " << table.values.rows() << " query spots from a bank of " << bank.size() << " (K=" << config.k
      << ")\n";
  return table;
}

MetricsReport cmd_evaluate(const RunConfig& config, const RunFiles& out, std::ostream& log) {
  const Layout layout{config.workdir};
  require(fs::exists(out.predictions()), ErrorKind::ParseError,
          "no predictions at " + out.predictions().string() + " (run `histex impute` first)");
  const auto predicted = load_expression_table(out.predictions());
  const auto query = load_archive(layout.query());
  require(predicted.gene_names.size() == query.gene_names.size(), ErrorKind::ShapeMismatch,
          "predictions have " + std::to_string(predicted.gene_names.size()) + " genes, query slices have " +
              std::to_string(query.gene_names.size()));
  require(predicted.gene_names == query.gene_names, ErrorKind::ShapeMismatch,
          "prediction and query gene panels differ");

  std::map<std::pair<std::string, std::string>, const PatchSpotPair*> by_id;
  for (const auto& p : query.pairs) by_id[{p.slice_id, p.spot_id}] = &p;
  require(by_id.size() == predicted.ids.size(), ErrorKind::ShapeMismatch,
          "predictions cover " + std::to_string(predicted.ids.size()) + " spots, query has " +
              std::to_string(by_id.size()));
  Matrix truth(predicted.values.rows(), predicted.values.cols());
  for (std::size_t r = 0; r < predicted.ids.size(); ++r) {
    const auto it = by_id.find({predicted.ids[r].slice_id, predicted.ids[r].spot_id});
    require(it != by_id.end(), ErrorKind::ShapeMismatch,
            "prediction for unknown spot " + format_spot_id(predicted.ids[r]));
    for (Index g = 0; g < truth.cols(); ++g)
      truth(static_cast<Index>(r), g) = it->second->expression[static_cast<std::size_t>(g)];
  }

  const auto report = evaluate_predictions(truth, predicted.values, predicted.gene_names);
  save_metrics_json(report, out.metrics());
  save_per_gene_csv(report, out.per_gene());
  log << "rmse median " << report.rmse.median << " mean " << report.rmse.mean << "; ssim median "
      << report.ssim.median << " mean " << report.ssim.mean;
  for (const auto& [t, v] : report.hit_at) log << "; hit@" << t << " " << v;
  log << "\n";
  return report;
}

void cmd_export_embeddings(const RunConfig& config, const RunFiles& out, std::ostream& log) {
  const Layout layout{config.workdir};
  const auto ckpt = load_trained(out);
  const auto reference = load_archive(layout.reference());
  const auto query = load_archive(layout.query());
  const auto bank = reference_bank(config, ckpt, reference, query);
  std::vector<const Raster*> patches;
  for (const auto& p : query.pairs) patches.push_back(&p.patch);
  const Matrix q = ckpt.model->encode_images(patches, Mode::Eval, nullptr, config.train.lanes).rows;
  export_embeddings(bank, q, ids_of(query.pairs), out.embeddings());
  log << "exported " << bank.size() << " reference and " << q.rows() << " query embeddings\n";
}

std::vector<AblationCell> cmd_ablate(const RunConfig& config, std::ostream& log) {
  std::vector<AblationCell> cells = {{"full", LossMode::ImageCentric, true},
                                     {"wo_data", LossMode::ImageCentric, false},
                                     {"wo_loss", LossMode::ClipSoft, true},
                                     {"wo_loss_wo_data", LossMode::ClipSoft, false}};
  for (auto& cell : cells) {
    RunConfig c = config;
    c.train.loss.mode = cell.loss;
    c.train.augment = cell.augment;
    const RunFiles files{config.workdir / "ablation" / cell.name};
    log << "== cell " << cell.name << "\n";
    try {
      cmd_train(c, files, log);
      cmd_impute(c, files, log);
      cell.metrics = cmd_evaluate(c, files, log);
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
      log << "cell " << cell.name << " failed: " << cell.error << "\n";
    }
  }
  save_ablation_report(cells, config.workdir / "ablation.csv");
  return cells;
}

void save_ablation_report(const std::vector<AblationCell>& cells, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorKind::IoError, "cannot write " + path.string());
  out << "cell,loss,augment,status,rmse_median,rmse_mean,ssim_median,ssim_mean,hit1,hit2,hit3\n";
  out.precision(17);
  for (const auto& c : cells) {
    out << c.name << "," << to_string(c.loss) << "," << (c.augment ? "on" : "off") << ",";
    if (!c.ok) {
      std::string msg = c.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << "failed: " << msg << ",,,,,,,\n";
      continue;
    }
    out << "ok," << c.metrics.rmse.median << "," << c.metrics.rmse.mean << "," << c.metrics.ssim.median << ","
        << c.metrics.ssim.mean;
    for (int t = 1; t <= 3; ++t) {
      out << ",";
      if (const auto it = c.metrics.hit_at.find(t); it != c.metrics.hit_at.end()) out << it->second;
    }
    out << "\n";
  }
}

}  // namespace histex::app
