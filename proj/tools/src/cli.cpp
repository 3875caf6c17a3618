#include "app.hpp"

#include <histex/error.hpp>
#include <histex/synthetic.hpp>

#include <CLI11.hpp>

#include <ostream>
#include <random>

namespace histex::app {
namespace {

std::uint64_t random_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"histex: contrastive histology/expression encoders with retrieval-based imputation"};
  app.set_config("--config", "", "Flat key=value file; keys are long flag names without dashes");
  app.require_subcommand(1, 1);
  app.fallthrough();

  RunConfig cfg;
  std::string panel = "hvg", loss = "image_centric", backbone = "compact";
  std::string manifest, workdir, backbone_weights;
  bool no_augment = false;
  int lanes = static_cast<int>(cfg.train.lanes);
  SyntheticSpec synth;

  app.add_option("--manifest", manifest, "Dataset manifest (JSON)");
  app.add_option("--workdir", workdir, "Directory for every artifact");
  app.add_option("--panel", panel, "Gene panel criterion")->check(CLI::IsMember({"hvg", "heg"}, CLI::ignore_case));
  app.add_option("--panel-size", cfg.panel_size, "Genes kept in the panel")->check(CLI::PositiveNumber);
  app.add_option("--epochs", cfg.train.epochs, "Training epochs");
  app.add_option("--batch-size", cfg.train.batch_size, "Pairs per gradient step");
  app.add_option("--lr", cfg.train.learning_rate, "AdamW learning rate");
  app.add_option("--weight-decay", cfg.train.weight_decay, "AdamW decoupled weight decay");
  app.add_option("--temperature", cfg.train.loss.temperature, "Softmax temperature");
  app.add_option("--spot-loss-weight", cfg.train.loss.spot_loss_weight, "Weight of the spot-side term (image_centric)");
  app.add_option("--split", cfg.train.split_fraction, "Train fraction of the internal train/test split");
  app.add_option("--embed-dim", cfg.train.embed_dim, "Embedding width d_o");
  app.add_option("--backbone", backbone, "Image backbone")
      ->check(CLI::IsMember({"compact", "residual50"}, CLI::ignore_case));
  app.add_option("--backbone-weights", backbone_weights, "Checkpoint providing image.backbone.* tensors");
  app.add_option("--lanes", lanes, "Fixed work partition for per-sample passes")->check(CLI::PositiveNumber);
  app.add_option("--k", cfg.k, "Neighbours averaged per query");
  app.add_option("--seed", cfg.seed, "Seed for every stochastic stage (random when omitted)");
  app.add_option("--loss", loss, "Contrastive objective")
      ->check(CLI::IsMember({"image_centric", "clip_soft", "clip_hard"}, CLI::ignore_case));
  app.add_flag("--no-augment", no_augment, "Disable paired dihedral augmentation");
  app.add_option("--holdout", cfg.holdout, "Query slice id (repeatable; default: last manifest slice)");
  app.add_flag("--include-query-in-reference", cfg.include_query_in_reference,
               "Add query pairs to the retrieval bank (leaks query labels)");
  app.add_option("--synthetic-reference-spots", synth.reference_spots, "synth: reference spots");
  app.add_option("--synthetic-query-spots", synth.query_spots, "synth: query spots");

  auto* prepare = app.add_subcommand("prepare", "Select the panel and build patch/spot pairs");
  auto* train_cmd = app.add_subcommand("train", "Train the dual encoder on the reference pairs");
  auto* impute = app.add_subcommand("impute", "Predict query expression from the K nearest references");
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against the query slices");
  auto* exporter = app.add_subcommand("export-embeddings", "Write reference and query embeddings");
  auto* ablate = app.add_subcommand("ablate", "Run the loss x augmentation ablation grid");
  auto* synth_cmd = app.add_subcommand("synth", "Generate a clustered toy dataset into --workdir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (workdir.empty()) {
      err << "error: --workdir is required\n";
      return 2;
    }
    cfg.manifest = manifest;
    cfg.workdir = workdir;
    cfg.panel = parse_panel_mode(panel);
    cfg.train.loss.mode = parse_loss_mode(loss);
    cfg.train.backbone = nn::parse_backbone_kind(backbone);
    cfg.train.backbone_weights = backbone_weights;
    cfg.train.augment = !no_augment;
    cfg.train.lanes = static_cast<std::size_t>(lanes);
    if (!cfg.seed) {
      cfg.seed = random_seed();
      err << "no --seed given; using " << *cfg.seed << "\n";
    }
    cfg.train.seed = *cfg.seed;
    require(cfg.k >= 1, ErrorKind::KOutOfRange, "--k must be at least 1");

    const RunFiles files{cfg.workdir};
    if (*prepare) {
      cmd_prepare(cfg, err);
    } else if (*train_cmd) {
      cfg.train.validate();
      cmd_train(cfg, files, err);
    } else if (*impute) {
      cmd_impute(cfg, files, err);
    } else if (*evaluate) {
      cmd_evaluate(cfg, files, err);
    } else if (*exporter) {
      cmd_export_embeddings(cfg, files, err);
    } else if (*ablate) {
      cfg.train.validate();
      const auto cells = cmd_ablate(cfg, err);
      for (const auto& c : cells)
        if (!c.ok) return 2;
    } else if (*synth_cmd) {
      synth.seed = *cfg.seed;
      const auto path = write_synthetic(make_synthetic(synth), cfg.workdir);
      out << path.string() << "\n";
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::NonFiniteLoss ? 3 : 2;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace histex::app
