#include "histex/training.hpp"

#include "histex/error.hpp"
#include "histex/optim.hpp"
#include "histex/parallel.hpp"
#include "internal/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace histex {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum class Stream : std::uint64_t { Augment = 1, Shuffle = 2, Dropout = 3, Split = 4 };

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t epoch, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

struct EpochItem {
  std::size_t source;
  DihedralTransform transform;
};

Matrix expression_rows(const std::vector<const PatchSpotPair*>& pairs) {
  const Index d = pairs.empty() ? 0 : static_cast<Index>(pairs.front()->expression.size());
  Matrix x(static_cast<Index>(pairs.size()), d);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    require(static_cast<Index>(pairs[i]->expression.size()) == d, ErrorKind::ShapeMismatch,
            "pair " + pairs[i]->spot_id + " has a different expression length");
    for (Index g = 0; g < d; ++g) x(static_cast<Index>(i), g) = pairs[i]->expression[static_cast<size_t>(g)];
  }
  return x;
}

json train_config_to_json(const TrainConfig& c) {
  json blocks = json::array();
  for (const auto& b : c.compact.blocks)
    blocks.push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"stride", b.stride}, {"padding", b.padding}});
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"split_fraction", c.split_fraction},
          {"seed", c.seed},
          {"temperature", c.loss.temperature},
          {"loss", to_string(c.loss.mode)},
          {"spot_loss_weight", c.loss.spot_loss_weight},
          {"augment", c.augment},
          {"embed_dim", c.embed_dim},
          {"backbone", nn::to_string(c.backbone)},
          {"compact_blocks", blocks},
          {"backbone_weights", c.backbone_weights.string()},
          {"lanes", c.lanes}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.split_fraction = j.at("split_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.loss.temperature = j.at("temperature").get<double>();
  c.loss.mode = parse_loss_mode(j.at("loss").get<std::string>());
  c.loss.spot_loss_weight = j.at("spot_loss_weight").get<double>();
  c.augment = j.at("augment").get<bool>();
  c.embed_dim = j.at("embed_dim").get<Index>();
  c.backbone = nn::parse_backbone_kind(j.at("backbone").get<std::string>());
  c.compact.blocks.clear();
  for (const auto& b : j.at("compact_blocks"))
    c.compact.blocks.push_back({b.at("out_channels").get<int>(), b.at("kernel").get<int>(), b.at("stride").get<int>(),
                                b.at("padding").get<int>()});
  c.backbone_weights = j.at("backbone_weights").get<std::string>();
  c.lanes = j.at("lanes").get<std::size_t>();
  return c;
}

std::vector<const PatchSpotPair*> select(const std::vector<PatchSpotPair>& pairs, const std::vector<std::size_t>& idx) {
  std::vector<const PatchSpotPair*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&pairs[i]);
  return out;
}

}  // namespace

std::string to_json(const TrainConfig& config) { return train_config_to_json(config).dump(2); }

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("batch size must be >= 2 for contrastive batches");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw std::invalid_argument("split fraction must lie in (0,1)");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
  if (embed_dim < 1) throw std::invalid_argument("embedding dimension must be positive");
  if (lanes < 1) throw std::invalid_argument("lanes must be >= 1");
  loss.validate();
}

SplitIndices split_indices(std::size_t n, double fraction, std::uint64_t seed) {
  require(n >= 2, ErrorKind::TooFewPairs, "need at least 2 pairs to split, got " + std::to_string(n));
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split fraction must lie in (0,1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = stream_rng(seed, 0, Stream::Split);
  std::shuffle(order.begin(), order.end(), rng);
  const auto cut = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  return s;
}

std::pair<std::vector<PatchSpotPair>, std::vector<PatchSpotPair>> split_dataset(const std::vector<PatchSpotPair>& pairs,
                                                                                double fraction, std::uint64_t seed) {
  const auto s = split_indices(pairs.size(), fraction, seed);
  std::pair<std::vector<PatchSpotPair>, std::vector<PatchSpotPair>> out;
  for (auto i : s.train) out.first.push_back(pairs[i]);
  for (auto i : s.test) out.second.push_back(pairs[i]);
  return out;
}

LossEvaluation batch_gradients(const DualEncoder& model, std::span<const Raster* const> patches,
                               const Matrix& expressions, const LossConfig& loss, Mode mode, nn::DropoutRng* rng,
                               nn::GradBuffer& grads, std::size_t lanes) {
  require(static_cast<Index>(patches.size()) == expressions.rows(), ErrorKind::ShapeMismatch,
          "patch and expression batch sizes differ");
  const Matrix features = model.image_features(patches, lanes);
  nn::HeadCache image_cache;
  const Matrix image_emb = model.image_head().forward(features, mode, rng, &image_cache);
  const Matrix spot_in = model.spot_linear().forward(expressions);
  nn::HeadCache spot_cache;
  const Matrix spot_emb = model.spot_head().forward(spot_in, mode, rng, &spot_cache);

  LossEvaluation eval = evaluate_contrastive(image_emb, spot_emb, loss, true);
  if (!std::isfinite(eval.value)) return eval;

  const Matrix dfeatures = model.image_head().backward(image_cache, eval.grad_image, grads);
  const Matrix dspot_in = model.spot_head().backward(spot_cache, eval.grad_spot, grads);
  model.spot_linear().backward(expressions, dspot_in, grads);

  // Per-sample backbone passes are recomputed with caches; lane buffers are reduced in lane order.
  const auto ranges = partition_lanes(patches.size(), lanes);
  std::vector<nn::GradBuffer> lane_grads(ranges.size(), nn::GradBuffer(model.params()));
  run_lanes(ranges, [&](const LaneRange& r) {
    for (std::size_t i = r.begin; i < r.end; ++i) {
      nn::BackboneCache cache;
      model.backbone().forward(nn::Backbone::to_feature_map(*patches[i]), &cache);
      model.backbone().backward(cache, dfeatures.row(static_cast<Index>(i)).transpose(), lane_grads[r.lane]);
    }
  });
  for (const auto& g : lane_grads) grads.accumulate(g);
  return eval;
}

double evaluate_loss(const DualEncoder& model, const std::vector<const PatchSpotPair*>& pairs, const LossConfig& loss,
                     int batch_size, std::size_t lanes) {
  if (pairs.empty()) return 0.0;
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  double total = 0.0;
  for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(pairs.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const PatchSpotPair*> batch(pairs.begin() + static_cast<std::ptrdiff_t>(start),
                                            pairs.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<const Raster*> patches;
    for (const auto* p : batch) patches.push_back(&p->patch);
    const auto image_emb = model.encode_images(patches, Mode::Eval, nullptr, lanes);
    const auto spot_emb = model.encode_spots(expression_rows(batch), Mode::Eval);
    total += contrastive_loss(image_emb.rows, spot_emb.rows, loss) * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(pairs.size());
}

double evaluate_loss(const Checkpoint& checkpoint, const std::vector<PatchSpotPair>& pairs) {
  std::vector<const PatchSpotPair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  return evaluate_loss(*checkpoint.model, ptrs, checkpoint.config.loss, checkpoint.config.batch_size,
                       checkpoint.config.lanes);
}

Checkpoint train(const TrainConfig& config, const std::vector<PatchSpotPair>& pairs,
                 const std::vector<std::string>& gene_names, TrainTrace* trace, const EpochCallback& on_epoch) {
  config.validate();
  require(!pairs.empty(), ErrorKind::TooFewPairs, "training needs at least one pair");
  const auto d = static_cast<Index>(pairs.front().expression.size());
  require(d > 0, ErrorKind::ShapeMismatch, "expression vectors are empty");
  for (const auto& p : pairs) {
    require(static_cast<Index>(p.expression.size()) == d, ErrorKind::ShapeMismatch,
            "pair " + p.slice_id + "/" + p.spot_id + " has a different expression length");
    require(std::all_of(p.expression.begin(), p.expression.end(), [](double v) { return std::isfinite(v); }),
            ErrorKind::NonFiniteInput, "pair " + p.slice_id + "/" + p.spot_id + " has non-finite expression");
  }
  require(gene_names.empty() || static_cast<Index>(gene_names.size()) == d, ErrorKind::ShapeMismatch,
          "gene name count differs from expression length");

  const auto split = split_indices(pairs.size(), config.split_fraction, config.seed);
  require(split.train.size() >= static_cast<std::size_t>(config.batch_size), ErrorKind::TooFewPairs,
          "batch size " + std::to_string(config.batch_size) + " exceeds train split of " +
              std::to_string(split.train.size()) + " pairs");
  const auto train_ptrs = select(pairs, split.train);
  const auto test_ptrs = select(pairs, split.test);
  if (trace) {
    trace->train_indices = split.train;
    trace->test_indices = split.test;
    trace->augment_count.assign(pairs.size(), 0);
    trace->gradient_count.assign(pairs.size(), 0);
  }

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.gene_names = gene_names;
  EncoderConfig enc;
  enc.gene_dim = d;
  enc.embed_dim = config.embed_dim;
  enc.backbone = config.backbone;
  enc.compact = config.compact;
  enc.init_seed = config.seed;
  ckpt.model = std::make_unique<DualEncoder>(enc);
  if (!config.backbone_weights.empty()) ckpt.model->load_backbone_weights(config.backbone_weights);
  DualEncoder& model = *ckpt.model;

  AdamW optimizer(model.params(), {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
  nn::GradBuffer grads(model.params());
  std::vector<std::vector<double>> best_params;
  double best = std::numeric_limits<double>::infinity();
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    auto augment_rng = stream_rng(config.seed, static_cast<std::uint64_t>(epoch), Stream::Augment);
    auto shuffle_rng = stream_rng(config.seed, static_cast<std::uint64_t>(epoch), Stream::Shuffle);
    auto dropout_rng = stream_rng(config.seed, static_cast<std::uint64_t>(epoch), Stream::Dropout);

    std::vector<EpochItem> items;
    items.reserve(split.train.size() * (config.augment ? 2 : 1));
    for (auto idx : split.train) {
      if (config.augment) {
        // Two independent draws per pair, the expression is shared.
        items.push_back({idx, sample_transform(augment_rng)});
        items.push_back({idx, sample_transform(augment_rng)});
        if (trace) ++trace->augment_count[idx];
      } else {
        items.push_back({idx, DihedralTransform{}});
      }
    }
    std::shuffle(items.begin(), items.end(), shuffle_rng);

    EpochRecord record;
    record.epoch = epoch;
    record.epoch_size = items.size();
    record.batches = items.size() / batch;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < record.batches; ++b) {
      std::vector<Raster> rasters;
      std::vector<const Raster*> patches;
      std::vector<const PatchSpotPair*> members;
      rasters.reserve(batch);
      for (std::size_t k = b * batch; k < (b + 1) * batch; ++k) {
        const auto& item = items[k];
        rasters.push_back(apply_transform(pairs[item.source].patch, item.transform));
        members.push_back(&pairs[item.source]);
        if (trace) ++trace->gradient_count[item.source];
      }
      for (const auto& r : rasters) patches.push_back(&r);

      grads.zero();
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
      LossEvaluation eval;
      try {
        eval = batch_gradients(model, patches, expression_rows(members), config.loss, Mode::Train, &dropout_rng,
                               grads, config.lanes);
      } catch (const Error& e) {
        // Inputs were checked above, so non-finite activations here mean the run diverged.
        if (e.kind() == ErrorKind::NonFiniteInput) fail(ErrorKind::NonFiniteLoss, where + ": " + e.what());
        throw;
      }
      if (!std::isfinite(eval.value)) fail(ErrorKind::NonFiniteLoss, where);
      optimizer.step(model.params(), grads);
      loss_sum += eval.value;
    }
    record.train_loss = loss_sum / static_cast<double>(record.batches);
    try {
      record.train_eval_loss = evaluate_loss(model, train_ptrs, config.loss, config.batch_size, config.lanes);
      record.test_loss = evaluate_loss(model, test_ptrs, config.loss, config.batch_size, config.lanes);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NonFiniteInput)
        fail(ErrorKind::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", evaluation: " + e.what());
      throw;
    }
    if (!std::isfinite(record.test_loss) || !std::isfinite(record.train_eval_loss))
      fail(ErrorKind::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", evaluation");

    if (record.test_loss < best) {
      best = record.test_loss;
      ckpt.best_test_loss = record.test_loss;
      ckpt.epoch_of_best = epoch;
      best_params = model.params().snapshot();
    }
    ckpt.history.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  model.params().restore(best_params);
  return ckpt;
}

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& path) {
  json meta;
  meta["train_config"] = train_config_to_json(checkpoint.config);
  meta["gene_names"] = checkpoint.gene_names;
  meta["best_test_loss"] = checkpoint.best_test_loss;
  meta["epoch_of_best"] = checkpoint.epoch_of_best;
  json history = json::array();
  for (const auto& r : checkpoint.history)
    history.push_back({{"epoch", r.epoch},
                       {"train_loss", r.train_loss},
                       {"train_eval_loss", r.train_eval_loss},
                       {"test_loss", r.test_loss},
                       {"epoch_size", r.epoch_size},
                       {"batches", r.batches}});
  meta["history"] = std::move(history);
  save_encoder(path, *checkpoint.model, meta.dump());
}

Checkpoint load_checkpoint(const fs::path& path) {
  auto loaded = load_encoder(path);
  Checkpoint ckpt;
  ckpt.model = std::move(loaded.model);
  try {
    const json meta = json::parse(loaded.metadata_json);
    ckpt.config = train_config_from_json(meta.at("train_config"));
    ckpt.gene_names = meta.at("gene_names").get<std::vector<std::string>>();
    ckpt.best_test_loss = meta.at("best_test_loss").get<double>();
    ckpt.epoch_of_best = meta.at("epoch_of_best").get<int>();
    for (const auto& r : meta.at("history")) {
      EpochRecord e;
      e.epoch = r.at("epoch").get<int>();
      e.train_loss = r.at("train_loss").get<double>();
      e.train_eval_loss = r.at("train_eval_loss").get<double>();
      e.test_loss = r.at("test_loss").get<double>();
      e.epoch_size = r.at("epoch_size").get<std::size_t>();
      e.batches = r.at("batches").get<std::size_t>();
      ckpt.history.push_back(e);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": checkpoint metadata: " + e.what());
  }
  return ckpt;
}

void save_loss_curve(const std::vector<EpochRecord>& history, const fs::path& path) {
  auto out = detail::open_output(path);
  std::string buf = "epoch,train_loss,test_loss\n";
  for (const auto& r : history) {
    buf += std::to_string(r.epoch) + ",";
    detail::append_double(buf, r.train_loss);
    buf += ",";
    detail::append_double(buf, r.test_loss);
    buf += "\n";
  }
  out << buf;
}

}  // namespace histex
