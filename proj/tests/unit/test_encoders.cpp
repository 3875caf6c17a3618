#include <doctest.h>

#include <histex/encoders.hpp>
#include <histex/error.hpp>
#include <histex/optim.hpp>

#include "fixtures.hpp"

#include <fstream>
#include <random>

using namespace histex;

namespace {

EncoderConfig small_config(std::uint64_t seed = 1) {
  EncoderConfig cfg;
  cfg.gene_dim = 5;
  cfg.embed_dim = 6;
  cfg.init_seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("parameter names follow the tower layout") {
  DualEncoder model(small_config());
  for (const char* name : {"image.backbone.block0.weight", "image.head.W1", "image.head.b1", "image.head.W2",
                           "image.head.b2", "image.head.ln_gain", "image.head.ln_bias", "spot.linear.W",
                           "spot.linear.b", "spot.head.W1", "spot.head.ln_bias"}) {
    CAPTURE(name);
    CHECK(model.params().find(name) != nullptr);
  }
  CHECK(model.params().find("image.head.W1")->shape == std::vector<Index>{6, 32});
  CHECK(model.params().find("spot.linear.W")->shape == std::vector<Index>{6, 5});
  CHECK(model.params().find("image.head.ln_gain")->value == std::vector<double>(6, 1.0));
}

TEST_CASE("embeddings have the requested shape and are deterministic in eval mode") {
  std::mt19937_64 rng(3);
  DualEncoder model(small_config());
  std::vector<Raster> patches{fixtures::noise_patch(rng), fixtures::noise_patch(rng), fixtures::noise_patch(rng)};
  std::vector<const Raster*> ptrs{&patches[0], &patches[1], &patches[2]};
  const auto a = model.encode_images(ptrs, Mode::Eval, nullptr, 1);
  const auto b = model.encode_images(ptrs, Mode::Eval, nullptr, 3);
  CHECK(a.rows.rows() == 3);
  CHECK(a.rows.cols() == 6);
  CHECK(a.rows == b.rows);
  const Matrix x = fixtures::random_matrix(3, 5, rng, 0, 2);
  CHECK(model.encode_spots(x, Mode::Eval).rows.cols() == 6);
  CHECK_THROWS_AS(model.encode_spots(fixtures::random_matrix(3, 4, rng), Mode::Eval), Error);

  Raster small(64, 64);
  std::vector<const Raster*> bad{&small};
  CHECK_THROWS_AS(model.image_features(bad), Error);
}

TEST_CASE("fingerprint tracks configuration and weights") {
  DualEncoder a(small_config(1)), b(small_config(1)), c(small_config(2));
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint() != c.fingerprint());
  CHECK(a.fingerprint().size() == 16);
  b.params().find("spot.linear.b")->value[0] += 1e-9;
  CHECK(a.fingerprint() != b.fingerprint());
}

TEST_CASE("checkpoint files round-trip every tensor") {
  DualEncoder model(small_config(4));
  fixtures::TempDir dir("enc");
  save_encoder(dir.path() / "m.ckpt", model, "{\"note\":1}");
  const auto loaded = load_encoder(dir.path() / "m.ckpt");
  CHECK(loaded.model->fingerprint() == model.fingerprint());
  CHECK(loaded.metadata_json == "{\"note\":1}");

  DualEncoder other(small_config(9));
  other.load_backbone_weights(dir.path() / "m.ckpt");
  CHECK(other.params().find("image.backbone.block0.weight")->value ==
        model.params().find("image.backbone.block0.weight")->value);
  CHECK(other.params().find("image.head.W1")->value != model.params().find("image.head.W1")->value);

  std::ofstream(dir.path() / "junk.ckpt") << "nope";
  CHECK_THROWS_AS(load_encoder(dir.path() / "junk.ckpt"), Error);
}

TEST_CASE("AdamW applies decoupled decay before the moment update") {
  nn::ParamSet params;
  auto& p = params.add("w", {2});
  p.value = {1.0, -2.0};
  AdamW opt(params, {0.1, 0.9, 0.999, 1e-8, 0.01});
  nn::GradBuffer grads(params);
  grads.data(p)[0] = 0.5;
  grads.data(p)[1] = 0.0;
  opt.step(params, grads);
  // Bias-corrected moments of a single step give an update of lr * g / (|g| + eps).
  CHECK(p.value[0] == doctest::Approx(1.0 * (1 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(p.value[1] == doctest::Approx(-2.0 * (1 - 0.1 * 0.01)).epsilon(1e-12));
  CHECK(opt.steps() == 1);
}
