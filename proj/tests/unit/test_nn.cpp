#include <doctest.h>

#include <histex/nn/backbone.hpp>
#include <histex/nn/head.hpp>
#include <histex/nn/layers.hpp>

#include "fixtures.hpp"

#include <cmath>
#include <random>

using namespace histex;
using namespace histex::nn;

namespace {

FeatureMap random_map(int c, int h, int w, std::mt19937_64& rng) {
  FeatureMap m(c, h, w);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : m.data) v = u(rng);
  return m;
}

double weighted_sum(const FeatureMap& out, const FeatureMap& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * weights.data[i];
  return s;
}

/// Compares backward() against central differences of sum(forward(x) * R) for the input and
/// every trainable parameter.
void check_layer_gradients(const Layer& layer, ParamSet& params, const FeatureMap& x, std::mt19937_64& rng,
                           double tol = 1e-6) {
  const Shape3 os = layer.output_shape({x.channels, x.height, x.width});
  const FeatureMap r = random_map(os.channels, os.height, os.width, rng);
  CachePtr cache;
  const FeatureMap out = layer.forward(x, &cache);
  REQUIRE(out.channels == os.channels);
  REQUIRE(out.height == os.height);
  REQUIRE(out.width == os.width);
  GradBuffer grads(params);
  const FeatureMap dx = layer.backward(*cache, r, grads);

  auto objective = [&](const FeatureMap& in) { return weighted_sum(layer.forward(in, nullptr), r); };
  const double h = 1e-6;
  FeatureMap probe = x;
  for (std::size_t i = 0; i < x.data.size(); i += 7) {
    const double saved = probe.data[i];
    probe.data[i] = saved + h;
    const double up = objective(probe);
    probe.data[i] = saved - h;
    const double down = objective(probe);
    probe.data[i] = saved;
    CHECK(dx.data[i] == doctest::Approx((up - down) / (2 * h)).epsilon(tol).scale(1.0));
  }
  for (auto& p : params) {
    if (!p.trainable) continue;
    const double* g = grads.touched(p.id) ? grads.values(p.id).data() : nullptr;
    for (std::size_t i = 0; i < p.value.size(); i += 3) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = objective(x);
      p.value[i] = saved - h;
      const double down = objective(x);
      p.value[i] = saved;
      CAPTURE(p.name);
      CHECK((g ? g[i] : 0.0) == doctest::Approx((up - down) / (2 * h)).epsilon(tol).scale(1.0));
    }
  }
}

void randomize(ParamSet& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& p : params)
    for (auto& v : p.value) v = u(rng);
  // Running variances must stay positive.
  for (auto& p : params)
    if (p.name.ends_with("running_var"))
      for (auto& v : p.value) v = 0.5 + std::abs(v);
}

}  // namespace

TEST_CASE("convolution matches a direct loop") {
  std::mt19937_64 rng(1);
  ParamSet params;
  Conv2d conv(params, "c", {3, 4, 3, 2, 1, true});
  randomize(params, rng);
  const FeatureMap x = random_map(3, 9, 7, rng);
  const FeatureMap y = conv.forward(x, nullptr);
  CHECK(y.height == 5);
  CHECK(y.width == 4);
  const auto& w = conv.weight().value;
  const auto& b = conv.bias()->value;
  for (int o = 0; o < 4; ++o)
    for (int oy = 0; oy < y.height; ++oy)
      for (int ox = 0; ox < y.width; ++ox) {
        double s = b[static_cast<std::size_t>(o)];
        for (int c = 0; c < 3; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || ix < 0 || iy >= 9 || ix >= 7) continue;
              s += w[static_cast<std::size_t>(((o * 3 + c) * 3 + ky) * 3 + kx)] *
                   x.data[static_cast<std::size_t>((c * 9 + iy) * 7 + ix)];
            }
        CHECK(y.data[static_cast<std::size_t>((o * y.height + oy) * y.width + ox)] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("layer gradients agree with central differences") {
  std::mt19937_64 rng(2);
  SUBCASE("strided padded convolution") {
    ParamSet params;
    Conv2d conv(params, "c", {2, 3, 3, 2, 1, true});
    randomize(params, rng);
    check_layer_gradients(conv, params, random_map(2, 7, 6, rng), rng);
  }
  SUBCASE("pointwise convolution without bias") {
    ParamSet params;
    Conv2d conv(params, "c", {3, 2, 1, 1, 0, false});
    randomize(params, rng);
    check_layer_gradients(conv, params, random_map(3, 4, 5, rng), rng);
  }
  SUBCASE("frozen batch norm") {
    ParamSet params;
    FrozenBatchNorm bn(params, "bn", 3);
    randomize(params, rng);
    check_layer_gradients(bn, params, random_map(3, 4, 4, rng), rng);
  }
  SUBCASE("max pooling") {
    ParamSet params;
    MaxPool2d pool(3, 2, 1);
    check_layer_gradients(pool, params, random_map(2, 7, 7, rng), rng);
  }
  SUBCASE("bottleneck with projection shortcut") {
    ParamSet params;
    Bottleneck block(params, "b", 4, 2, 2);
    randomize(params, rng);
    check_layer_gradients(block, params, random_map(4, 6, 6, rng), rng);
  }
}

TEST_CASE("gelu derivative") {
  for (double x : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
    const double h = 1e-6;
    CHECK(gelu_derivative(x) == doctest::Approx((gelu(x + h) - gelu(x - h)) / (2 * h)).epsilon(1e-8));
  }
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(1.0) == doctest::Approx(0.8413447460685429));
}

TEST_CASE("projection head forward follows affine, GELU, residual, layer norm") {
  std::mt19937_64 rng(3);
  ParamSet params;
  ProjectionHead head(params, "h", 5, 4);
  randomize(params, rng);
  const Matrix z = fixtures::random_matrix(3, 5, rng);
  const Matrix out = head.forward(z, Mode::Eval, nullptr);
  const auto& W1 = params.find("h.W1")->value;
  const auto& b1 = params.find("h.b1")->value;
  const auto& W2 = params.find("h.W2")->value;
  const auto& b2 = params.find("h.b2")->value;
  const auto& gain = params.find("h.ln_gain")->value;
  const auto& bias = params.find("h.ln_bias")->value;
  for (Index i = 0; i < 3; ++i) {
    std::vector<double> h1(4), r(4);
    for (std::size_t o = 0; o < 4; ++o) {
      double s = b1[o];
      for (std::size_t k = 0; k < 5; ++k) s += W1[o * 5 + k] * z(i, static_cast<Index>(k));
      h1[o] = 0.5 * s * (1.0 + std::erf(s / std::sqrt(2.0)));
    }
    for (std::size_t o = 0; o < 4; ++o) {
      double s = b2[o];
      for (std::size_t k = 0; k < 4; ++k) s += W2[o * 4 + k] * h1[k];
      r[o] = h1[o] + s;
    }
    double mean = 0, var = 0;
    for (double v : r) mean += v / 4;
    for (double v : r) var += (v - mean) * (v - mean) / 4;
    for (std::size_t o = 0; o < 4; ++o)
      CHECK(out(i, static_cast<Index>(o)) ==
            doctest::Approx(gain[o] * (r[o] - mean) / std::sqrt(var + 1e-5) + bias[o]).epsilon(1e-12));
  }
}

TEST_CASE("projection head gradients with a fixed dropout mask") {
  std::mt19937_64 rng(4);
  ParamSet params;
  ProjectionHead head(params, "h", 4, 3, 0.3);
  randomize(params, rng);
  Matrix z = fixtures::random_matrix(5, 4, rng);
  const Matrix r = fixtures::random_matrix(5, 3, rng);
  auto objective = [&] {
    DropoutRng d(77);
    return (head.forward(z, Mode::Train, &d).array() * r.array()).sum();
  };
  DropoutRng d(77);
  HeadCache cache;
  head.forward(z, Mode::Train, &d, &cache);
  GradBuffer grads(params);
  const Matrix dz = head.backward(cache, r, grads);
  const double h = 1e-6;
  for (Index i = 0; i < z.rows(); ++i)
    for (Index j = 0; j < z.cols(); ++j) {
      const double saved = z(i, j);
      z(i, j) = saved + h;
      const double up = objective();
      z(i, j) = saved - h;
      const double down = objective();
      z(i, j) = saved;
      CHECK(dz(i, j) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6).scale(1.0));
    }
  for (auto& p : params)
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = objective();
      p.value[i] = saved - h;
      const double down = objective();
      p.value[i] = saved;
      CAPTURE(p.name);
      CHECK(grads.values(p.id)[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6).scale(1.0));
    }
}

TEST_CASE("dropout is inactive in eval mode and needs a generator in train mode") {
  std::mt19937_64 rng(5);
  ParamSet params;
  ProjectionHead head(params, "h", 4, 4);
  const Matrix z = fixtures::random_matrix(3, 4, rng);
  CHECK(head.forward(z, Mode::Eval, nullptr) == head.forward(z, Mode::Eval, nullptr));
  CHECK_THROWS_AS(head.forward(z, Mode::Train, nullptr), std::invalid_argument);
  CHECK_THROWS_AS(ProjectionHead(params, "bad", 2, 2, 1.0), std::invalid_argument);
}

TEST_CASE("compact backbone gradients on a small input") {
  std::mt19937_64 rng(6);
  ParamSet params;
  InitRng init(1);
  CompactSpec spec;
  spec.blocks = {{3, 4, 4, 0}, {4, 3, 2, 1}};
  auto backbone = Backbone::compact(params, "bb", spec, init);
  const FeatureMap x = random_map(3, 16, 16, rng);
  const Vector r = fixtures::random_matrix(4, 1, rng);
  BackboneCache cache;
  const Vector f = backbone.forward(x, &cache);
  REQUIRE(f.size() == 4);
  GradBuffer grads(params);
  backbone.backward(cache, r, grads);
  const double h = 1e-6;
  for (auto& p : params)
    for (std::size_t i = 0; i < p.value.size(); i += 2) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = backbone.forward(x, nullptr).dot(r);
      p.value[i] = saved - h;
      const double down = backbone.forward(x, nullptr).dot(r);
      p.value[i] = saved;
      CAPTURE(p.name);
      CHECK(grads.values(p.id)[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5).scale(1.0));
    }
}

TEST_CASE("residual backbone layout") {
  ParamSet params;
  InitRng init(2);
  auto backbone = Backbone::residual50(params, "image.backbone", init);
  CHECK(backbone.feature_dim() == 2048);
  CHECK(backbone.trunk_output_shape({3, 256, 256}) == Shape3{2048, 8, 8});
  Index trainable = 0;
  for (const auto& p : params)
    if (p.trainable) trainable += p.numel();
  // Convolution weights plus batch-norm gains and shifts of the standard 50-layer layout.
  CHECK(trainable == 23508032);
  CHECK(params.find("image.backbone.conv1.weight") != nullptr);
}
