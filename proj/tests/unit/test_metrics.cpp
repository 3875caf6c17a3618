#include <doctest.h>

#include <histex/error.hpp>
#include <histex/metrics.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"

#include <cmath>
#include <random>

using namespace histex;

namespace {

Matrix column(std::initializer_list<double> values) {
  Matrix m(static_cast<Index>(values.size()), 1);
  Index i = 0;
  for (double v : values) m(i++, 0) = v;
  return m;
}

}  // namespace

TEST_CASE("rmse hand-computed values") {
  CHECK(rmse_per_gene(column({1, 2, 3}), column({2, 3, 4}))[0] == doctest::Approx(1.0));
  CHECK(rmse_per_gene(column({0, 0}), column({3, 4}))[0] == doctest::Approx(std::sqrt(12.5)));
  const Matrix x = column({0.2, 0.5, 0.9});
  CHECK(rmse_per_gene(x, x)[0] == 0.0);
  CHECK(rmse_per_gene(x, (x.array() - 0.3).matrix())[0] == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("max scaling per gene") {
  Matrix m(3, 2);
  m << 2, 0, 4, 0, 8, 0;
  const Matrix s = scale_by_max(m);
  CHECK(s(0, 0) == 0.25);
  CHECK(s(1, 0) == 0.5);
  CHECK(s(2, 0) == 1.0);
  CHECK(s.col(1).isZero());
  CHECK(scale_by_max(s) == s);
}

TEST_CASE("ssim special cases") {
  const Matrix x = column({0.1, 0.7, 0.4, 1.0});
  CHECK(std::abs(ssim_per_gene(x, x)[0] - 1.0) < 1e-12);
  CHECK(ssim_per_gene(column({0.5, 0.5}), column({0.5, 0.5}))[0] == doctest::Approx(1.0));
  CHECK(ssim_per_gene(column({0, 1}), column({1, 0}))[0] == doctest::Approx(-0.99652).epsilon(1e-4));
}

TEST_CASE("ssim is symmetric and bounded") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = scale_by_max(fixtures::random_matrix(8, 5, rng, 0, 3));
    const Matrix b = scale_by_max(fixtures::random_matrix(8, 5, rng, 0, 3));
    const auto ab = ssim_per_gene(a, b), ba = ssim_per_gene(b, a);
    for (std::size_t g = 0; g < ab.size(); ++g) {
      CHECK(ab[g] == doctest::Approx(ba[g]).epsilon(1e-14));
      CHECK(ab[g] >= -1.0 - 1e-9);
      CHECK(ab[g] <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("hit at T") {
  SUBCASE("identical matrices") {
    std::mt19937_64 rng(4);
    const Matrix x = fixtures::random_matrix(6, 5, rng, 0, 1);
    for (int t = 1; t <= 5; ++t) CHECK(hit_at_t(x, x, t) == 1.0);
  }
  SUBCASE("disjoint top-1") {
    Matrix truth(2, 3), pred(2, 3);
    truth << 3, 1, 0, 0, 0, 5;
    pred << 0, 2, 1, 5, 0, 0;
    CHECK(hit_at_t(truth, pred, 1) == 0.0);
  }
  SUBCASE("two spots at T=2") {
    Matrix truth(2, 3), pred(2, 3);
    pred << 5, 4, 0, 5, 4, 0;   // {0,1} for both spots
    truth << 0, 4, 5, 1, 0, 5;  // {2,1} and {2,0}
    CHECK(hit_at_t(truth, pred, 2) == 1.0);
    // Two 2-sets drawn from 3 genes always meet, so the miss needs a fourth gene.
    Matrix truth4(2, 4), pred4(2, 4);
    pred4 << 5, 4, 0, 0, 5, 4, 0, 0;
    truth4 << 0, 4, 5, 0, 0, 0, 5, 6;  // {2,1} and {3,2}
    CHECK(hit_at_t(truth4, pred4, 2) == 0.5);
  }
  SUBCASE("ties go to the lower gene index") {
    Matrix truth(1, 3), pred(1, 3);
    truth << 1, 1, 1;  // top-1 {0}
    pred << 0, 2, 2;   // top-1 {1}
    CHECK(hit_at_t(truth, pred, 1) == 0.0);
    pred << 2, 2, 0;
    CHECK(hit_at_t(truth, pred, 1) == 1.0);
  }
  SUBCASE("out of range T") {
    const Matrix x = Matrix::Ones(2, 3);
    CHECK_THROWS_AS(hit_at_t(x, x, 0), Error);
    CHECK_THROWS_AS(hit_at_t(x, x, 4), Error);
  }
}

TEST_CASE("hit at T is monotone in T") {
  std::mt19937_64 rng(8);
  const Matrix a = fixtures::random_matrix(30, 12, rng, 0, 1), b = fixtures::random_matrix(30, 12, rng, 0, 1);
  double previous = 0.0;
  for (int t = 1; t <= 12; ++t) {
    const double h = hit_at_t(a, b, t);
    CHECK(h >= previous);
    previous = h;
  }
}

TEST_CASE("every metric matches the scalar-loop oracle") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 25; ++trial) {
    const Matrix truth = fixtures::random_matrix(10, 20, rng, 0, 4), pred = fixtures::random_matrix(10, 20, rng, 0, 4);
    const auto gt = fixtures::to_grid(truth), gp = fixtures::to_grid(pred);
    const auto report = evaluate_predictions(truth, pred);
    const auto st = oracle::max_scale(gt), sp = oracle::max_scale(gp);
    for (std::size_t g = 0; g < 20; ++g) {
      CHECK(std::abs(report.rmse_per_gene[g] - oracle::rmse(gt, gp, g)) < 1e-9);
      CHECK(std::abs(report.ssim_per_gene[g] - oracle::ssim(st, sp, g)) < 1e-9);
    }
    for (int t = 1; t <= 3; ++t) CHECK(report.hit_at.at(t) == oracle::hit(gt, gp, t));
  }
}

TEST_CASE("summaries use the even-length median rule") {
  CHECK(summarize_values({1, 2, 3}).median == 2.0);
  CHECK(summarize_values({1, 2, 3}).mean == 2.0);
  CHECK(summarize_values({4, 1, 3, 2}).median == 2.5);
  CHECK_THROWS_AS(summarize_values({}), Error);
}

TEST_CASE("report JSON round-trips exactly") {
  std::mt19937_64 rng(12);
  const Matrix truth = fixtures::random_matrix(7, 4, rng, 0, 1), pred = fixtures::random_matrix(7, 4, rng, 0, 1);
  const auto report = evaluate_predictions(truth, pred, {"a", "b", "c", "d"});
  CHECK(MetricsReport::from_json(report.to_json()) == report);
  fixtures::TempDir dir("metrics");
  save_metrics_json(report, dir.path() / "m.json");
  CHECK(load_metrics_json(dir.path() / "m.json") == report);
}

TEST_CASE("metric inputs are validated") {
  CHECK_THROWS_AS(rmse_per_gene(Matrix::Zero(2, 3), Matrix::Zero(3, 2)), Error);
  Matrix bad = Matrix::Zero(2, 2);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(evaluate_predictions(bad, Matrix::Zero(2, 2)), Error);
}
