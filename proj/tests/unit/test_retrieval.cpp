#include <doctest.h>

#include <histex/error.hpp>
#include <histex/retrieval.hpp>

#include "fixtures.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

using namespace histex;

namespace {

/// Exhaustive reference: score every row with a plain loop, stable-sort descending.
TopK exhaustive(const std::vector<double>& q, const Matrix& bank, Index k) {
  std::vector<double> scores(static_cast<std::size_t>(bank.rows()));
  for (Index r = 0; r < bank.rows(); ++r) {
    double s = 0.0;
    for (Index c = 0; c < bank.cols(); ++c) s += q[static_cast<std::size_t>(c)] * bank(r, c);
    scores[static_cast<std::size_t>(r)] = s;
  }
  std::vector<Index> order(scores.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });
  TopK out;
  for (Index i = 0; i < k; ++i) {
    out.indices.push_back(order[static_cast<std::size_t>(i)]);
    out.scores.push_back(scores[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
  }
  return out;
}

Matrix integer_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(-2, 2);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

EmbeddingBank small_bank(Index n, Index d_o, Index genes, std::mt19937_64& rng) {
  EmbeddingBank bank;
  bank.embeddings = fixtures::random_matrix(n, d_o, rng);
  bank.expressions = fixtures::random_matrix(n, genes, rng, 0, 5);
  for (Index i = 0; i < n; ++i) bank.ids.push_back({"s", "p" + std::to_string(i)});
  for (Index g = 0; g < genes; ++g) bank.gene_names.push_back("g" + std::to_string(g));
  bank.fingerprint = "0123456789abcdef";
  return bank;
}

}  // namespace

TEST_CASE("topk equals an exhaustive sort, ties included") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<Index> size(1, 400), dim(1, 8);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = size(rng), d = dim(rng);
    // Small integer coordinates make tied scores common.
    const Matrix bank = trial % 2 ? integer_matrix(n, d, rng) : fixtures::random_matrix(n, d, rng);
    const Matrix q = trial % 2 ? integer_matrix(1, d, rng) : fixtures::random_matrix(1, d, rng);
    const std::vector<double> query(q.data(), q.data() + d);
    for (Index k : {Index{1}, std::min<Index>(n, 7), n}) {
      const auto got = topk(query, bank, k);
      const auto want = exhaustive(query, bank, k);
      CHECK(got.indices == want.indices);
      CHECK(got.scores == want.scores);
      CHECK(std::is_sorted(got.scores.rbegin(), got.scores.rend()));
    }
  }
}

TEST_CASE("topk rejects K outside the bank") {
  const Matrix bank = Matrix::Ones(3, 2);
  const std::vector<double> q{1.0, 0.0};
  CHECK_THROWS_AS(topk(q, bank, 0), Error);
  CHECK_THROWS_AS(topk(q, bank, 4), Error);
  CHECK_THROWS_AS(topk(std::vector<double>{1.0}, bank, 1), Error);
}

TEST_CASE("imputation averages the neighbours and stays within their range") {
  std::mt19937_64 rng(5);
  const auto bank = small_bank(60, 4, 6, rng);
  const Matrix queries = fixtures::random_matrix(10, 4, rng);
  const Index k = 7;
  const Matrix pred = impute_embeddings(queries, bank, k);
  for (Index q = 0; q < queries.rows(); ++q) {
    const std::vector<double> row(queries.row(q).data(), queries.row(q).data() + 4);
    const auto nn = topk(row, bank, k);
    for (Index g = 0; g < 6; ++g) {
      double lo = 1e300, hi = -1e300, sum = 0.0;
      for (auto i : nn.indices) {
        lo = std::min(lo, bank.expressions(i, g));
        hi = std::max(hi, bank.expressions(i, g));
        sum += bank.expressions(i, g);
      }
      CHECK(pred(q, g) >= lo);
      CHECK(pred(q, g) <= hi);
      CHECK(pred(q, g) == doctest::Approx(sum / k).epsilon(1e-12));
    }
  }
}

TEST_CASE("permuting the bank leaves predictions unchanged") {
  std::mt19937_64 rng(6);
  const auto bank = small_bank(40, 3, 5, rng);
  const Matrix queries = fixtures::random_matrix(8, 3, rng);
  std::vector<Index> perm(40);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  EmbeddingBank shuffled = bank;
  for (Index i = 0; i < 40; ++i) {
    shuffled.embeddings.row(i) = bank.embeddings.row(perm[static_cast<std::size_t>(i)]);
    shuffled.expressions.row(i) = bank.expressions.row(perm[static_cast<std::size_t>(i)]);
  }
  const Matrix a = impute_embeddings(queries, bank, 5), b = impute_embeddings(queries, shuffled, 5);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(impute_embeddings(Matrix(0, 3), bank, 5).rows() == 0);
}

TEST_CASE("bank files round-trip") {
  std::mt19937_64 rng(8);
  const auto bank = small_bank(12, 3, 4, rng);
  fixtures::TempDir dir("bank");
  save_bank(bank, dir.path() / "bank");
  const auto back = load_bank(dir.path() / "bank");
  CHECK(back.embeddings == bank.embeddings);
  CHECK(back.expressions == bank.expressions);
  CHECK(back.ids == bank.ids);
  CHECK(back.gene_names == bank.gene_names);
  CHECK(back.fingerprint == bank.fingerprint);
}

TEST_CASE("expression tables round-trip") {
  std::mt19937_64 rng(9);
  ExpressionTable t;
  t.ids = {{"a", "1"}, {"b", "2"}};
  t.gene_names = {"x", "y", "z"};
  t.values = fixtures::random_matrix(2, 3, rng);
  fixtures::TempDir dir("table");
  save_expression_table(t, dir.path() / "p.csv");
  const auto back = load_expression_table(dir.path() / "p.csv");
  CHECK(back.ids == t.ids);
  CHECK(back.gene_names == t.gene_names);
  CHECK(back.values == t.values);
}

TEST_CASE("encoder-backed retrieval") {
  std::mt19937_64 rng(10);
  EncoderConfig cfg;
  cfg.gene_dim = 3;
  cfg.embed_dim = 4;
  cfg.init_seed = 1;
  DualEncoder model(cfg);
  const auto pairs = fixtures::random_pairs(6, 3, rng);
  const auto bank = build_bank(model, pairs, {"a", "b", "c"});
  CHECK(bank.size() == 6);
  CHECK(bank.fingerprint == model.fingerprint());
  CHECK_NOTHROW(check_fingerprint(bank, model));

  std::vector<Raster> query_patches{fixtures::noise_patch(rng), fixtures::noise_patch(rng)};
  std::vector<const Raster*> ptrs{&query_patches[0], &query_patches[1]};
  const Matrix batch = impute_batch(ptrs, model, bank, 3);
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    const auto single = impute(*ptrs[i], model, bank, 3);
    CHECK((batch.row(static_cast<Index>(i)) - single.imputed.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK_THROWS_AS(impute_batch(ptrs, model, bank, 7), Error);

  fixtures::TempDir dir("export");
  const Matrix q = model.encode_images(ptrs, Mode::Eval).rows;
  export_embeddings(bank, q, {{"q", "1"}, {"q", "2"}}, dir.path() / "e.csv");
  std::ifstream in(dir.path() / "e.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "id,set,e1,e2,e3,e4");
  int rows = 0, queries = 0;
  while (std::getline(in, line)) {
    ++rows;
    queries += line.find(",query,") != std::string::npos;
  }
  CHECK(rows == 8);
  CHECK(queries == 2);

  EncoderConfig other = cfg;
  other.init_seed = 2;
  DualEncoder different(other);
  CHECK_THROWS_AS(check_fingerprint(bank, different), Error);
}
