#include <doctest.h>

#include <histex/retrieval.hpp>
#include <histex/synthetic.hpp>

#include "app.hpp"
#include "fixtures.hpp"

#include <fstream>
#include <sstream>

using namespace histex;

namespace {

int run(std::vector<std::string> args, std::string* err_text = nullptr) {
  args.insert(args.begin(), "histex");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = app::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (err_text) *err_text = err.str();
  return code;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("toy pipeline end to end") {
  fixtures::TempDir dir("cli");
  SyntheticSpec spec;
  spec.clusters = 2;
  spec.genes = 8;
  spec.reference_slices = 1;
  spec.reference_spots = 10;
  spec.query_spots = 5;
  const auto manifest = write_synthetic(make_synthetic(spec), dir.path() / "data");
  const std::string work = (dir.path() / "work").string();

  const auto config = dir.path() / "run.cfg";
  std::ofstream(config) << "# toy run\nworkdir=" << work << "\nepochs=1\nbatch-size=4\nembed-dim=4\nseed=5\nk=3\n";

  REQUIRE(run({"prepare", "--config", config.string(), "--manifest", manifest.string(), "--panel-size", "6"}) == 0);
  CHECK(slurp(dir.path() / "work" / "summary.csv") == "dataset,training_size,testing_size,gene_size\ndata_hvg,10,5,6\n");
  REQUIRE(run({"train", "--config", config.string()}) == 0);
  REQUIRE(run({"impute", "--config", config.string()}) == 0);
  REQUIRE(run({"evaluate", "--config", config.string()}) == 0);
  REQUIRE(run({"export-embeddings", "--config", config.string()}) == 0);

  const auto table = load_expression_table(dir.path() / "work" / "predictions.csv");
  CHECK(table.values.rows() == 5);
  CHECK(table.values.cols() == 6);
  CHECK(std::filesystem::exists(dir.path() / "work" / "metrics.json"));
  CHECK(std::filesystem::exists(dir.path() / "work" / "per_gene_metrics.csv"));
  CHECK(std::filesystem::exists(dir.path() / "work" / "bank.meta.json"));
  CHECK(slurp(dir.path() / "work" / "losses.csv").starts_with("epoch,train_loss,test_loss\n1,"));

  SUBCASE("flags override the config file and reruns are byte-identical") {
    const std::string metrics = slurp(dir.path() / "work" / "metrics.json");
    REQUIRE(run({"train", "--config", config.string()}) == 0);
    REQUIRE(run({"impute", "--config", config.string()}) == 0);
    REQUIRE(run({"evaluate", "--config", config.string()}) == 0);
    CHECK(slurp(dir.path() / "work" / "metrics.json") == metrics);
    REQUIRE(run({"impute", "--config", config.string(), "--k", "1"}) == 0);
    REQUIRE(run({"evaluate", "--config", config.string()}) == 0);
    CHECK(slurp(dir.path() / "work" / "metrics.json") != metrics);
  }
  SUBCASE("K larger than the bank is a data error") {
    std::string err;
    CHECK(run({"impute", "--config", config.string(), "--k", "50"}, &err) == 2);
    CHECK(err.find("KOutOfRange") != std::string::npos);
  }
  SUBCASE("mismatched gene width is a data error") {
    auto t = table;
    t.values.conservativeResize(t.values.rows(), 5);
    t.gene_names.pop_back();
    save_expression_table(t, dir.path() / "work" / "predictions.csv");
    std::string err;
    CHECK(run({"evaluate", "--config", config.string()}, &err) == 2);
    CHECK(err.find("ShapeMismatch") != std::string::npos);
  }
  SUBCASE("ablation grid") {
    REQUIRE(run({"ablate", "--config", config.string()}) == 0);
    const std::string report = slurp(dir.path() / "work" / "ablation.csv");
    CHECK(std::count(report.begin(), report.end(), '\n') == 5);
    CHECK(report.find("wo_loss_wo_data,clip_soft,off,ok") != std::string::npos);
    CHECK(slurp(dir.path() / "work" / "ablation" / "full" / "metrics.json") ==
          slurp(dir.path() / "work" / "metrics.json"));
  }
}

TEST_CASE("usage errors exit with code 2") {
  fixtures::TempDir dir("usage");
  CHECK(run({}) == 2);
  CHECK(run({"train", "--bogus"}) == 2);
  CHECK(run({"train", "--panel", "all", "--workdir", dir.path().string()}) == 2);
  CHECK(run({"prepare"}) == 2);
  CHECK(run({"train", "--workdir", dir.path().string(), "--seed", "1"}) == 2);
  CHECK(run({"--help"}) == 0);

  SyntheticSpec spec;
  spec.reference_slices = 1;
  spec.reference_spots = 4;
  spec.query_spots = 2;
  const auto manifest = write_synthetic(make_synthetic(spec), dir.path() / "data");
  std::string err;
  CHECK(run({"prepare", "--manifest", manifest.string(), "--workdir", (dir.path() / "w").string(), "--holdout", "nope",
             "--seed", "1"},
            &err) == 2);
  CHECK(err.find("nope") != std::string::npos);
}
