#pragma once

#include <histex/data.hpp>
#include <histex/types.hpp>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace fixtures {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("histex-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline histex::Matrix random_matrix(histex::Index rows, histex::Index cols, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  histex::Matrix m(rows, cols);
  for (histex::Index i = 0; i < rows; ++i)
    for (histex::Index j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

inline std::vector<std::vector<double>> to_grid(const histex::Matrix& m) {
  std::vector<std::vector<double>> g(static_cast<std::size_t>(m.rows()));
  for (histex::Index i = 0; i < m.rows(); ++i)
    for (histex::Index j = 0; j < m.cols(); ++j) g[static_cast<std::size_t>(i)].push_back(m(i, j));
  return g;
}

inline histex::Raster noise_patch(std::mt19937_64& rng, int size = histex::kPatchSize) {
  histex::Raster r(size, size);
  std::uniform_int_distribution<int> u(0, 255);
  for (auto& b : r.bytes()) b = static_cast<std::uint8_t>(u(rng));
  return r;
}

/// Pairs with noise patches and random non-negative expression.
inline std::vector<histex::PatchSpotPair> random_pairs(std::size_t n, int genes, std::mt19937_64& rng) {
  std::vector<histex::PatchSpotPair> out;
  std::uniform_real_distribution<double> e(0.0, 3.0);
  for (std::size_t i = 0; i < n; ++i) {
    histex::PatchSpotPair p;
    p.patch = noise_patch(rng);
    for (int g = 0; g < genes; ++g) p.expression.push_back(e(rng));
    p.slice_id = "s1";
    p.spot_id = "spot" + std::to_string(i);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace fixtures
