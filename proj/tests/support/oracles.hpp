#pragma once

// Scalar-loop reference implementations. They share no code with the library on purpose.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace oracle {

using Grid = std::vector<std::vector<double>>;

inline Grid dot_grid(const Grid& a, const Grid& b, double scale) {
  Grid out(a.size(), std::vector<double>(b.size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a[i].size(); ++k) s += a[i][k] * b[j][k];
      out[i][j] = s / scale;
    }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& row) {
  double m = row[0];
  for (double v : row) m = std::max(m, v);
  double z = 0.0;
  for (double v : row) z += std::exp(v - m);
  std::vector<double> out;
  for (double v : row) out.push_back(std::exp(v - m) / z);
  return out;
}

inline Grid transpose(const Grid& g) {
  Grid t(g[0].size(), std::vector<double>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g[i].size(); ++j) t[j][i] = g[i][j];
  return t;
}

/// Mean over rows of -sum_j target_ij * log softmax(logits_i)_j.
inline double mean_cross_entropy(const Grid& logits, const Grid& targets) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double m = logits[i][0];
    for (double v : logits[i]) m = std::max(m, v);
    double z = 0.0;
    for (double v : logits[i]) z += std::exp(v - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < logits[i].size(); ++j) total -= targets[i][j] * (logits[i][j] - lse);
  }
  return total / static_cast<double>(logits.size());
}

inline Grid row_softmax(const Grid& g) {
  Grid out;
  for (const auto& r : g) out.push_back(softmax(r));
  return out;
}

/// Image-centric objective: logits S P^T / tau, targets softmax(P P^T / tau), CE on transposes.
inline double image_centric(const Grid& image, const Grid& spot, double tau) {
  const Grid logits = dot_grid(spot, image, tau);
  const Grid targets = row_softmax(dot_grid(image, image, tau));
  return mean_cross_entropy(transpose(logits), transpose(targets));
}

inline double clip_soft(const Grid& image, const Grid& spot, double tau) {
  const Grid logits = dot_grid(spot, image, tau);
  Grid mixed = dot_grid(image, image, 1.0);
  const Grid spot_sim = dot_grid(spot, spot, 1.0);
  for (std::size_t i = 0; i < mixed.size(); ++i)
    for (std::size_t j = 0; j < mixed.size(); ++j) mixed[i][j] = (mixed[i][j] + spot_sim[i][j]) / 2.0 / tau;
  const Grid targets = row_softmax(mixed);
  return 0.5 * (mean_cross_entropy(logits, targets) + mean_cross_entropy(transpose(logits), transpose(targets)));
}

inline double clip_hard(const Grid& image, const Grid& spot, double tau) {
  const Grid logits = dot_grid(spot, image, tau);
  Grid eye(logits.size(), std::vector<double>(logits.size(), 0.0));
  for (std::size_t i = 0; i < eye.size(); ++i) eye[i][i] = 1.0;
  return 0.5 * (mean_cross_entropy(logits, eye) + mean_cross_entropy(transpose(logits), eye));
}

// Metrics: grids are spots x genes.

inline double rmse(const Grid& truth, const Grid& pred, std::size_t gene) {
  double s = 0.0;
  for (std::size_t j = 0; j < truth.size(); ++j) s += (pred[j][gene] - truth[j][gene]) * (pred[j][gene] - truth[j][gene]);
  return std::sqrt(s / static_cast<double>(truth.size()));
}

inline Grid max_scale(const Grid& g) {
  Grid out = g;
  for (std::size_t c = 0; c < g[0].size(); ++c) {
    double m = 0.0;
    for (const auto& row : g) m = std::max(m, row[c]);
    for (auto& row : out) row[c] = m > 0 ? row[c] / m : 0.0;
  }
  return out;
}

inline double ssim(const Grid& truth, const Grid& pred, std::size_t gene, double c1 = 0.01, double c2 = 0.03) {
  const double n = static_cast<double>(truth.size());
  double mt = 0, mp = 0;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    mt += truth[j][gene];
    mp += pred[j][gene];
  }
  mt /= n;
  mp /= n;
  double vt = 0, vp = 0, cv = 0;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    vt += (truth[j][gene] - mt) * (truth[j][gene] - mt);
    vp += (pred[j][gene] - mp) * (pred[j][gene] - mp);
    cv += (truth[j][gene] - mt) * (pred[j][gene] - mp);
  }
  vt /= n;
  vp /= n;
  cv /= n;
  return ((2 * mp * mt + c1 * c1) * (2 * cv + c2 * c2)) / ((mp * mp + mt * mt + c1 * c1) * (vp + vt + c2 * c2));
}

/// Top-T via a full stable sort: larger value first, lower index on ties.
inline std::vector<std::size_t> top_set(const std::vector<double>& row, int t) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  idx.resize(static_cast<std::size_t>(t));
  return idx;
}

inline double hit(const Grid& truth, const Grid& pred, int t) {
  int hits = 0;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    const auto a = top_set(pred[j], t);
    const auto b = top_set(truth[j], t);
    bool any = false;
    for (auto x : a)
      for (auto y : b) any = any || x == y;
    hits += any;
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace oracle
