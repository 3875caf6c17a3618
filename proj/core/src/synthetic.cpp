#include "histex/synthetic.hpp"

#include "histex/dataset_io.hpp"
#include "histex/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace histex {
namespace fs = std::filesystem;

namespace {

// Palettes far apart in colour: background and "nucleus" colour, nucleus radius and count.
struct Motif {
  std::array<int, 3> ground;
  std::array<int, 3> nucleus;
  int radius;
  int count;
};

constexpr std::array<Motif, 8> kMotifs{{
    {{236, 190, 214}, {92, 40, 140}, 6, 60},
    {{245, 232, 160}, {150, 90, 20}, 14, 18},
    {{160, 196, 240}, {20, 40, 120}, 4, 140},
    {{176, 228, 176}, {30, 100, 40}, 10, 30},
    {{110, 50, 100}, {245, 225, 240}, 20, 10},
    {{230, 205, 160}, {110, 70, 40}, 8, 40},
    {{190, 210, 230}, {30, 60, 120}, 5, 90},
    {{225, 225, 225}, {70, 70, 70}, 12, 25},
}};

int genes_per_cluster(const SyntheticSpec& spec) { return std::max(1, spec.genes / spec.clusters); }

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void paint_patch(Raster& slide, int x0, int y0, const Motif& m, double noise, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(-noise, noise);
  std::uniform_int_distribution<int> pos(0, kPatchSize - 1);
  for (int y = y0; y < y0 + kPatchSize; ++y)
    for (int x = x0; x < x0 + kPatchSize; ++x)
      for (int c = 0; c < 3; ++c) slide.at(y, x, c) = clamp_byte(m.ground[c] + jitter(rng));
  for (int n = 0; n < m.count; ++n) {
    const int cx = pos(rng), cy = pos(rng);
    for (int dy = -m.radius; dy <= m.radius; ++dy)
      for (int dx = -m.radius; dx <= m.radius; ++dx) {
        const int px = cx + dx, py = cy + dy;
        if (dx * dx + dy * dy > m.radius * m.radius || px < 0 || py < 0 || px >= kPatchSize || py >= kPatchSize)
          continue;
        for (int c = 0; c < 3; ++c) slide.at(y0 + py, x0 + px, c) = clamp_byte(m.nucleus[c] + jitter(rng));
      }
  }
}

std::vector<double> signature(const SyntheticSpec& spec, int cluster) {
  std::vector<double> w(static_cast<size_t>(spec.genes), 1.0);
  const int per = genes_per_cluster(spec);
  for (int k = 0; k < per; ++k) {
    const int g = (cluster * per + k) % spec.genes;
    w[static_cast<size_t>(g)] = 5.0;
  }
  w[static_cast<size_t>(dominant_gene(spec, cluster))] = 20.0;
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  return w;
}

SliceDataset make_slice(const SyntheticSpec& spec, const std::string& id, int spots, std::mt19937_64& rng,
                        std::vector<int>& labels) {
  const int cols = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spots)))));
  const int rows = (spots + cols - 1) / cols;
  SliceDataset slice;
  slice.slice_id = id;
  slice.image = Raster(rows * kPatchSize, cols * kPatchSize);
  for (int g = 0; g < spec.genes; ++g) slice.gene_names.push_back("gene" + std::to_string(g + 1));

  std::uniform_int_distribution<int> cluster_of(0, spec.clusters - 1);
  std::vector<std::vector<double>> profiles;
  for (int c = 0; c < spec.clusters; ++c) profiles.push_back(signature(spec, c));

  labels.clear();
  for (int s = 0; s < spots; ++s) {
    const int cluster = cluster_of(rng);
    labels.push_back(cluster);
    const int x0 = (s % cols) * kPatchSize, y0 = (s / cols) * kPatchSize;
    paint_patch(slice.image, x0, y0, kMotifs[static_cast<size_t>(cluster) % kMotifs.size()], spec.pixel_noise, rng);

    SpotRecord spot;
    spot.spot_id = "s" + std::to_string(s + 1);
    spot.x = x0 + kPatchHalf;
    spot.y = y0 + kPatchHalf;
    for (double p : profiles[static_cast<size_t>(cluster)]) {
      std::poisson_distribution<long> draw(spec.library_size * p);
      spot.counts.push_back(static_cast<double>(draw(rng)));
    }
    slice.spots.push_back(std::move(spot));
  }
  return slice;
}

}  // namespace

int dominant_gene(const SyntheticSpec& spec, int cluster) {
  return (cluster * genes_per_cluster(spec)) % spec.genes;
}

SyntheticDataset make_synthetic(const SyntheticSpec& spec) {
  require(spec.clusters >= 1 && spec.genes >= spec.clusters, ErrorKind::ShapeMismatch,
          "need at least one gene per cluster");
  require(spec.reference_slices >= 1 && spec.reference_spots >= spec.reference_slices && spec.query_spots >= 1,
          ErrorKind::EmptyInput, "synthetic dataset needs reference and query spots");
  std::mt19937_64 rng(spec.seed);
  SyntheticDataset data;
  for (int r = 0; r < spec.reference_slices; ++r) {
    const int base = spec.reference_spots / spec.reference_slices;
    const int spots = base + (r < spec.reference_spots % spec.reference_slices ? 1 : 0);
    data.reference_labels.emplace_back();
    data.reference.push_back(make_slice(spec, "ref" + std::to_string(r + 1), spots, rng, data.reference_labels.back()));
  }
  data.query_labels.emplace_back();
  data.query.push_back(make_slice(spec, "query1", spec.query_spots, rng, data.query_labels.back()));
  return data;
}

fs::path write_synthetic(const SyntheticDataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  auto emit = [&](const SliceDataset& slice) {
    const fs::path image = slice.slice_id + ".png";
    const fs::path spots = slice.slice_id + "_spots.csv";
    write_png(slice.image, dir / image);
    save_spots_csv(slice, dir / spots);
    entries.push_back({slice.slice_id, image, spots});
  };
  for (const auto& s : data.reference) emit(s);
  for (const auto& s : data.query) emit(s);
  const fs::path manifest = dir / "manifest.json";
  save_manifest(entries, manifest);
  return manifest;
}

}  // namespace histex
