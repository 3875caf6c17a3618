#include "histex/dataset_io.hpp"

#include "histex/error.hpp"
#include "internal/csv.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace histex {
namespace fs = std::filesystem;
using detail::LineReader;
using json = nlohmann::json;

namespace {

std::string required_string(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj.at(key).is_string())
    fail(ErrorKind::ParseError, where + ": missing string field '" + key + "'");
  return obj.at(key).get<std::string>();
}

std::string patch_file_name(const std::string& slice_id, const std::string& spot_id) {
  return slice_id + "_" + spot_id + ".png";
}

}  // namespace

void load_spots_csv(const fs::path& path, SliceDataset& slice) {
  LineReader reader(path);
  std::string line;
  if (!reader.next(line)) reader.error("empty spots table");
  const auto header = detail::split_csv(line);
  const char* expected[] = {"spot_id", "x", "y"};
  for (std::size_t i = 0; i < 3; ++i) {
    if (header.size() <= i || detail::trim(header[i]) != expected[i])
      reader.error(std::string("missing column '") + expected[i] + "'");
  }
  slice.gene_names.clear();
  for (std::size_t i = 3; i < header.size(); ++i) slice.gene_names.emplace_back(detail::trim(header[i]));
  if (slice.gene_names.empty()) reader.error("no gene columns after spot_id,x,y");

  slice.spots.clear();
  slice.normalized = false;
  while (reader.next(line)) {
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() < header.size())
      reader.error("missing column '" + std::string(detail::trim(header[fields.size()])) + "'");
    if (fields.size() > header.size()) reader.error("more fields than header columns");
    SpotRecord spot;
    spot.spot_id = std::string(detail::trim(fields[0]));
    long long x = 0, y = 0;
    if (!detail::parse_int(fields[1], x)) reader.error("column 'x' is not an integer");
    if (!detail::parse_int(fields[2], y)) reader.error("column 'y' is not an integer");
    if (x < 0 || y < 0) reader.error("negative spot coordinate");
    spot.x = static_cast<int>(x);
    spot.y = static_cast<int>(y);
    spot.counts.resize(slice.gene_names.size());
    for (std::size_t g = 0; g < slice.gene_names.size(); ++g) {
      double v = 0.0;
      if (!detail::parse_double(fields[g + 3], v)) reader.error("column '" + slice.gene_names[g] + "' is not a number");
      if (!(v >= 0.0)) reader.error("column '" + slice.gene_names[g] + "' holds a negative count");
      spot.counts[g] = v;
    }
    slice.spots.push_back(std::move(spot));
  }
}

void save_spots_csv(const SliceDataset& slice, const fs::path& path) {
  auto out = detail::open_output(path);
  std::string buf = "spot_id,x,y";
  for (const auto& g : slice.gene_names) buf += "," + g;
  buf += '\n';
  for (const auto& s : slice.spots) {
    buf += s.spot_id + "," + std::to_string(s.x) + "," + std::to_string(s.y);
    for (double v : s.counts) {
      buf += ',';
      detail::append_double(buf, v);
    }
    buf += '\n';
  }
  out << buf;
}

std::vector<SliceDataset> load_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  require(in.good(), ErrorKind::ParseError, "cannot open manifest " + manifest_path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, manifest_path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("slices") || !doc["slices"].is_array())
    fail(ErrorKind::ParseError, manifest_path.string() + ": expected an object with a 'slices' array");

  const fs::path base = manifest_path.parent_path();
  std::vector<SliceDataset> slices;
  std::size_t index = 0;
  for (const auto& entry : doc["slices"]) {
    const std::string where = manifest_path.string() + ": slices[" + std::to_string(index++) + "]";
    SliceDataset slice;
    slice.slice_id = required_string(entry, "slice_id", where);
    fs::path image = required_string(entry, "image", where);
    fs::path spots = required_string(entry, "spots", where);
    if (image.is_relative()) image = base / image;
    if (spots.is_relative()) spots = base / spots;
    require(fs::exists(image), ErrorKind::ParseError, where + ": image file " + image.string() + " does not exist");
    require(fs::exists(spots), ErrorKind::ParseError, where + ": spots file " + spots.string() + " does not exist");
    slice.image = read_png(image);
    load_spots_csv(spots, slice);
    slice.validate();
    for (const auto& other : slices)
      require(other.slice_id != slice.slice_id, ErrorKind::ParseError, where + ": duplicate slice_id " + slice.slice_id);
    slices.push_back(std::move(slice));
  }
  require(!slices.empty(), ErrorKind::ParseError, manifest_path.string() + ": manifest lists no slices");
  return slices;
}

void save_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
  json doc;
  doc["slices"] = json::array();
  for (const auto& e : entries)
    doc["slices"].push_back({{"slice_id", e.slice_id}, {"image", e.image.string()}, {"spots", e.spots.string()}});
  auto out = detail::open_output(path);
  out << doc.dump(2) << '\n';
}

void save_pairs(const std::vector<PatchSpotPair>& pairs, const std::vector<std::string>& gene_names, const fs::path& dir) {
  fs::create_directories(dir / "patches");
  auto out = detail::open_output(dir / "pairs.csv");
  std::string buf = "spot_id,slice_id";
  for (const auto& g : gene_names) buf += "," + g;
  buf += '\n';
  for (const auto& p : pairs) {
    require(p.expression.size() == gene_names.size(), ErrorKind::ShapeMismatch,
            "pair " + p.slice_id + "/" + p.spot_id + " expression length differs from gene list");
    buf += p.spot_id + "," + p.slice_id;
    for (double v : p.expression) {
      buf += ',';
      detail::append_double(buf, v);
    }
    buf += '\n';
    write_png(p.patch, dir / "patches" / patch_file_name(p.slice_id, p.spot_id));
  }
  out << buf;
}

PairsArchive load_pairs(const fs::path& dir) {
  const fs::path csv = dir / "pairs.csv";
  require(fs::exists(csv), ErrorKind::ParseError, "pairs archive " + dir.string() + " has no pairs.csv");
  LineReader reader(csv);
  std::string line;
  if (!reader.next(line)) reader.error("empty pairs table");
  const auto header = detail::split_csv(line);
  if (header.size() < 1 || detail::trim(header[0]) != "spot_id") reader.error("missing column 'spot_id'");
  if (header.size() < 2 || detail::trim(header[1]) != "slice_id") reader.error("missing column 'slice_id'");

  PairsArchive archive;
  for (std::size_t i = 2; i < header.size(); ++i) archive.gene_names.emplace_back(detail::trim(header[i]));
  while (reader.next(line)) {
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() < header.size())
      reader.error("missing expression column '" + std::string(detail::trim(header[fields.size()])) + "'");
    if (fields.size() > header.size()) reader.error("more fields than header columns");
    PatchSpotPair pair;
    pair.spot_id = std::string(detail::trim(fields[0]));
    pair.slice_id = std::string(detail::trim(fields[1]));
    pair.expression.resize(archive.gene_names.size());
    for (std::size_t g = 0; g < archive.gene_names.size(); ++g) {
      if (!detail::parse_double(fields[g + 2], pair.expression[g]))
        reader.error("expression column '" + archive.gene_names[g] + "' is not a number");
    }
    const fs::path patch = dir / "patches" / patch_file_name(pair.slice_id, pair.spot_id);
    require(fs::exists(patch), ErrorKind::ParseError, "missing patch image " + patch.string());
    pair.patch = read_png(patch);
    require(pair.patch.height() == kPatchSize && pair.patch.width() == kPatchSize, ErrorKind::ParseError,
            patch.string() + ": patch must be 256x256");
    archive.pairs.push_back(std::move(pair));
  }
  return archive;
}

void save_panel(const GenePanel& panel, const fs::path& path) {
  auto out = detail::open_output(path);
  std::string buf = "gene,score,rank\n";
  for (std::size_t i = 0; i < panel.genes.size(); ++i) {
    buf += panel.genes[i] + ",";
    detail::append_double(buf, panel.scores.at(i));
    buf += "," + std::to_string(i + 1) + "\n";
  }
  out << buf;
}

GenePanel load_panel(const fs::path& path, PanelMode mode) {
  LineReader reader(path);
  std::string line;
  if (!reader.next(line) || detail::trim(line) != "gene,score,rank") reader.error("expected header gene,score,rank");
  GenePanel panel;
  panel.mode = mode;
  while (reader.next(line)) {
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != 3) reader.error("expected 3 fields");
    double score = 0.0;
    long long rank = 0;
    if (!detail::parse_double(fields[1], score)) reader.error("column 'score' is not a number");
    if (!detail::parse_int(fields[2], rank) || rank != static_cast<long long>(panel.genes.size() + 1))
      reader.error("column 'rank' out of sequence");
    panel.genes.emplace_back(detail::trim(fields[0]));
    panel.scores.push_back(score);
  }
  return panel;
}

void save_summary(const DatasetSummary& summary, const fs::path& path) {
  auto out = detail::open_output(path);
  out << "dataset,training_size,testing_size,gene_size\n"
      << summary.dataset << ',' << summary.training_size << ',' << summary.testing_size << ',' << summary.gene_size
      << '\n';
}

}  // namespace histex
