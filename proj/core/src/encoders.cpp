#include "histex/encoders.hpp"

#include "histex/data.hpp"
#include "histex/error.hpp"
#include "histex/parallel.hpp"
#include "internal/tensor_file.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace histex {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Per-sample passes allocate and free multi-megabyte buffers at a high rate. glibc's default
// thresholds return them to the kernel every time, which costs more than the arithmetic.
void keep_large_buffers() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

constexpr char kMagic[8] = {'H', 'I', 'S', 'T', 'E', 'X', 'C', 'K'};
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

nn::Backbone make_backbone(const EncoderConfig& config, nn::ParamSet& params) {
  nn::InitRng rng(config.init_seed);
  if (config.backbone == BackboneKind::Residual50) return nn::Backbone::residual50(params, "image.backbone", rng);
  return nn::Backbone::compact(params, "image.backbone", config.compact, rng);
}

json config_to_json(const EncoderConfig& c) {
  json blocks = json::array();
  for (const auto& b : c.compact.blocks)
    blocks.push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"stride", b.stride}, {"padding", b.padding}});
  return {{"gene_dim", c.gene_dim},
          {"embed_dim", c.embed_dim},
          {"backbone", nn::to_string(c.backbone)},
          {"compact_blocks", blocks},
          {"dropout", c.dropout},
          {"init_seed", c.init_seed}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  try {
    c.gene_dim = j.at("gene_dim").get<Index>();
    c.embed_dim = j.at("embed_dim").get<Index>();
    c.backbone = nn::parse_backbone_kind(j.at("backbone").get<std::string>());
    c.compact.blocks.clear();
    for (const auto& b : j.at("compact_blocks"))
      c.compact.blocks.push_back({b.at("out_channels").get<int>(), b.at("kernel").get<int>(), b.at("stride").get<int>(),
                                  b.at("padding").get<int>()});
    c.dropout = j.at("dropout").get<double>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, std::string("checkpoint config: ") + e.what());
  }
  return c;
}

void fnv1a(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

void copy_tensor(nn::Param& dst, const detail::TensorFile& file, const detail::TensorFile::Entry& e,
                 const std::string& where) {
  require(e.shape == dst.shape, ErrorKind::ShapeMismatch, where + ": tensor " + e.name + " has a different shape");
  std::copy_n(file.data.begin() + static_cast<std::ptrdiff_t>(e.offset), e.count, dst.value.begin());
}

}  // namespace

namespace detail {

std::vector<TensorFile::Entry> TensorFile::entries() const {
  std::vector<Entry> out;
  try {
    for (const auto& t : header.at("tensors")) {
      Entry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<std::vector<std::ptrdiff_t>>();
      e.offset = t.at("offset").get<std::size_t>();
      e.count = 1;
      for (auto s : e.shape) e.count *= static_cast<std::size_t>(s);
      require(e.offset + e.count <= data.size(), ErrorKind::ParseError, "tensor " + e.name + " exceeds payload");
      out.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    fail(ErrorKind::ParseError, std::string("checkpoint tensor table: ") + ex.what());
  }
  return out;
}

TensorFile read_tensor_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::ParseError, "cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t header_size = 0;
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kMagic, 8) == 0, ErrorKind::ParseError, path.string() + ": not a checkpoint");
  in.read(reinterpret_cast<char*>(&header_size), sizeof header_size);
  require(in.good() && header_size < (1ULL << 32), ErrorKind::ParseError, path.string() + ": bad header size");
  std::string header(header_size, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_size));
  require(in.good(), ErrorKind::ParseError, path.string() + ": truncated header");

  TensorFile file;
  try {
    file.header = json::parse(header);
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
  require(file.header.value("format", 0) == kFormatVersion, ErrorKind::ParseError,
          path.string() + ": unsupported checkpoint format");
  const auto count = file.header.value("payload_doubles", std::size_t{0});
  file.data.resize(count);
  in.read(reinterpret_cast<char*>(file.data.data()), static_cast<std::streamsize>(count * sizeof(double)));
  require(static_cast<std::size_t>(in.gcount()) == count * sizeof(double), ErrorKind::ParseError,
          path.string() + ": truncated tensor payload");
  return file;
}

}  // namespace detail

DualEncoder::DualEncoder(const EncoderConfig& config)
    : config_((keep_large_buffers(), config)),
      backbone_(make_backbone(config, params_)),
      image_head_(params_, "image.head", backbone_.feature_dim(), config.embed_dim, config.dropout),
      spot_linear_(params_, "spot.linear.W", "spot.linear.b", config.gene_dim, config.embed_dim),
      spot_head_(params_, "spot.head", config.embed_dim, config.embed_dim, config.dropout) {
  nn::InitRng rng(config.init_seed ^ 0x9e3779b97f4a7c15ULL);
  for (auto& p : params_) {
    if (p.shape.size() != 2) continue;
    init_uniform(p, 1.0 / std::sqrt(static_cast<double>(p.shape[1])), rng);
  }
}

Matrix DualEncoder::image_features(std::span<const Raster* const> patches, std::size_t lanes) const {
  Matrix z(static_cast<Index>(patches.size()), backbone_.feature_dim());
  for (const auto* p : patches) {
    require(p != nullptr && p->height() == kPatchSize && p->width() == kPatchSize, ErrorKind::ShapeMismatch,
            "image encoder expects 256x256x3 patches");
  }
  run_lanes(partition_lanes(patches.size(), lanes), [&](const LaneRange& r) {
    for (std::size_t i = r.begin; i < r.end; ++i) z.row(static_cast<Index>(i)) = backbone_.forward(*patches[i]).transpose();
  });
  return z;
}

EmbeddingBatch DualEncoder::encode_images(std::span<const Raster* const> patches, Mode mode, nn::DropoutRng* rng,
                                          std::size_t lanes) const {
  return {image_head_.forward(image_features(patches, lanes), mode, rng), mode};
}

EmbeddingBatch DualEncoder::encode_spots(const Matrix& expressions, Mode mode, nn::DropoutRng* rng) const {
  require(expressions.cols() == config_.gene_dim, ErrorKind::ShapeMismatch,
          "spot encoder expects " + std::to_string(config_.gene_dim) + " genes, got " + std::to_string(expressions.cols()));
  return {spot_head_.forward(spot_linear_.forward(expressions), mode, rng), mode};
}

std::string DualEncoder::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::string cfg = config_to_json(config_).dump();
  fnv1a(h, cfg.data(), cfg.size());
  for (const auto& p : params_) {
    fnv1a(h, p.name.data(), p.name.size());
    fnv1a(h, p.value.data(), p.value.size() * sizeof(double));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void DualEncoder::load_backbone_weights(const fs::path& path) {
  const auto file = detail::read_tensor_file(path);
  const std::string prefix = "image.backbone.";
  std::size_t copied = 0;
  for (const auto& e : file.entries()) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    nn::Param* p = params_.find(e.name);
    require(p != nullptr, ErrorKind::ShapeMismatch, path.string() + ": unknown backbone tensor " + e.name);
    copy_tensor(*p, file, e, path.string());
    ++copied;
  }
  std::size_t expected = 0;
  for (const auto& p : params_)
    if (p.name.rfind(prefix, 0) == 0) ++expected;
  require(copied == expected, ErrorKind::ShapeMismatch,
          path.string() + ": provides " + std::to_string(copied) + " of " + std::to_string(expected) + " backbone tensors");
}

void save_encoder(const fs::path& path, const DualEncoder& model, const std::string& metadata_json) {
  json header;
  header["format"] = kFormatVersion;
  header["config"] = config_to_json(model.config());
  header["fingerprint"] = model.fingerprint();
  try {
    header["metadata"] = json::parse(metadata_json);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& p : model.params()) {
    tensors.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}});
    offset += p.value.size();
  }
  header["tensors"] = std::move(tensors);
  header["payload_doubles"] = offset;
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::IoError, "cannot write checkpoint " + path.string());
  const std::uint64_t size = text.size();
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&size), sizeof size);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.params())
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  require(out.good(), ErrorKind::IoError, "failed writing checkpoint " + path.string());
}

LoadedEncoder load_encoder(const fs::path& path) {
  const auto file = detail::read_tensor_file(path);
  require(file.header.contains("config"), ErrorKind::ParseError, path.string() + ": missing config");
  LoadedEncoder loaded;
  loaded.model = std::make_unique<DualEncoder>(config_from_json(file.header["config"]));
  const auto entries = file.entries();
  require(entries.size() == loaded.model->params().size(), ErrorKind::ShapeMismatch,
          path.string() + ": tensor count differs from the configured model");
  for (const auto& e : entries) {
    nn::Param* p = loaded.model->params().find(e.name);
    require(p != nullptr, ErrorKind::ShapeMismatch, path.string() + ": unexpected tensor " + e.name);
    copy_tensor(*p, file, e, path.string());
  }
  loaded.metadata_json = file.header.value("metadata", json::object()).dump();
  return loaded;
}

}  // namespace histex
