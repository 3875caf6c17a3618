#include "histex/retrieval.hpp"

#include "histex/error.hpp"
#include "histex/parallel.hpp"
#include "internal/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <queue>

namespace histex {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Candidate {
  double score;
  Index index;
};

/// Strict ranking: higher score first, then lower index.
bool ranks_before(const Candidate& a, const Candidate& b) noexcept {
  return a.score > b.score || (a.score == b.score && a.index < b.index);
}

double dot(const double* a, const double* b, Index n) noexcept {
  double s = 0.0;
  for (Index i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

Matrix read_matrix_csv(const fs::path& path, std::vector<std::string>* header_out) {
  detail::LineReader reader(path);
  std::string line;
  if (!reader.next(line)) reader.error("empty file");
  const auto header = detail::split_csv(line);
  if (header_out)
    for (auto h : header) header_out->emplace_back(detail::trim(h));
  std::vector<double> values;
  Index rows = 0;
  while (reader.next(line)) {
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != header.size()) reader.error("expected " + std::to_string(header.size()) + " fields");
    for (auto f : fields) {
      double v = 0.0;
      if (!detail::parse_double(f, v)) reader.error("not a number");
      values.push_back(v);
    }
    ++rows;
  }
  Matrix m(rows, static_cast<Index>(header.size()));
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

void write_matrix_csv(const Matrix& m, const std::vector<std::string>& header, const fs::path& path) {
  auto out = detail::open_output(path);
  std::string buf;
  for (std::size_t i = 0; i < header.size(); ++i) buf += (i ? "," : "") + header[i];
  buf += '\n';
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) buf += ',';
      detail::append_double(buf, m(r, c));
    }
    buf += '\n';
  }
  out << buf;
}

std::vector<std::string> embedding_header(Index d) {
  std::vector<std::string> h;
  for (Index i = 1; i <= d; ++i) h.push_back("e" + std::to_string(i));
  return h;
}

}  // namespace

void EmbeddingBank::validate() const {
  require(embeddings.rows() == expressions.rows() && static_cast<Index>(ids.size()) == embeddings.rows(),
          ErrorKind::ShapeMismatch, "bank row counts disagree");
  require(gene_names.empty() || static_cast<Index>(gene_names.size()) == expressions.cols(), ErrorKind::ShapeMismatch,
          "bank gene names disagree with expression width");
  require(embeddings.allFinite() && expressions.allFinite(), ErrorKind::NonFiniteInput, "bank holds non-finite values");
}

std::string format_spot_id(const SpotId& id) { return id.slice_id + "/" + id.spot_id; }

EmbeddingBank build_bank(const DualEncoder& model, const std::vector<const PatchSpotPair*>& pairs,
                         const std::vector<std::string>& gene_names, std::size_t lanes) {
  EmbeddingBank bank;
  bank.fingerprint = model.fingerprint();
  bank.gene_names = gene_names;
  const Index d = model.config().gene_dim;
  std::vector<const Raster*> patches;
  bank.expressions.resize(static_cast<Index>(pairs.size()), d);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    require(static_cast<Index>(pairs[i]->expression.size()) == d, ErrorKind::ShapeMismatch,
            "pair " + pairs[i]->spot_id + " expression length differs from the encoder's gene dimension");
    patches.push_back(&pairs[i]->patch);
    for (Index g = 0; g < d; ++g) bank.expressions(static_cast<Index>(i), g) = pairs[i]->expression[static_cast<size_t>(g)];
    bank.ids.push_back({pairs[i]->slice_id, pairs[i]->spot_id});
  }
  bank.embeddings = patches.empty() ? Matrix(0, model.config().embed_dim)
                                    : model.encode_images(patches, Mode::Eval, nullptr, lanes).rows;
  bank.validate();
  return bank;
}

EmbeddingBank build_bank(const DualEncoder& model, const std::vector<PatchSpotPair>& pairs,
                         const std::vector<std::string>& gene_names, std::size_t lanes) {
  std::vector<const PatchSpotPair*> ptrs;
  ptrs.reserve(pairs.size());
  for (const auto& p : pairs) ptrs.push_back(&p);
  return build_bank(model, ptrs, gene_names, lanes);
}

TopK topk(std::span<const double> query, const Matrix& bank, Index k) {
  const Index n = bank.rows();
  require(k >= 1 && k <= n, ErrorKind::KOutOfRange,
          "K=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  require(static_cast<Index>(query.size()) == bank.cols(), ErrorKind::ShapeMismatch,
          "query has " + std::to_string(query.size()) + " dims, bank has " + std::to_string(bank.cols()));

  auto worse_on_top = [](const Candidate& a, const Candidate& b) { return ranks_before(a, b); };
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse_on_top)> heap(worse_on_top);
  for (Index i = 0; i < n; ++i) {
    const Candidate c{dot(bank.data() + i * bank.cols(), query.data(), bank.cols()), i};
    if (static_cast<Index>(heap.size()) < k) {
      heap.push(c);
    } else if (ranks_before(c, heap.top())) {
      heap.pop();
      heap.push(c);
    }
  }
  TopK out;
  out.indices.resize(static_cast<size_t>(k));
  out.scores.resize(static_cast<size_t>(k));
  for (Index r = k; r-- > 0;) {
    out.indices[static_cast<size_t>(r)] = heap.top().index;
    out.scores[static_cast<size_t>(r)] = heap.top().score;
    heap.pop();
  }
  return out;
}

TopK topk(std::span<const double> query, const EmbeddingBank& bank, Index k) { return topk(query, bank.embeddings, k); }

Vector average_rows(const Matrix& expressions, const std::vector<Index>& indices) {
  Vector mean = Vector::Zero(expressions.cols());
  for (auto i : indices) mean += expressions.row(i).transpose();
  if (!indices.empty()) mean /= static_cast<double>(indices.size());
  return mean;
}

void check_fingerprint(const EmbeddingBank& bank, const DualEncoder& model) {
  const auto fp = model.fingerprint();
  require(bank.fingerprint == fp, ErrorKind::FingerprintMismatch,
          "bank built with encoder " + bank.fingerprint + ", query encoder is " + fp);
}

RetrievalResult impute(const Raster& query_patch, const DualEncoder& model, const EmbeddingBank& bank, Index k) {
  check_fingerprint(bank, model);
  const Raster* p = &query_patch;
  const Matrix emb = model.encode_images(std::span<const Raster* const>(&p, 1), Mode::Eval).rows;
  const auto hits = topk(std::span<const double>(emb.data(), static_cast<size_t>(emb.cols())), bank, k);
  return {hits.indices, hits.scores, average_rows(bank.expressions, hits.indices)};
}

Matrix impute_embeddings(const Matrix& query_embeddings, const EmbeddingBank& bank, Index k) {
  Matrix out(query_embeddings.rows(), bank.expressions.cols());
  for (Index q = 0; q < query_embeddings.rows(); ++q) {
    const auto hits = topk(std::span<const double>(query_embeddings.data() + q * query_embeddings.cols(),
                                                   static_cast<size_t>(query_embeddings.cols())),
                           bank, k);
    out.row(q) = average_rows(bank.expressions, hits.indices).transpose();
  }
  return out;
}

Matrix impute_batch(const std::vector<const Raster*>& query_patches, const DualEncoder& model, const EmbeddingBank& bank,
                    Index k, std::size_t lanes) {
  check_fingerprint(bank, model);
  if (query_patches.empty()) return Matrix(0, bank.expressions.cols());
  require(k >= 1 && k <= bank.size(), ErrorKind::KOutOfRange,
          "K=" + std::to_string(k) + " outside [1, " + std::to_string(bank.size()) + "]");
  const Matrix emb = model.encode_images(query_patches, Mode::Eval, nullptr, lanes).rows;
  return impute_embeddings(emb, bank, k);
}

void export_embeddings(const EmbeddingBank& bank, const Matrix& query_embeddings, const std::vector<SpotId>& query_ids,
                       const fs::path& path) {
  require(static_cast<Index>(query_ids.size()) == query_embeddings.rows(), ErrorKind::ShapeMismatch,
          "query ids and embeddings differ in count");
  require(query_embeddings.rows() == 0 || query_embeddings.cols() == bank.embeddings.cols(), ErrorKind::ShapeMismatch,
          "query and reference embedding widths differ");
  auto out = detail::open_output(path);
  std::string buf = "id,set";
  for (const auto& h : embedding_header(bank.embeddings.cols())) buf += "," + h;
  buf += '\n';
  auto emit = [&](const SpotId& id, const char* set, const double* row, Index n) {
    buf += format_spot_id(id) + "," + set;
    for (Index i = 0; i < n; ++i) {
      buf += ',';
      detail::append_double(buf, row[i]);
    }
    buf += '\n';
  };
  for (Index r = 0; r < bank.size(); ++r)
    emit(bank.ids[static_cast<size_t>(r)], "reference", bank.embeddings.data() + r * bank.embeddings.cols(),
         bank.embeddings.cols());
  for (Index r = 0; r < query_embeddings.rows(); ++r)
    emit(query_ids[static_cast<size_t>(r)], "query", query_embeddings.data() + r * query_embeddings.cols(),
         query_embeddings.cols());
  out << buf;
}

void save_bank(const EmbeddingBank& bank, const fs::path& prefix) {
  bank.validate();
  const std::string base = prefix.string();
  write_matrix_csv(bank.embeddings, embedding_header(bank.embeddings.cols()), base + ".embeddings.csv");
  std::vector<std::string> genes = bank.gene_names;
  if (genes.empty())
    for (Index g = 1; g <= bank.expressions.cols(); ++g) genes.push_back("g" + std::to_string(g));
  write_matrix_csv(bank.expressions, genes, base + ".expressions.csv");
  {
    auto out = detail::open_output(base + ".ids.csv");
    std::string buf = "slice_id,spot_id\n";
    for (const auto& id : bank.ids) buf += id.slice_id + "," + id.spot_id + "\n";
    out << buf;
  }
  json meta = {{"d", bank.expressions.cols()},
               {"d_o", bank.embeddings.cols()},
               {"n", bank.size()},
               {"fingerprint", bank.fingerprint},
               {"has_gene_names", !bank.gene_names.empty()}};
  auto out = detail::open_output(base + ".meta.json");
  out << meta.dump(2) << '\n';
}

EmbeddingBank load_bank(const fs::path& prefix) {
  const std::string base = prefix.string();
  std::ifstream meta_in(base + ".meta.json");
  require(meta_in.good(), ErrorKind::ParseError, "missing bank metadata " + base + ".meta.json");
  json meta;
  try {
    meta_in >> meta;
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, base + ".meta.json: " + e.what());
  }
  EmbeddingBank bank;
  bank.embeddings = read_matrix_csv(base + ".embeddings.csv", nullptr);
  std::vector<std::string> genes;
  bank.expressions = read_matrix_csv(base + ".expressions.csv", &genes);
  if (meta.value("has_gene_names", true)) bank.gene_names = genes;

  detail::LineReader reader(base + ".ids.csv");
  std::string line;
  if (!reader.next(line) || detail::trim(line) != "slice_id,spot_id") reader.error("expected header slice_id,spot_id");
  while (reader.next(line)) {
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 2) reader.error("expected 2 fields");
    bank.ids.push_back({std::string(detail::trim(f[0])), std::string(detail::trim(f[1]))});
  }
  bank.fingerprint = meta.value("fingerprint", std::string{});
  require(meta.value("d", Index{-1}) == bank.expressions.cols() && meta.value("d_o", Index{-1}) == bank.embeddings.cols(),
          ErrorKind::ShapeMismatch, base + ": bank files disagree with metadata dimensions");
  bank.validate();
  return bank;
}

void save_expression_table(const ExpressionTable& table, const fs::path& path) {
  require(static_cast<Index>(table.ids.size()) == table.values.rows() &&
              static_cast<Index>(table.gene_names.size()) == table.values.cols(),
          ErrorKind::ShapeMismatch, "expression table labels disagree with its matrix");
  auto out = detail::open_output(path);
  std::string buf = "slice_id,spot_id";
  for (const auto& g : table.gene_names) buf += "," + g;
  buf += '\n';
  for (Index r = 0; r < table.values.rows(); ++r) {
    const auto& id = table.ids[static_cast<size_t>(r)];
    buf += id.slice_id + "," + id.spot_id;
    for (Index c = 0; c < table.values.cols(); ++c) {
      buf += ',';
      detail::append_double(buf, table.values(r, c));
    }
    buf += '\n';
  }
  out << buf;
}

ExpressionTable load_expression_table(const fs::path& path) {
  detail::LineReader reader(path);
  std::string line;
  if (!reader.next(line)) reader.error("empty file");
  const auto header = detail::split_csv(line);
  if (header.size() < 2 || detail::trim(header[0]) != "slice_id" || detail::trim(header[1]) != "spot_id")
    reader.error("expected header slice_id,spot_id,<genes>");
  ExpressionTable table;
  for (std::size_t i = 2; i < header.size(); ++i) table.gene_names.emplace_back(detail::trim(header[i]));
  std::vector<double> values;
  while (reader.next(line)) {
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != header.size()) reader.error("expected " + std::to_string(header.size()) + " fields");
    table.ids.push_back({std::string(detail::trim(f[0])), std::string(detail::trim(f[1]))});
    for (std::size_t i = 2; i < f.size(); ++i) {
      double v = 0.0;
      if (!detail::parse_double(f[i], v)) reader.error("not a number");
      values.push_back(v);
    }
  }
  table.values = Matrix(static_cast<Index>(table.ids.size()), static_cast<Index>(table.gene_names.size()));
  std::copy(values.begin(), values.end(), table.values.data());
  return table;
}

}  // namespace histex
