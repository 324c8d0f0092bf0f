#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "salamnet/corpus.hpp"
#include "salamnet/error.hpp"
#include "salamnet/preprocess.hpp"
#include "salamnet/random.hpp"
#include "salamnet/utf8.hpp"

namespace salamnet {

// ---------------------------------------------------------------------------
// Character n-grams
// ---------------------------------------------------------------------------

/// Counts every codepoint window of width [n_min, n_max] (spaces included).
inline std::map<std::string, std::size_t> char_ngram_counts(std::string_view text, int n_min,
                                                            int n_max) {
  // Byte offset of each codepoint boundary, so windows are plain byte slices.
  std::vector<std::size_t> offsets;
  offsets.reserve(text.size() + 1);
  for (std::size_t i = 0; i < text.size(); ++i) {
    if ((static_cast<unsigned char>(text[i]) & 0xC0) != 0x80) offsets.push_back(i);
  }
  offsets.push_back(text.size());
  const std::size_t n_cps = offsets.size() - 1;

  std::map<std::string, std::size_t> counts;
  for (std::size_t start = 0; start < n_cps; ++start) {
    for (int n = n_min; n <= n_max; ++n) {
      const std::size_t end = start + static_cast<std::size_t>(n);
      if (end > n_cps) break;
      ++counts[std::string(text.substr(offsets[start], offsets[end] - offsets[start]))];
    }
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Sparse vectors and TF-IDF
// ---------------------------------------------------------------------------

/// Sorted (index, value) pairs with strictly increasing indices below `dim`.
struct SparseVector {
  std::size_t dim = 0;
  std::vector<std::pair<std::size_t, double>> entries;

  bool empty() const { return entries.empty(); }

  double norm() const {
    double s = 0.0;
    for (const auto& [i, v] : entries) s += v * v;
    return std::sqrt(s);
  }

  double value_at(std::size_t index) const {
    const auto it = std::lower_bound(entries.begin(), entries.end(), index,
                                     [](const auto& e, std::size_t i) { return e.first < i; });
    return it != entries.end() && it->first == index ? it->second : 0.0;
  }

  Eigen::VectorXd dense() const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    for (const auto& [i, v] : entries) out[static_cast<Eigen::Index>(i)] = v;
    return out;
  }

  friend bool operator==(const SparseVector&, const SparseVector&) = default;
};

/// Character n-gram TF-IDF: raw counts, smoothed idf
/// `ln((1 + n_docs) / (1 + df)) + 1`, L2-normalized rows.
struct TfidfModel {
  int ngram_min = 2;
  int ngram_max = 5;
  std::size_t n_docs = 0;
  std::vector<std::string> terms;  // column order, lexicographic
  std::vector<double> idf;         // parallel to `terms`
  std::unordered_map<std::string, std::size_t> index;

  std::size_t dim() const { return terms.size(); }

  std::optional<std::size_t> column(const std::string& ngram) const {
    const auto it = index.find(ngram);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }

  double idf_of(const std::string& ngram) const {
    const auto c = column(ngram);
    if (!c) throw FitError("n-gram not in vocabulary: " + ngram);
    return idf[*c];
  }

  static double smoothed_idf(std::size_t n_docs, std::size_t df) {
    return std::log((1.0 + static_cast<double>(n_docs)) / (1.0 + static_cast<double>(df))) + 1.0;
  }

  void rebuild_index() {
    index.clear();
    index.reserve(terms.size());
    for (std::size_t i = 0; i < terms.size(); ++i) index.emplace(terms[i], i);
  }
};

inline TfidfModel fit_char_tfidf(const std::vector<std::string>& docs, int ngram_min = 2,
                                 int ngram_max = 5) {
  if (docs.empty()) throw FitError("cannot fit TF-IDF on an empty corpus");
  if (ngram_min < 1 || ngram_max < ngram_min) {
    throw ConfigError("invalid n-gram range " + std::to_string(ngram_min) + ".." +
                      std::to_string(ngram_max));
  }
  std::map<std::string, std::size_t> df;
  for (const auto& doc : docs) {
    for (const auto& [gram, count] : char_ngram_counts(doc, ngram_min, ngram_max)) {
      (void)count;
      ++df[gram];
    }
  }
  TfidfModel m;
  m.ngram_min = ngram_min;
  m.ngram_max = ngram_max;
  m.n_docs = docs.size();
  m.terms.reserve(df.size());
  m.idf.reserve(df.size());
  for (const auto& [gram, d] : df) {
    m.terms.push_back(gram);
    m.idf.push_back(TfidfModel::smoothed_idf(m.n_docs, d));
  }
  m.rebuild_index();
  return m;
}

inline SparseVector transform_tfidf(const TfidfModel& model, std::string_view text) {
  SparseVector v;
  v.dim = model.dim();
  for (const auto& [gram, count] : char_ngram_counts(text, model.ngram_min, model.ngram_max)) {
    if (const auto col = model.column(gram)) {
      v.entries.emplace_back(*col, static_cast<double>(count) * model.idf[*col]);
    }
  }
  std::sort(v.entries.begin(), v.entries.end());
  const double n = v.norm();
  if (n > 0.0) {
    for (auto& e : v.entries) e.second /= n;
  }
  return v;
}

/// `#tfidf n_docs=N ngram_min=A ngram_max=B`, then `ngram<TAB>index<TAB>idf`.
inline void write_tfidf(std::ostream& out, const TfidfModel& model) {
  out << "#tfidf n_docs=" << model.n_docs << " ngram_min=" << model.ngram_min
      << " ngram_max=" << model.ngram_max << '\n';
  char buf[32];
  for (std::size_t i = 0; i < model.terms.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", model.idf[i]);
    out << escape_field(model.terms[i]) << '\t' << i << '\t' << buf << '\n';
  }
}

inline TfidfModel read_tfidf(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(source + ": empty TF-IDF file");
  TfidfModel m;
  if (std::sscanf(line.c_str(), "#tfidf n_docs=%zu ngram_min=%d ngram_max=%d", &m.n_docs,
                  &m.ngram_min, &m.ngram_max) != 3) {
    throw FormatError(source + ":1: bad TF-IDF header");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 3) throw FormatError(source + ":" + std::to_string(line_no) + ": expected 3 fields");
    const std::size_t idx = std::stoul(std::string(fields[1]));
    if (idx != m.terms.size()) {
      throw FormatError(source + ":" + std::to_string(line_no) + ": column indices must be dense and ordered");
    }
    m.terms.push_back(unescape_field(fields[0]));
    m.idf.push_back(std::strtod(std::string(fields[2]).c_str(), nullptr));
  }
  m.rebuild_index();
  if (m.index.size() != m.terms.size()) throw FormatError(source + ": duplicate n-gram");
  return m;
}

// ---------------------------------------------------------------------------
// Embeddings and sequences
// ---------------------------------------------------------------------------

/// Pretrained word vectors; column `r` of `matrix` is the vector of the token
/// whose `vocab` entry is `r`.
struct EmbeddingTable {
  std::size_t dim = 0;
  std::unordered_map<std::string, std::size_t> vocab;
  Eigen::MatrixXd matrix;  // dim x rows

  std::size_t rows() const { return static_cast<std::size_t>(matrix.cols()); }

  /// nullptr for out-of-vocabulary tokens.
  const double* lookup(const std::string& token) const {
    const auto it = vocab.find(token);
    if (it == vocab.end()) return nullptr;
    return matrix.col(static_cast<Eigen::Index>(it->second)).data();
  }

  Eigen::VectorXd vector_of(const std::string& token) const {
    const double* p = lookup(token);
    if (p == nullptr) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    return Eigen::Map<const Eigen::VectorXd>(p, static_cast<Eigen::Index>(dim));
  }
};

/// word2vec text format: `count dim` header, then `token v1 ... vdim` lines.
inline EmbeddingTable read_embeddings(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  std::size_t line_no = 0;
  const auto where = [&] { return source + ":" + std::to_string(line_no); };
  if (!std::getline(in, line)) throw FormatError(source + ": empty embedding file");
  ++line_no;
  std::size_t count = 0, dim = 0;
  {
    std::istringstream hs(line);
    if (!(hs >> count >> dim) || dim == 0) throw FormatError(where() + ": expected `count dim` header");
  }
  EmbeddingTable t;
  t.dim = dim;
  t.matrix.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count));
  t.vocab.reserve(count);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::blank(line)) continue;
    if (row == count) throw FormatError(where() + ": more rows than the header's count " + std::to_string(count));
    const char* p = line.data();
    const char* end = p + line.size();
    const char* tok_end = std::find(p, end, ' ');
    std::string token(p, tok_end);
    p = tok_end;
    std::size_t width = 0;
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double v = 0.0;
      const auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) throw FormatError(where() + ": bad number");
      if (width < dim) t.matrix(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(row)) = v;
      ++width;
      p = res.ptr;
    }
    if (width != dim) {
      throw FormatError(where() + ": row has " + std::to_string(width) + " values, expected " +
                        std::to_string(dim));
    }
    if (!t.vocab.emplace(std::move(token), row).second) {
      throw FormatError(where() + ": duplicate token");
    }
    ++row;
  }
  if (row != count) {
    throw FormatError(source + ": header promises " + std::to_string(count) + " rows, found " +
                      std::to_string(row));
  }
  return t;
}

inline EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open embedding file: " + path);
  return read_embeddings(in, path);
}

inline void write_embeddings(std::ostream& out, const EmbeddingTable& t) {
  std::vector<std::pair<std::size_t, std::string>> order;
  for (const auto& [tok, r] : t.vocab) order.emplace_back(r, tok);
  std::sort(order.begin(), order.end());
  out << order.size() << ' ' << t.dim << '\n';
  char buf[32];
  for (const auto& [r, tok] : order) {
    out << tok;
    for (std::size_t d = 0; d < t.dim; ++d) {
      std::snprintf(buf, sizeof buf, "%.17g",
                    t.matrix(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(r)));
      out << ' ' << buf;
    }
    out << '\n';
  }
}

/// Per-timestep inputs of a recurrent model. Column t of `vectors` is x_t;
/// positions with `mask[t] == 0` are padding and hold zeros.
struct SequenceTensor {
  Eigen::MatrixXd vectors;  // dim x length
  std::vector<std::uint8_t> mask;

  std::size_t length() const { return mask.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(vectors.rows()); }

  static SequenceTensor padding(std::size_t dim, std::size_t length = 1) {
    SequenceTensor s;
    s.vectors = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(length));
    s.mask.assign(length, 0);
    return s;
  }
};

/// Embedding lookup per whitespace token. OOV tokens are real timesteps
/// carrying a zero vector; empty text yields one padding step.
inline SequenceTensor encode_sequence(std::string_view text, const EmbeddingTable& table,
                                      std::size_t max_len = 50) {
  if (max_len == 0) throw ConfigError("max_len must be >= 1");
  auto tokens = tokenize(text);
  if (tokens.size() > max_len) tokens.resize(max_len);
  if (tokens.empty()) return SequenceTensor::padding(table.dim);
  SequenceTensor s = SequenceTensor::padding(table.dim, tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    s.mask[t] = 1;
    if (const double* v = table.lookup(tokens[t])) {
      s.vectors.col(static_cast<Eigen::Index>(t)) =
          Eigen::Map<const Eigen::VectorXd>(v, static_cast<Eigen::Index>(table.dim));
    }
  }
  return s;
}

inline std::size_t ngram_bucket(std::string_view ngram, std::size_t buckets) {
  return static_cast<std::size_t>(fnv1a64(ngram) % buckets);
}

/// Hashed TF-IDF per token: every distinct in-vocabulary character n-gram of
/// a token adds (count in the whole document) * idf to bucket
/// FNV-1a(ngram) mod `buckets`. Token rows are L2-normalized when nonzero.
inline SequenceTensor hash_ngram_sequence(std::string_view text, const TfidfModel& model,
                                          std::size_t buckets = 256, std::size_t max_len = 50,
                                          bool normalize = true) {
  if (buckets < 16) throw ConfigError("hash_ngram_sequence needs at least 16 buckets");
  if (max_len == 0) throw ConfigError("max_len must be >= 1");
  auto tokens = tokenize(text);
  if (tokens.size() > max_len) tokens.resize(max_len);
  if (tokens.empty()) return SequenceTensor::padding(buckets);
  const auto doc_counts = char_ngram_counts(text, model.ngram_min, model.ngram_max);
  SequenceTensor s = SequenceTensor::padding(buckets, tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    s.mask[t] = 1;
    auto col = s.vectors.col(static_cast<Eigen::Index>(t));
    for (const auto& [gram, unused] : char_ngram_counts(tokens[t], model.ngram_min, model.ngram_max)) {
      (void)unused;
      const auto c = model.column(gram);
      if (!c) continue;
      const double tf = static_cast<double>(doc_counts.at(gram));
      col[static_cast<Eigen::Index>(ngram_bucket(gram, buckets))] += tf * model.idf[*c];
    }
    if (normalize) {
      const double n = col.norm();
      if (n > 0.0) col /= n;
    }
  }
  return s;
}

/// The whole-document TF-IDF vector as a single timestep.
inline SequenceTensor document_vector_sequence(std::string_view text, const TfidfModel& model) {
  SequenceTensor s = SequenceTensor::padding(model.dim(), 1);
  s.vectors.col(0) = transform_tfidf(model, text).dense();
  s.mask[0] = 1;
  return s;
}

inline Eigen::VectorXd mean_pool(const EmbeddingTable& table, std::string_view text) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(table.dim));
  std::size_t hits = 0;
  for (const auto& tok : tokenize(text)) {
    if (const double* v = table.lookup(tok)) {
      sum += Eigen::Map<const Eigen::VectorXd>(v, static_cast<Eigen::Index>(table.dim));
      ++hits;
    }
  }
  if (hits > 0) sum /= static_cast<double>(hits);
  return sum;
}

}  // namespace salamnet
