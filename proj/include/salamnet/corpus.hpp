#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "salamnet/error.hpp"
#include "salamnet/random.hpp"

namespace salamnet {

enum class Label : std::uint8_t { NOT = 0, OFF = 1 };

inline std::string_view to_string(Label l) { return l == Label::OFF ? "OFF" : "NOT"; }

inline bool parse_label(std::string_view s, Label& out) {
  if (s == "OFF") {
    out = Label::OFF;
  } else if (s == "NOT") {
    out = Label::NOT;
  } else {
    return false;
  }
  return true;
}

inline double as_target(Label l) { return l == Label::OFF ? 1.0 : 0.0; }

struct Tweet {
  std::string id;
  std::string text;  // raw, pre-normalization
  Label label = Label::NOT;

  friend bool operator==(const Tweet&, const Tweet&) = default;
};

enum class SplitTag { UNSPLIT, TRAIN, DEV, TEST };

struct ClassCounts {
  std::size_t off = 0;
  std::size_t not_off = 0;
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct Corpus {
  std::vector<Tweet> tweets;
  SplitTag split = SplitTag::UNSPLIT;

  std::size_t size() const { return tweets.size(); }
  bool empty() const { return tweets.empty(); }

  ClassCounts counts() const {
    ClassCounts c;
    for (const auto& t : tweets) (t.label == Label::OFF ? c.off : c.not_off)++;
    return c;
  }

  std::vector<std::string> texts() const {
    std::vector<std::string> out;
    out.reserve(tweets.size());
    for (const auto& t : tweets) out.push_back(t.text);
    return out;
  }

  std::vector<Label> labels() const {
    std::vector<Label> out;
    out.reserve(tweets.size());
    for (const auto& t : tweets) out.push_back(t.label);
    return out;
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

inline bool ieq(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

inline bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; });
}

}  // namespace detail

/// `\t`, `\n`, `\r` and `\\` escapes keep one record per line.
inline std::string unescape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[i + 1];
      if (n == 't' || n == 'n' || n == 'r' || n == '\\') {
        out.push_back(n == 't' ? '\t' : n == 'n' ? '\n' : n == 'r' ? '\r' : '\\');
        ++i;
        continue;
      }
    }
    out.push_back(s[i]);
  }
  return out;
}

inline std::string escape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\\': out += "\\\\"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

struct LoadOptions {
  /// Receives non-fatal diagnostics (e.g. ignored trailing columns).
  std::function<void(const std::string&)> warn = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
};

/// Parses `id<TAB>text<TAB>label` records. A first line whose third field is
/// `label` (or the OffensEval column name `subtask_a`) is treated as a header.
inline Corpus read_tsv(std::istream& in, const std::string& source = "<stream>",
                       const LoadOptions& opts = {}) {
  Corpus corpus;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  bool first_record = true;
  bool warned_extra = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::blank(line)) continue;
    const auto fields = detail::split_tabs(line);
    if (first_record) {
      first_record = false;
      if (fields.size() >= 3 &&
          (detail::ieq(fields[2], "label") || detail::ieq(fields[2], "subtask_a"))) {
        continue;
      }
    }
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.size() < 3) {
      throw ParseError(where + ": expected id<TAB>text<TAB>label, got " +
                       std::to_string(fields.size()) + " field(s) (line " +
                       std::to_string(line_no) + ")");
    }
    if (fields.size() > 3 && !warned_extra && opts.warn) {
      opts.warn(where + ": ignoring " + std::to_string(fields.size() - 3) +
                " trailing column(s)");
      warned_extra = true;
    }
    Tweet t;
    t.id = std::string(fields[0]);
    t.text = unescape_field(fields[1]);
    if (t.id.empty()) throw ParseError(where + ": empty id (line " + std::to_string(line_no) + ")");
    if (detail::blank(t.text)) {
      throw ParseError(where + ": empty text (line " + std::to_string(line_no) + ")");
    }
    if (!parse_label(fields[2], t.label)) {
      throw LabelError(where + ": unknown label '" + std::string(fields[2]) + "' on line " +
                       std::to_string(line_no) + " (expected OFF or NOT)");
    }
    if (!seen.insert(t.id).second) {
      throw UniquenessError(where + ": duplicate id '" + t.id + "' on line " +
                            std::to_string(line_no));
    }
    corpus.tweets.push_back(std::move(t));
  }
  return corpus;
}

inline Corpus load_tsv(const std::string& path, const LoadOptions& opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open corpus file: " + path);
  return read_tsv(in, path, opts);
}

inline void write_tsv(std::ostream& out, const Corpus& corpus) {
  out << "id\ttext\tlabel\n";
  for (const auto& t : corpus.tweets) {
    out << t.id << '\t' << escape_field(t.text) << '\t' << to_string(t.label) << '\n';
  }
}

inline void save_tsv(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write corpus file: " + path);
  write_tsv(out, corpus);
}

struct SplitSizes {
  std::size_t train = 7000;
  std::size_t dev = 1000;
  std::size_t test = 2000;
};

/// The official 7000/1000/2000 partition scaled to `n` tweets: 70% and
/// 10% rounded down, the remainder to test.
inline SplitSizes proportional_split(std::size_t n) {
  SplitSizes s;
  s.train = n * 7 / 10;
  s.dev = n / 10;
  s.test = n - s.train - s.dev;
  return s;
}

/// Positional split: first `train`, next `dev`, last `test`. No shuffling.
inline std::tuple<Corpus, Corpus, Corpus> official_split(const Corpus& corpus,
                                                         SplitSizes sizes = {}) {
  if (sizes.train + sizes.dev + sizes.test != corpus.size()) {
    throw SplitError("split sizes " + std::to_string(sizes.train) + "+" +
                     std::to_string(sizes.dev) + "+" + std::to_string(sizes.test) +
                     " do not sum to corpus size " + std::to_string(corpus.size()));
  }
  const auto begin = corpus.tweets.begin();
  const auto take = [&](std::size_t from, std::size_t n, SplitTag tag) {
    Corpus c;
    c.split = tag;
    c.tweets.assign(begin + static_cast<std::ptrdiff_t>(from),
                    begin + static_cast<std::ptrdiff_t>(from + n));
    return c;
  };
  return {take(0, sizes.train, SplitTag::TRAIN),
          take(sizes.train, sizes.dev, SplitTag::DEV),
          take(sizes.train + sizes.dev, sizes.test, SplitTag::TEST)};
}

/// Fold assignment for k-fold cross-validation. `fold_of_index[i]` is the
/// fold of the i-th tweet of the corpus the plan was built from.
struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> ids;
  std::vector<int> fold_of_index;

  int fold_of(const std::string& id) const {
    const auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) throw ConfigError("id not in fold plan: " + id);
    return fold_of_index[static_cast<std::size_t>(it - ids.begin())];
  }

  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
    for (int f : fold_of_index) ++sizes[static_cast<std::size_t>(f)];
    return sizes;
  }

  struct Partition {
    std::vector<std::size_t> test;   // positions in the fold
    std::vector<std::size_t> train;  // all other positions
  };

  /// Corpus positions inside and outside fold `fold`, in corpus order.
  Partition partition(int fold) const {
    Partition p;
    for (std::size_t i = 0; i < fold_of_index.size(); ++i) {
      (fold_of_index[i] == fold ? p.test : p.train).push_back(i);
    }
    return p;
  }

  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

/// Seeded shuffle followed by round-robin assignment.
inline FoldPlan make_folds(const Corpus& corpus, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold requires k >= 2, got " + std::to_string(k));
  if (corpus.size() < static_cast<std::size_t>(k)) {
    throw ConfigError("corpus of " + std::to_string(corpus.size()) +
                      " tweets is too small for " + std::to_string(k) + " folds");
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.ids.reserve(corpus.size());
  for (const auto& t : corpus.tweets) plan.ids.push_back(t.id);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0xF01D));
  rng.shuffle(order);
  plan.fold_of_index.assign(corpus.size(), 0);
  for (std::size_t p = 0; p < order.size(); ++p) {
    plan.fold_of_index[order[p]] = static_cast<int>(p % static_cast<std::size_t>(k));
  }
  return plan;
}

inline Corpus subset(const Corpus& corpus, const std::vector<std::size_t>& positions,
                     SplitTag tag = SplitTag::UNSPLIT) {
  Corpus c;
  c.split = tag;
  c.tweets.reserve(positions.size());
  for (std::size_t i : positions) c.tweets.push_back(corpus.tweets.at(i));
  return c;
}

/// Appends seeded with-replacement copies of minority tweets until both
/// classes have equal counts. Copies get ids `<orig>#dup<N>`.
inline Corpus upsample_minority(const Corpus& corpus, std::uint64_t seed) {
  const auto counts = corpus.counts();
  if (counts.off == 0 || counts.not_off == 0) {
    throw RebalanceError("upsampling needs both classes (OFF=" + std::to_string(counts.off) +
                         ", NOT=" + std::to_string(counts.not_off) + ")");
  }
  Corpus out = corpus;
  if (counts.off == counts.not_off) return out;
  const Label minority = counts.off < counts.not_off ? Label::OFF : Label::NOT;
  const std::size_t deficit =
      std::max(counts.off, counts.not_off) - std::min(counts.off, counts.not_off);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus.tweets[i].label == minority) pool.push_back(i);
  }
  std::unordered_set<std::string> ids;
  for (const auto& t : corpus.tweets) ids.insert(t.id);
  std::unordered_map<std::string, std::size_t> dup_counter;
  Rng rng(derive_seed(seed, 0x0A5A));
  for (std::size_t n = 0; n < deficit; ++n) {
    Tweet copy = corpus.tweets[pool[rng.below(pool.size())]];
    auto& counter = dup_counter[copy.id];
    std::string id;
    do {
      id = copy.id + "#dup" + std::to_string(++counter);
    } while (ids.count(id) != 0);
    ids.insert(id);
    copy.id = std::move(id);
    out.tweets.push_back(std::move(copy));
  }
  return out;
}

}  // namespace salamnet
