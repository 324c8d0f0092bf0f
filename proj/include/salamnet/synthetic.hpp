#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "salamnet/corpus.hpp"
#include "salamnet/error.hpp"
#include "salamnet/features.hpp"
#include "salamnet/random.hpp"

namespace salamnet {

/// Stand-in corpus for experiments without the real data. A tweet is OFF
/// exactly when it contains one of the insult tokens; everything else is
/// drawn from a neutral vocabulary. All words pass the bundled
/// normalization pipeline unchanged, apart from hashtag decoration.
namespace synthetic {

inline const std::vector<std::string>& insult_words() {
  static const std::vector<std::string> words{
      "غبي", "حقير", "تافه", "وسخ", "قذر", "سافل", "منحط", "جبان", "لئيم", "خسيس",
  };
  return words;
}

inline const std::vector<std::string>& neutral_words() {
  static const std::vector<std::string> words{
      "جميل", "صباح", "مساء", "الخير", "سلام", "كتاب", "مدرسه", "شارع", "مدينه", "بيت",
      "سياره", "طعام", "قهوه", "شاي", "بحر", "سماء", "شمس", "قمر", "مطر", "رياضه",
      "مباراه", "فريق", "لاعب", "هدف", "جمهور", "طالب", "معلم", "عمل", "سوق", "صديق",
      "عائله", "اخبار", "رساله", "برنامج", "تطبيق", "هاتف", "صوره", "فيلم", "اغنيه", "رحله",
      "سفر", "وطن", "حب", "فرح", "نجاح", "مستقبل", "تاريخ", "علم", "ثقافه", "حديقه",
      "زهره", "نهر", "جبل", "ليله", "نهار", "طريق", "مطعم", "جامعه", "مكتب", "سوال",
  };
  return words;
}

}  // namespace synthetic

struct SyntheticOptions {
  std::size_t n = 2000;
  std::uint64_t seed = 7;
  double offensive_ratio = 0.19;
  std::size_t min_tokens = 5;
  std::size_t max_tokens = 14;
  double hashtag_rate = 0.15;
};

/// OFF count is round(n * ratio); ids are `syn00001`, ... in file order.
inline Corpus generate_synthetic(const SyntheticOptions& opt) {
  if (opt.n < 20) throw ConfigError("synthetic corpus needs n >= 20 (got " + std::to_string(opt.n) + ")");
  if (!(opt.offensive_ratio > 0.0 && opt.offensive_ratio < 1.0)) {
    throw ConfigError("offensive ratio must lie strictly between 0 and 1");
  }
  const auto n_off = static_cast<std::size_t>(std::llround(static_cast<double>(opt.n) * opt.offensive_ratio));
  if (n_off == 0 || n_off == opt.n) throw ConfigError("offensive ratio leaves one class empty");
  if (opt.min_tokens < 2 || opt.max_tokens < opt.min_tokens) throw ConfigError("bad synthetic token range");

  Rng rng(derive_seed(opt.seed, 0x5E7));
  std::vector<Label> labels(opt.n, Label::NOT);
  for (std::size_t i = 0; i < n_off; ++i) labels[i] = Label::OFF;
  rng.shuffle(labels);

  const auto& neutral = synthetic::neutral_words();
  const auto& insults = synthetic::insult_words();
  const int width = opt.n >= 100000 ? 7 : 5;
  Corpus c;
  c.tweets.reserve(opt.n);
  for (std::size_t i = 0; i < opt.n; ++i) {
    const std::size_t len = opt.min_tokens + rng.below(opt.max_tokens - opt.min_tokens + 1);
    std::vector<std::string> toks;
    for (std::size_t k = 0; k < len; ++k) toks.push_back(neutral[rng.below(neutral.size())]);
    if (labels[i] == Label::OFF) {
      const std::size_t planted = 1 + rng.below(2);
      for (std::size_t k = 0; k < planted; ++k) toks[rng.below(toks.size())] = insults[rng.below(insults.size())];
    }
    if (rng.uniform() < opt.hashtag_rate) {
      const std::size_t at = rng.below(toks.size() - 1);
      toks[at] = "#" + toks[at] + "_" + toks[at + 1];
      toks.erase(toks.begin() + static_cast<std::ptrdiff_t>(at) + 1);
    }
    std::string text;
    for (const auto& t : toks) {
      if (!text.empty()) text += ' ';
      text += t;
    }
    char id[16];
    std::snprintf(id, sizeof id, "syn%0*zu", width, i + 1);
    c.tweets.push_back({id, std::move(text), labels[i]});
  }
  return c;
}

inline Corpus generate_synthetic(std::size_t n, std::uint64_t seed, double offensive_ratio = 0.19) {
  SyntheticOptions o;
  o.n = n;
  o.seed = seed;
  o.offensive_ratio = offensive_ratio;
  return generate_synthetic(o);
}

/// Random embeddings over the synthetic vocabulary. Insult words share a
/// common offset direction so averaged vectors carry the label signal.
inline EmbeddingTable synthetic_embeddings(std::size_t dim, std::uint64_t seed) {
  if (dim < 2) throw ConfigError("embedding dimension must be at least 2");
  Rng rng(derive_seed(seed, 0xE3B));
  const auto gauss = [&] {
    // Box-Muller; draws stay inside the project's own generator.
    const double u1 = 1.0 - rng.uniform();
    const double u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  };
  Eigen::VectorXd offset(static_cast<Eigen::Index>(dim));
  for (auto& v : offset) v = gauss();
  offset.normalize();

  std::vector<std::string> vocab = synthetic::neutral_words();
  const std::size_t n_neutral = vocab.size();
  for (const auto& w : synthetic::insult_words()) vocab.push_back(w);

  EmbeddingTable t;
  t.dim = dim;
  t.matrix.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(vocab.size()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t r = 0; r < vocab.size(); ++r) {
    auto col = t.matrix.col(static_cast<Eigen::Index>(r));
    for (Eigen::Index d = 0; d < col.size(); ++d) col[d] = gauss() * scale;
    if (r >= n_neutral) col += 2.0 * offset;
    t.vocab.emplace(vocab[r], r);
  }
  return t;
}

}  // namespace salamnet
