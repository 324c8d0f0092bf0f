#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "salamnet/error.hpp"
#include "salamnet/utf8.hpp"

namespace salamnet {

// ---------------------------------------------------------------------------
// Character classes
// ---------------------------------------------------------------------------

namespace chars {

inline bool is_arabic_letter(char32_t c) {
  return (c >= 0x0621 && c <= 0x063A) || (c >= 0x0641 && c <= 0x064A) ||
         c == 0x066E || c == 0x066F || (c >= 0x0671 && c <= 0x06D3) || c == 0x06D5 ||
         c == 0x06EE || c == 0x06EF || (c >= 0x06FA && c <= 0x06FC) || c == 0x06FF;
}

inline bool is_latin_letter(char32_t c) {
  return (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z');
}

inline bool is_letter(char32_t c) { return is_arabic_letter(c) || is_latin_letter(c); }

inline bool is_space(char32_t c) {
  return c == U' ' || (c >= 0x09 && c <= 0x0D) || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000;
}

/// Tashkeel: tanween, short vowels, shadda, sukun, superscript alif.
inline bool is_diacritic(char32_t c) { return (c >= 0x064B && c <= 0x0652) || c == 0x0670; }

/// Marks that sit inside a word and vanish without leaving a gap: tashkeel,
/// other Arabic combining marks, tatweel, zero-width and bidi controls.
inline bool is_intraword_mark(char32_t c) {
  return is_diacritic(c) || (c >= 0x0653 && c <= 0x065F) || c == 0x0640 ||
         (c >= 0x06D6 && c <= 0x06ED) || (c >= 0x200B && c <= 0x200F) ||
         (c >= 0x202A && c <= 0x202E) || (c >= 0x2060 && c <= 0x2064) ||
         (c >= 0x2066 && c <= 0x2069) || c == 0xFEFF || (c >= 0xFE00 && c <= 0xFE0F);
}

inline bool is_digit(char32_t c) {
  return (c >= U'0' && c <= U'9') || (c >= 0x0660 && c <= 0x0669) || (c >= 0x06F0 && c <= 0x06F9);
}

inline bool is_emoji(char32_t c) {
  return (c >= 0x1F000 && c <= 0x1FAFF) || (c >= 0x2600 && c <= 0x27BF) ||
         (c >= 0x2B00 && c <= 0x2BFF) || (c >= 0x2300 && c <= 0x23FF) ||
         (c >= 0x2190 && c <= 0x21FF) || (c >= 0x25A0 && c <= 0x25FF) || c == 0x2934 ||
         c == 0x2935 || c == 0x3030 || c == 0x303D || c == 0x3297 || c == 0x3299 ||
         c == 0x00A9 || c == 0x00AE || c == 0x203C || c == 0x2049 || c == 0x2122 ||
         c == 0x2139 || c == 0x200D || c == 0x20E3 || (c >= 0xFE00 && c <= 0xFE0F) ||
         (c >= 0xE0020 && c <= 0xE007F);
}

}  // namespace chars

// ---------------------------------------------------------------------------
// Lexicons
// ---------------------------------------------------------------------------

enum class LexiconKind { EMOJI, DIALECT, HYPERNYM, STOPWORD };

inline std::string_view to_string(LexiconKind k) {
  switch (k) {
    case LexiconKind::EMOJI: return "emoji";
    case LexiconKind::DIALECT: return "dialect";
    case LexiconKind::HYPERNYM: return "hypernym";
    case LexiconKind::STOPWORD: return "stopword";
  }
  return "?";
}

/// surface form -> replacement. Stopword lexicons map every key to "".
struct LexiconMap {
  LexiconKind kind = LexiconKind::DIALECT;
  std::map<std::string, std::string> entries;

  bool contains(const std::string& key) const { return entries.count(key) != 0; }

  const std::string* find(const std::string& key) const {
    const auto it = entries.find(key);
    return it == entries.end() ? nullptr : &it->second;
  }

  /// Enforces key != value and, for hypernyms, that no value is itself a key.
  void validate(const std::string& source = "<lexicon>") const {
    for (const auto& [k, v] : entries) {
      if (k.empty()) throw FormatError(source + ": empty key");
      if (kind != LexiconKind::STOPWORD && k == v) {
        throw FormatError(source + ": key maps to itself: " + k);
      }
      if (kind == LexiconKind::HYPERNYM && contains(v)) {
        throw FormatError(source + ": hypernym '" + v + "' is also a hyponym key");
      }
    }
  }

  static LexiconMap from(LexiconKind kind, std::initializer_list<std::pair<std::string, std::string>> es) {
    LexiconMap m;
    m.kind = kind;
    for (const auto& [k, v] : es) m.entries[k] = v;
    m.validate();
    return m;
  }

  static LexiconMap stopwords(std::initializer_list<std::string> words) {
    LexiconMap m;
    m.kind = LexiconKind::STOPWORD;
    for (const auto& w : words) m.entries[w] = "";
    return m;
  }
};

/// Reads `key<TAB>value` lines (or one token per line for stopwords).
/// Blank lines and lines starting with `#` are skipped.
inline LexiconMap load_lexicon(const std::string& path, LexiconKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + std::string(to_string(kind)) + " lexicon: " + path);
  LexiconMap map;
  map.kind = kind;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path + ":" + std::to_string(line_no);
    if (kind == LexiconKind::STOPWORD) {
      const auto b = line.find_first_not_of(" \t");
      if (b == std::string::npos) continue;
      const auto e = line.find_last_not_of(" \t");
      map.entries[line.substr(b, e - b + 1)] = "";
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(where + ": expected key<TAB>value");
    std::string key = line.substr(0, tab);
    std::string value = line.substr(tab + 1);
    if (const auto tab2 = value.find('\t'); tab2 != std::string::npos) value.resize(tab2);
    if (key.empty() || value.empty()) throw FormatError(where + ": empty key or value");
    if (!map.entries.emplace(std::move(key), std::move(value)).second) {
      throw FormatError(where + ": duplicate key");
    }
  }
  map.validate(path);
  return map;
}

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

namespace detail {

/// Rewrites every maximal run of non-whitespace codepoints through `fn`;
/// whitespace is copied through unchanged.
template <typename Fn>
std::string map_tokens(std::string_view text, Fn&& fn) {
  const std::u32string cps = utf8::decode(text);
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < cps.size()) {
    if (chars::is_space(cps[i])) {
      utf8::append(out, cps[i]);
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < cps.size() && !chars::is_space(cps[j])) ++j;
    const std::string token = utf8::encode(std::u32string_view(cps).substr(i, j - i));
    if (const std::string* repl = fn(token)) {
      out += *repl;
    } else {
      out += token;
    }
    i = j;
  }
  return out;
}

inline std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> tokens;
  const std::u32string cps = utf8::decode(text);
  std::size_t i = 0;
  while (i < cps.size()) {
    while (i < cps.size() && chars::is_space(cps[i])) ++i;
    std::size_t j = i;
    while (j < cps.size() && !chars::is_space(cps[j])) ++j;
    if (j > i) tokens.push_back(utf8::encode(std::u32string_view(cps).substr(i, j - i)));
    i = j;
  }
  return tokens;
}

}  // namespace detail

/// Whitespace tokenization used by every token-level step and by the
/// sequence encoders.
inline std::vector<std::string> tokenize(std::string_view text) { return detail::split_ws(text); }

/// Step 1. Mapped emoji/emoticons become their label set off by single
/// spaces; unmapped emoji codepoints are dropped.
inline std::string convert_emoji(std::string_view text, const LexiconMap& emoji_map) {
  std::vector<std::pair<std::u32string, std::string>> keys;
  std::size_t max_len = 0;
  for (const auto& [k, v] : emoji_map.entries) {
    keys.emplace_back(utf8::decode(k), v);
    max_len = std::max(max_len, keys.back().first.size());
  }
  // Longest key first so that e.g. a heart with a variation selector wins.
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    return a.first.size() != b.first.size() ? a.first.size() > b.first.size() : a.first < b.first;
  });

  const std::u32string cps = utf8::decode(text);
  std::string out;
  out.reserve(text.size() + 16);
  bool pending_gap = false;
  const auto last_is_space = [&] { return out.empty() || out.back() == ' '; };
  std::size_t i = 0;
  while (i < cps.size()) {
    const std::u32string_view rest = std::u32string_view(cps).substr(i);
    const std::pair<std::u32string, std::string>* hit = nullptr;
    if (max_len > 0) {
      for (const auto& kv : keys) {
        if (rest.substr(0, kv.first.size()) == kv.first) {
          hit = &kv;
          break;
        }
      }
    }
    if (hit != nullptr) {
      if (!last_is_space()) out.push_back(' ');
      out += hit->second;
      pending_gap = true;
      i += hit->first.size();
      continue;
    }
    if (chars::is_emoji(cps[i])) {
      pending_gap = true;
      ++i;
      continue;
    }
    if (pending_gap && !chars::is_space(cps[i]) && !last_is_space()) out.push_back(' ');
    pending_gap = false;
    utf8::append(out, cps[i]);
    ++i;
  }
  return out;
}

inline char32_t normalize_letter(char32_t c) {
  switch (c) {
    case 0x0623:  // alif with hamza above
    case 0x0625:  // alif with hamza below
    case 0x0622:  // alif with madda
      return 0x0627;
    case 0x0649:  // alif maqsura
      return 0x064A;
    case 0x0629:  // ta marbuta
      return 0x0647;
    default:
      return c;
  }
}

/// Step 2. Letter-variant folding, then any letter repeated more than twice
/// in a row is cut back to two.
inline std::string normalize_letters(std::string_view text) {
  const std::u32string cps = utf8::decode(text);
  std::u32string out;
  out.reserve(cps.size());
  std::size_t run = 0;
  for (char32_t raw : cps) {
    const char32_t c = normalize_letter(raw);
    if (!out.empty() && out.back() == c && chars::is_letter(c)) {
      if (++run > 2) continue;
    } else {
      run = 1;
    }
    out.push_back(c);
  }
  return utf8::encode(out);
}

/// Steps 3 and 4 share this: whole-token substitution.
inline std::string replace_tokens(std::string_view text, const LexiconMap& map) {
  return detail::map_tokens(text, [&](const std::string& tok) { return map.find(tok); });
}

/// Step 3.
inline std::string normalize_dialect(std::string_view text, const LexiconMap& dialect_map) {
  return replace_tokens(text, dialect_map);
}

/// Step 4.
inline std::string map_hyponyms(std::string_view text, const LexiconMap& hypernym_map) {
  return replace_tokens(text, hypernym_map);
}

/// Step 5.
inline std::string segment_hashtags(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (c == '#') continue;
    out.push_back(c == '_' ? ' ' : c);
  }
  return out;
}

/// Step 6. HTML tags, digits, punctuation and symbols become gaps; tashkeel,
/// tatweel and invisible controls are deleted in place. Stopword tokens are
/// then dropped and whitespace collapsed to single spaces with no padding.
inline std::string clean_misc(std::string_view text, const LexiconMap& stopwords) {
  // `<[^>]*>`, leftmost-first, non-overlapping.
  std::string untagged;
  untagged.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '<') {
      const auto close = text.find('>', i + 1);
      if (close != std::string_view::npos) {
        untagged.push_back(' ');
        i = close + 1;
        continue;
      }
    }
    untagged.push_back(text[i]);
    ++i;
  }

  const std::u32string cps = utf8::decode(untagged);
  std::u32string kept;
  kept.reserve(cps.size());
  for (char32_t c : cps) {
    if (chars::is_letter(c)) {
      kept.push_back(c);
    } else if (chars::is_intraword_mark(c)) {
      continue;
    } else {
      kept.push_back(U' ');
    }
  }

  std::string out;
  for (const auto& tok : detail::split_ws(utf8::encode(kept))) {
    if (stopwords.contains(tok)) continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

enum class Step { EMOJI, LETTERS, DIALECT, HYPERNYM, HASHTAG, CLEAN };

inline std::string_view to_string(Step s) {
  switch (s) {
    case Step::EMOJI: return "EMOJI";
    case Step::LETTERS: return "LETTERS";
    case Step::DIALECT: return "DIALECT";
    case Step::HYPERNYM: return "HYPERNYM";
    case Step::HASHTAG: return "HASHTAG";
    case Step::CLEAN: return "CLEAN";
  }
  return "?";
}

/// Case-insensitive.
inline std::optional<Step> parse_step(std::string_view s) {
  for (Step st : {Step::EMOJI, Step::LETTERS, Step::DIALECT, Step::HYPERNYM, Step::HASHTAG,
                  Step::CLEAN}) {
    const auto name = to_string(st);
    if (s.size() == name.size() &&
        std::equal(s.begin(), s.end(), name.begin(), [](char a, char b) {
          return std::toupper(static_cast<unsigned char>(a)) == b;
        })) {
      return st;
    }
  }
  return std::nullopt;
}

inline std::string default_data_dir() {
  if (const char* env = std::getenv("SALAMNET_DATA_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
#ifdef SALAMNET_DEFAULT_DATA_DIR
  return SALAMNET_DEFAULT_DATA_DIR;
#else
  return "data";
#endif
}

struct PipelineConfig {
  std::vector<Step> steps{Step::EMOJI, Step::LETTERS, Step::DIALECT,
                          Step::HYPERNYM, Step::HASHTAG, Step::CLEAN};
  std::string emoji_path;
  std::string dialect_path;
  std::string hypernym_path;
  std::string stopwords_path;

  /// Lexicon paths pointing at the bundled files under `data_dir/lexicons`.
  static PipelineConfig with_bundled_lexicons(const std::string& data_dir = default_data_dir()) {
    PipelineConfig c;
    c.emoji_path = data_dir + "/lexicons/emoji.tsv";
    c.dialect_path = data_dir + "/lexicons/dialect.tsv";
    c.hypernym_path = data_dir + "/lexicons/hypernyms.tsv";
    c.stopwords_path = data_dir + "/lexicons/stopwords.txt";
    return c;
  }

  bool has(Step s) const { return std::find(steps.begin(), steps.end(), s) != steps.end(); }

  void validate() const {
    std::set<Step> seen;
    for (Step s : steps) {
      if (!seen.insert(s).second) {
        throw ConfigError("pipeline step listed twice: " + std::string(to_string(s)));
      }
    }
  }
};

/// The six normalization steps bound to their lexicons. Constructing it loads
/// and cross-checks every lexicon the enabled steps need, so a bad file is
/// reported before any text is processed.
class Pipeline {
 public:
  struct Lexicons {
    LexiconMap emoji{LexiconKind::EMOJI, {}};
    LexiconMap dialect{LexiconKind::DIALECT, {}};
    LexiconMap hypernym{LexiconKind::HYPERNYM, {}};
    LexiconMap stopwords{LexiconKind::STOPWORD, {}};
  };

  explicit Pipeline(const PipelineConfig& config) : steps_(config.steps) {
    config.validate();
    const auto need = [&](Step s, const std::string& path, const char* what) {
      if (config.has(s) && path.empty()) {
        throw ConfigError(std::string("pipeline step ") + std::string(to_string(s)) +
                          " needs a " + what + " lexicon path");
      }
      return config.has(s);
    };
    Lexicons lex;
    if (need(Step::EMOJI, config.emoji_path, "emoji")) {
      lex.emoji = load_lexicon(config.emoji_path, LexiconKind::EMOJI);
    }
    if (need(Step::DIALECT, config.dialect_path, "dialect")) {
      lex.dialect = load_lexicon(config.dialect_path, LexiconKind::DIALECT);
    }
    if (need(Step::HYPERNYM, config.hypernym_path, "hypernym")) {
      lex.hypernym = load_lexicon(config.hypernym_path, LexiconKind::HYPERNYM);
    }
    if (need(Step::CLEAN, config.stopwords_path, "stopword")) {
      lex.stopwords = load_lexicon(config.stopwords_path, LexiconKind::STOPWORD);
    }
    lex_ = prepare(std::move(lex));
  }

  Pipeline(std::vector<Step> steps, Lexicons lexicons) : steps_(std::move(steps)) {
    PipelineConfig{steps_, {}, {}, {}, {}}.validate();
    lex_ = prepare(std::move(lexicons));
  }

  const std::vector<Step>& steps() const { return steps_; }
  const Lexicons& lexicons() const { return lex_; }

  /// One pass of the enabled steps, in order.
  std::string apply_once(std::string_view text) const {
    std::string s(text);
    for (Step step : steps_) {
      switch (step) {
        case Step::EMOJI: s = convert_emoji(s, lex_.emoji); break;
        case Step::LETTERS: s = normalize_letters(s); break;
        case Step::DIALECT: s = normalize_dialect(s, lex_.dialect); break;
        case Step::HYPERNYM: s = map_hyponyms(s, lex_.hypernym); break;
        case Step::HASHTAG: s = segment_hashtags(s); break;
        case Step::CLEAN: s = clean_misc(s, lex_.stopwords); break;
      }
    }
    return s;
  }

  /// Two passes. Cleaning can expose new tokens (`#يا_كلب` only becomes the
  /// token `كلب` after hashtag segmentation, `كتير!` only after symbol
  /// stripping) and new letter runs; the second pass folds those. With the
  /// lexicon constraints checked in `prepare`, the result is a fixed point.
  std::string run(std::string_view text) const { return apply_once(apply_once(text)); }

  std::string operator()(std::string_view text) const { return run(text); }

 private:
  bool enabled(Step s) const { return std::find(steps_.begin(), steps_.end(), s) != steps_.end(); }

  static bool letters_only(const std::string& s) {
    for (char32_t c : utf8::decode(s)) {
      if (!chars::is_letter(c) && c != U' ') return false;
    }
    return true;
  }

  Lexicons prepare(Lexicons lex) const {
    // Keys and values are brought into the letter-normalized form the text
    // will be in when each step sees it.
    const bool fold = enabled(Step::LETTERS);
    const auto canon = [&](const std::string& s) { return fold ? normalize_letters(s) : s; };
    const auto rekey = [&](LexiconMap& m, bool fold_values) {
      std::map<std::string, std::string> out;
      for (const auto& [k, v] : m.entries) {
        const std::string key = m.kind == LexiconKind::EMOJI ? k : canon(k);
        const std::string val = fold_values ? canon(v) : v;
        if (key.empty()) continue;
        if (m.kind != LexiconKind::EMOJI && tokenize(key).size() != 1) {
          throw ConfigError(std::string(to_string(m.kind)) + " key is not a single token: " + k);
        }
        out[key] = val;
      }
      m.entries = std::move(out);
    };
    rekey(lex.emoji, true);
    rekey(lex.dialect, true);
    rekey(lex.hypernym, true);
    rekey(lex.stopwords, false);
    lex.dialect.validate("dialect lexicon");
    lex.hypernym.validate("hypernym lexicon");

    for (const auto& [k, v] : lex.emoji.entries) {
      if (letters_only(k)) throw ConfigError("emoji key made only of letters: " + k);
      if (!letters_only(v)) throw ConfigError("emoji label must be letters and spaces: " + v);
    }
    for (const auto& [k, v] : lex.dialect.entries) {
      if (!letters_only(v)) throw ConfigError("dialect value must be letters and spaces: " + v);
      for (const auto& tok : tokenize(v)) {
        if (lex.dialect.contains(tok)) {
          throw ConfigError("dialect value '" + v + "' is itself a dialect key");
        }
      }
    }
    for (const auto& [k, v] : lex.hypernym.entries) {
      if (!letters_only(v)) throw ConfigError("hypernym value must be letters and spaces: " + v);
      for (const auto& tok : tokenize(v)) {
        if (lex.hypernym.contains(tok) || lex.dialect.contains(tok)) {
          throw ConfigError("hypernym value '" + v + "' is itself a lexicon key");
        }
      }
    }
    return lex;
  }

  std::vector<Step> steps_;
  Lexicons lex_;
};

inline std::string run_pipeline(std::string_view text, const Pipeline& pipeline) {
  return pipeline.run(text);
}

}  // namespace salamnet
