#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "salamnet/corpus.hpp"
#include "salamnet/error.hpp"
#include "salamnet/eval.hpp"
#include "salamnet/preprocess.hpp"
#include "salamnet/utf8.hpp"

namespace salamnet {

struct PredictionRun {
  std::string run_id;
  std::string arch;
  std::string feature;
  std::vector<PredictionRecord> records;

  /// Ids this run got wrong.
  std::set<std::string> errors() const {
    std::set<std::string> out;
    for (const auto& r : records) {
      if (r.pred != r.gold) out.insert(r.id);
    }
    return out;
  }
};

/// Reads a report written by `evaluate` or `cv`.
inline PredictionRun load_prediction_run(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open prediction report " + path);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw AnalysisError(path + ": not valid JSON: " + e.what());
  }
  PredictionRun run;
  run.run_id = j.value("run_id", path);
  if (j.contains("model") && j["model"].is_object()) {
    run.arch = j["model"].value("arch", "");
    run.feature = j["model"].value("feature", "");
  }
  run.records = records_from_json(j, path);
  return run;
}

namespace detail {

/// Checks unique ids per run and identical coverage across runs; returns
/// the gold label of every id.
inline std::map<std::string, Label> check_coverage(const std::vector<const PredictionRun*>& runs) {
  std::map<std::string, Label> gold;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::map<std::string, Label> ids;
    for (const auto& r : runs[i]->records) {
      if (!ids.emplace(r.id, r.gold).second) {
        throw AnalysisError("run '" + runs[i]->run_id + "' lists id " + r.id + " twice");
      }
    }
    if (i == 0) {
      gold = std::move(ids);
      continue;
    }
    if (ids.size() != gold.size() ||
        !std::equal(ids.begin(), ids.end(), gold.begin(), [](const auto& a, const auto& b) { return a.first == b.first; })) {
      throw AnalysisError("run '" + runs[i]->run_id + "' covers a different id set than '" + runs[0]->run_id + "'");
    }
    for (const auto& [id, g] : ids) {
      if (gold.at(id) != g) throw AnalysisError("runs disagree on the gold label of id " + id);
    }
  }
  return gold;
}

inline std::vector<const PredictionRun*> pointers(const std::vector<PredictionRun>& runs) {
  std::vector<const PredictionRun*> out;
  for (const auto& r : runs) out.push_back(&r);
  return out;
}

}  // namespace detail

struct ErrorReport {
  std::vector<std::string> run_ids;
  std::vector<std::string> off_as_not;  // gold OFF, predicted NOT by every run
  std::vector<std::string> not_as_off;  // gold NOT, predicted OFF by every run
  std::map<std::string, std::string> texts;  // raw text per listed id, when a corpus is attached

  std::size_t size() const { return off_as_not.size() + not_as_off.size(); }
  bool empty() const { return size() == 0; }
};

/// Ids every run misclassified, split by gold class, in sorted id order.
inline ErrorReport misclassified_by_all(const std::vector<PredictionRun>& runs) {
  if (runs.empty()) throw AnalysisError("misclassified_by_all needs at least one run");
  const auto gold = detail::check_coverage(detail::pointers(runs));
  std::set<std::string> common = runs.front().errors();
  for (std::size_t i = 1; i < runs.size() && !common.empty(); ++i) {
    const auto e = runs[i].errors();
    std::set<std::string> next;
    std::set_intersection(common.begin(), common.end(), e.begin(), e.end(), std::inserter(next, next.end()));
    common = std::move(next);
  }
  ErrorReport rep;
  for (const auto& r : runs) rep.run_ids.push_back(r.run_id);
  for (const auto& id : common) (gold.at(id) == Label::OFF ? rep.off_as_not : rep.not_as_off).push_back(id);
  return rep;
}

/// Copies raw texts for the listed ids from `corpus`.
inline void attach_texts(ErrorReport& rep, const Corpus& corpus) {
  std::unordered_map<std::string, const Tweet*> by_id;
  for (const auto& t : corpus.tweets) by_id.emplace(t.id, &t);
  for (const auto* ids : {&rep.off_as_not, &rep.not_as_off}) {
    for (const auto& id : *ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw AnalysisError("id " + id + " is not in the corpus");
      rep.texts[id] = it->second->text;
    }
  }
}

struct ContrastSets {
  std::vector<std::string> a_wrong_b_right;  // wrong in all of family A, right in most of B
  std::vector<std::string> b_wrong_a_right;  // the mirror image
};

/// "Most" means a strictly larger fraction than `majority_threshold`, except
/// that a threshold of 1 asks for every run.
inline ContrastSets feature_family_contrast(const std::vector<PredictionRun>& family_a,
                                            const std::vector<PredictionRun>& family_b,
                                            double majority_threshold = 0.5) {
  if (family_a.empty() || family_b.empty()) throw AnalysisError("both run families must be non-empty");
  if (!(majority_threshold >= 0.0 && majority_threshold <= 1.0)) {
    throw ConfigError("majority threshold must lie in [0, 1]");
  }
  auto all = detail::pointers(family_a);
  for (const auto& r : family_b) all.push_back(&r);
  const auto gold = detail::check_coverage(all);

  const auto wrong_counts = [](const std::vector<PredictionRun>& fam) {
    std::map<std::string, std::size_t> c;
    for (const auto& run : fam) {
      for (const auto& r : run.records) c[r.id] += r.pred != r.gold ? 1 : 0;
    }
    return c;
  };
  const auto wa = wrong_counts(family_a);
  const auto wb = wrong_counts(family_b);
  const auto most_right = [&](std::size_t wrong, std::size_t n) {
    const double frac = static_cast<double>(n - wrong) / static_cast<double>(n);
    return majority_threshold >= 1.0 ? wrong == 0 : frac > majority_threshold;
  };
  ContrastSets out;
  for (const auto& [id, unused] : gold) {
    (void)unused;
    const std::size_t a = wa.at(id);
    const std::size_t b = wb.at(id);
    if (a == family_a.size() && most_right(b, family_b.size())) out.a_wrong_b_right.push_back(id);
    if (b == family_b.size() && most_right(a, family_a.size())) out.b_wrong_a_right.push_back(id);
  }
  return out;
}

/// True when some letter occurs more than twice in a row.
inline bool has_letter_repeat(std::string_view text) {
  const auto cps = utf8::decode(text);
  std::size_t run = 0;
  for (std::size_t i = 0; i < cps.size(); ++i) {
    run = (i > 0 && cps[i] == cps[i - 1]) ? run + 1 : 1;
    if (run > 2 && chars::is_letter(cps[i])) return true;
  }
  return false;
}

struct TextProfile {
  std::size_t count = 0;
  // Absent for an empty set.
  std::optional<double> mean_tokens;
  std::optional<double> median_tokens;
  std::optional<double> repeat_fraction;
};

inline TextProfile profile_texts(const std::vector<std::string>& texts) {
  TextProfile p;
  p.count = texts.size();
  if (texts.empty()) return p;
  std::vector<double> lens;
  std::size_t repeats = 0;
  for (const auto& t : texts) {
    lens.push_back(static_cast<double>(tokenize(t).size()));
    repeats += has_letter_repeat(t) ? 1 : 0;
  }
  std::sort(lens.begin(), lens.end());
  double sum = 0.0;
  for (double l : lens) sum += l;
  p.mean_tokens = sum / static_cast<double>(lens.size());
  const std::size_t mid = lens.size() / 2;
  p.median_tokens = lens.size() % 2 == 1 ? lens[mid] : (lens[mid - 1] + lens[mid]) / 2.0;
  p.repeat_fraction = static_cast<double>(repeats) / static_cast<double>(lens.size());
  return p;
}

struct ErrorProfile {
  TextProfile off_as_not;
  TextProfile not_as_off;
};

/// Token counts and letter-repeat rates over the raw texts of each error set.
inline ErrorProfile length_and_repetition_profile(const ErrorReport& rep, const Corpus& corpus) {
  std::unordered_map<std::string, const Tweet*> by_id;
  for (const auto& t : corpus.tweets) by_id.emplace(t.id, &t);
  const auto gather = [&](const std::vector<std::string>& ids) {
    std::vector<std::string> texts;
    for (const auto& id : ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw AnalysisError("id " + id + " is not in the corpus");
      texts.push_back(it->second->text);
    }
    return profile_texts(texts);
  };
  return {gather(rep.off_as_not), gather(rep.not_as_off)};
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const TextProfile& p) {
  const auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  return {{"count", p.count},
          {"mean_tokens", opt(p.mean_tokens)},
          {"median_tokens", opt(p.median_tokens)},
          {"repeat_fraction", opt(p.repeat_fraction)}};
}

inline nlohmann::ordered_json analysis_report(const ErrorReport& rep, const std::optional<ErrorProfile>& profile,
                                              const std::optional<ContrastSets>& contrast) {
  const auto listing = [&](const std::vector<std::string>& ids) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& id : ids) {
      nlohmann::ordered_json e = {{"id", id}};
      if (const auto it = rep.texts.find(id); it != rep.texts.end()) e["text"] = it->second;
      arr.push_back(e);
    }
    return arr;
  };
  nlohmann::ordered_json j = {
      {"kind", "error_analysis"},
      {"runs", rep.run_ids},
      {"counts", {{"off_as_not", rep.off_as_not.size()}, {"not_as_off", rep.not_as_off.size()}}},
      {"off_as_not", listing(rep.off_as_not)},
      {"not_as_off", listing(rep.not_as_off)},
  };
  if (profile) j["profile"] = {{"off_as_not", to_json(profile->off_as_not)}, {"not_as_off", to_json(profile->not_as_off)}};
  if (contrast) {
    j["contrast"] = {{"a_wrong_b_right", contrast->a_wrong_b_right}, {"b_wrong_a_right", contrast->b_wrong_a_right}};
  }
  return j;
}

/// One line per listed tweet: `set<TAB>id<TAB>escaped raw text`.
inline void write_error_tsv(std::ostream& out, const ErrorReport& rep) {
  out << "set\tid\ttext\n";
  const auto emit = [&](const char* set, const std::vector<std::string>& ids) {
    for (const auto& id : ids) {
      const auto it = rep.texts.find(id);
      out << set << '\t' << escape_field(id) << '\t' << (it == rep.texts.end() ? "" : escape_field(it->second))
          << '\n';
    }
  };
  emit("OFF_as_NOT", rep.off_as_not);
  emit("NOT_as_OFF", rep.not_as_off);
}

}  // namespace salamnet
