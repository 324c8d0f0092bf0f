#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "salamnet/analysis.hpp"
#include "test_util.hpp"

using namespace salamnet;

namespace {

Label flip(Label l) { return l == Label::OFF ? Label::NOT : Label::OFF; }

/// Ids "1".."n" with gold OFF on odd ids; `wrong` lists ids the run misses.
PredictionRun run_with(const std::string& run_id, int n, const std::set<int>& wrong) {
  PredictionRun r;
  r.run_id = run_id;
  for (int i = 1; i <= n; ++i) {
    const Label gold = i % 2 == 1 ? Label::OFF : Label::NOT;
    const Label pred = wrong.count(i) ? flip(gold) : gold;
    r.records.push_back({std::to_string(i), gold, pred, pred == Label::OFF ? 0.8 : 0.2});
  }
  return r;
}

std::vector<std::string> ids_of(const ErrorReport& rep) {
  std::vector<std::string> all = rep.off_as_not;
  all.insert(all.end(), rep.not_as_off.begin(), rep.not_as_off.end());
  std::sort(all.begin(), all.end());
  return all;
}

/// Random run over the same ids, each id wrong with probability `p`.
PredictionRun random_run(const std::string& run_id, int n, double p, Rng& rng) {
  std::set<int> wrong;
  for (int i = 1; i <= n; ++i) {
    if (rng.uniform() < p) wrong.insert(i);
  }
  return run_with(run_id, n, wrong);
}

}  // namespace

// ---------------------------------------------------------------------------
// Errors shared by every run
// ---------------------------------------------------------------------------

TEST(MisclassifiedByAll, OnlyIdsWrongEverywhere) {
  const std::vector<PredictionRun> runs{run_with("a", 5, {2, 4}), run_with("b", 5, {2, 4}), run_with("c", 5, {2})};
  const auto rep = misclassified_by_all(runs);
  EXPECT_EQ(rep.not_as_off, std::vector<std::string>{"2"});
  EXPECT_TRUE(rep.off_as_not.empty());
  EXPECT_EQ(rep.run_ids, (std::vector<std::string>{"a", "b", "c"}));
}

TEST(MisclassifiedByAll, SplitsByGoldClass) {
  const auto rep = misclassified_by_all({run_with("a", 6, {1, 2, 3, 6}), run_with("b", 6, {1, 2, 5, 6})});
  EXPECT_EQ(rep.off_as_not, std::vector<std::string>{"1"});
  EXPECT_EQ(rep.not_as_off, (std::vector<std::string>{"2", "6"}));
  EXPECT_EQ(rep.size(), 3u);
}

TEST(MisclassifiedByAll, SingleRunReturnsItsErrors) {
  const auto run = run_with("solo", 8, {1, 4, 7, 8});
  const auto rep = misclassified_by_all({run});
  const auto errs = run.errors();
  EXPECT_EQ(ids_of(rep), std::vector<std::string>(errs.begin(), errs.end()));
}

TEST(MisclassifiedByAll, PerfectRunsGiveEmptyReport) {
  const auto rep = misclassified_by_all({run_with("a", 4, {}), run_with("b", 4, {})});
  EXPECT_TRUE(rep.empty());
}

TEST(MisclassifiedByAll, RejectsNoRuns) { EXPECT_THROW(misclassified_by_all({}), AnalysisError); }

TEST(MisclassifiedByAll, RejectsCoverageMismatch) {
  EXPECT_THROW(misclassified_by_all({run_with("a", 5, {}), run_with("b", 4, {})}), AnalysisError);
  auto renamed = run_with("b", 5, {});
  renamed.records[0].id = "99";
  EXPECT_THROW(misclassified_by_all({run_with("a", 5, {}), renamed}), AnalysisError);
}

TEST(MisclassifiedByAll, RejectsDuplicateIds) {
  auto dup = run_with("a", 3, {});
  dup.records.push_back(dup.records.front());
  EXPECT_THROW(misclassified_by_all({dup}), AnalysisError);
}

TEST(MisclassifiedByAll, RejectsGoldDisagreement) {
  auto other = run_with("b", 4, {});
  other.records[1].gold = flip(other.records[1].gold);
  EXPECT_THROW(misclassified_by_all({run_with("a", 4, {}), other}), AnalysisError);
}

TEST(MisclassifiedByAll, RecordOrderDoesNotMatter) {
  auto shuffled = run_with("b", 10, {3, 5, 8});
  Rng rng(4);
  rng.shuffle(shuffled.records);
  const auto rep = misclassified_by_all({run_with("a", 10, {3, 8, 9}), shuffled});
  EXPECT_EQ(ids_of(rep), (std::vector<std::string>{"3", "8"}));
}

TEST(MisclassifiedByAllProperty, AddingPerfectRunEmpties) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(30));
    std::vector<PredictionRun> runs;
    for (std::size_t k = 1 + rng.below(4); k > 0; --k) runs.push_back(random_run("r" + std::to_string(k), n, 0.5, rng));
    runs.push_back(run_with("perfect", n, {}));
    EXPECT_TRUE(misclassified_by_all(runs).empty());
  }
}

TEST(MisclassifiedByAllProperty, MonotoneUnderAddingRuns) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(40));
    std::vector<PredictionRun> runs{random_run("r0", n, 0.6, rng)};
    auto prev = ids_of(misclassified_by_all(runs));
    for (int k = 1; k < 5; ++k) {
      runs.push_back(random_run("r" + std::to_string(k), n, 0.6, rng));
      const auto cur = ids_of(misclassified_by_all(runs));
      EXPECT_TRUE(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
      prev = cur;
    }
  }
}

TEST(MisclassifiedByAllProperty, MatchesBruteForce) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(25));
    std::vector<PredictionRun> runs;
    for (std::size_t k = 1 + rng.below(5); k > 0; --k) runs.push_back(random_run("r" + std::to_string(k), n, 0.7, rng));
    const auto rep = misclassified_by_all(runs);
    std::vector<std::string> expect_off, expect_not;
    for (int i = 1; i <= n; ++i) {
      bool all_wrong = true;
      for (const auto& r : runs) all_wrong = all_wrong && r.errors().count(std::to_string(i)) == 1;
      if (all_wrong) (i % 2 == 1 ? expect_off : expect_not).push_back(std::to_string(i));
    }
    std::sort(expect_off.begin(), expect_off.end());
    std::sort(expect_not.begin(), expect_not.end());
    EXPECT_EQ(rep.off_as_not, expect_off);
    EXPECT_EQ(rep.not_as_off, expect_not);
  }
}

TEST(AttachTexts, CopiesRawText) {
  const auto corpus = testutil::corpus_of({{"أنت غبي", Label::OFF}, {"صباح الخير", Label::NOT}});
  ErrorReport rep;
  rep.off_as_not = {"t1"};
  attach_texts(rep, corpus);
  EXPECT_EQ(rep.texts.at("t1"), "أنت غبي");
  rep.not_as_off = {"t9"};
  EXPECT_THROW(attach_texts(rep, corpus), AnalysisError);
}

// ---------------------------------------------------------------------------
// Feature-family contrast
// ---------------------------------------------------------------------------

TEST(FamilyContrast, WrongInAllARightInMostB) {
  std::vector<PredictionRun> a, b;
  for (int k = 0; k < 5; ++k) a.push_back(run_with("a" + std::to_string(k), 3, {1}));
  for (int k = 0; k < 5; ++k) b.push_back(run_with("b" + std::to_string(k), 3, k == 0 ? std::set<int>{1} : std::set<int>{}));
  const auto c = feature_family_contrast(a, b);
  EXPECT_EQ(c.a_wrong_b_right, std::vector<std::string>{"1"});
  EXPECT_TRUE(c.b_wrong_a_right.empty());
}

TEST(FamilyContrast, RightEverywhereIsInNeitherSet) {
  const std::vector<PredictionRun> a{run_with("a", 4, {})}, b{run_with("b", 4, {})};
  const auto c = feature_family_contrast(a, b);
  EXPECT_TRUE(c.a_wrong_b_right.empty());
  EXPECT_TRUE(c.b_wrong_a_right.empty());
}

TEST(FamilyContrast, MirrorSet) {
  const std::vector<PredictionRun> a{run_with("a", 4, {})}, b{run_with("b1", 4, {2}), run_with("b2", 4, {2})};
  const auto c = feature_family_contrast(a, b);
  EXPECT_EQ(c.b_wrong_a_right, std::vector<std::string>{"2"});
  EXPECT_TRUE(c.a_wrong_b_right.empty());
}

TEST(FamilyContrast, HalfIsNotMost) {
  const std::vector<PredictionRun> a{run_with("a", 2, {1})};
  const std::vector<PredictionRun> b{run_with("b1", 2, {1}), run_with("b2", 2, {})};
  EXPECT_TRUE(feature_family_contrast(a, b).a_wrong_b_right.empty());
  EXPECT_EQ(feature_family_contrast(a, b, 0.49).a_wrong_b_right, std::vector<std::string>{"1"});
}

TEST(FamilyContrast, ThresholdOneNeedsEveryRun) {
  const std::vector<PredictionRun> a{run_with("a", 2, {1})};
  std::vector<PredictionRun> b;
  for (int k = 0; k < 4; ++k) b.push_back(run_with("b" + std::to_string(k), 2, k == 3 ? std::set<int>{1} : std::set<int>{}));
  EXPECT_TRUE(feature_family_contrast(a, b, 1.0).a_wrong_b_right.empty());
  b.back() = run_with("b3", 2, {});
  EXPECT_EQ(feature_family_contrast(a, b, 1.0).a_wrong_b_right, std::vector<std::string>{"1"});
}

TEST(FamilyContrast, Errors) {
  const std::vector<PredictionRun> a{run_with("a", 3, {})};
  EXPECT_THROW(feature_family_contrast({}, a), AnalysisError);
  EXPECT_THROW(feature_family_contrast(a, {}), AnalysisError);
  EXPECT_THROW(feature_family_contrast(a, a, 1.5), ConfigError);
  EXPECT_THROW(feature_family_contrast(a, a, -0.1), ConfigError);
  EXPECT_THROW(feature_family_contrast(a, {run_with("b", 2, {})}), AnalysisError);
}

TEST(FamilyContrastProperty, SetsAreDisjoint) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(30));
    std::vector<PredictionRun> a, b;
    for (std::size_t k = 1 + rng.below(4); k > 0; --k) a.push_back(random_run("a" + std::to_string(k), n, 0.5, rng));
    for (std::size_t k = 1 + rng.below(4); k > 0; --k) b.push_back(random_run("b" + std::to_string(k), n, 0.5, rng));
    const double threshold = rng.uniform();
    const auto c = feature_family_contrast(a, b, threshold);
    std::vector<std::string> both;
    auto x = c.a_wrong_b_right, y = c.b_wrong_a_right;
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(both));
    EXPECT_TRUE(both.empty());
    // Everything in set A is wrong in every A run.
    const auto common = ids_of(misclassified_by_all(a));
    EXPECT_TRUE(std::includes(common.begin(), common.end(), x.begin(), x.end()));
  }
}

// ---------------------------------------------------------------------------
// Length and repetition profile
// ---------------------------------------------------------------------------

TEST(Profile, MeanAndMedian) {
  const auto p = profile_texts({"واحد اثنان ثلاثة", "واحد اثنان ثلاثة اربعة خمسة"});
  EXPECT_EQ(p.count, 2u);
  EXPECT_DOUBLE_EQ(*p.mean_tokens, 4.0);
  EXPECT_DOUBLE_EQ(*p.median_tokens, 4.0);
  EXPECT_DOUBLE_EQ(*p.repeat_fraction, 0.0);
}

TEST(Profile, OddMedian) {
  const auto p = profile_texts({"a", "a b c d e f g", "a b"});
  EXPECT_DOUBLE_EQ(*p.median_tokens, 2.0);
  EXPECT_DOUBLE_EQ(*p.mean_tokens, 10.0 / 3.0);
}

TEST(Profile, EmptySetHasNoStatistics) {
  const auto p = profile_texts({});
  EXPECT_EQ(p.count, 0u);
  EXPECT_FALSE(p.mean_tokens);
  EXPECT_FALSE(p.median_tokens);
  EXPECT_FALSE(p.repeat_fraction);
  const auto j = to_json(p);
  EXPECT_TRUE(j["mean_tokens"].is_null());
  EXPECT_TRUE(j["median_tokens"].is_null());
  EXPECT_TRUE(j["repeat_fraction"].is_null());
  EXPECT_EQ(j["count"], 0);
}

TEST(Profile, LetterRepeats) {
  EXPECT_TRUE(has_letter_repeat("ههههه"));
  EXPECT_TRUE(has_letter_repeat("ياااا حبيبي"));
  EXPECT_TRUE(has_letter_repeat("coool"));
  EXPECT_FALSE(has_letter_repeat("هه"));
  EXPECT_FALSE(has_letter_repeat("الله"));
  EXPECT_FALSE(has_letter_repeat("!!!!"));
  EXPECT_FALSE(has_letter_repeat("1111"));
  EXPECT_FALSE(has_letter_repeat(""));
  const auto p = profile_texts({"ههههه", "مرحبا", "طيب", "لاااا"});
  EXPECT_DOUBLE_EQ(*p.repeat_fraction, 0.5);
}

TEST(Profile, PerErrorSet) {
  const auto corpus = testutil::corpus_of({{"واحد اثنان", Label::OFF}, {"ههههه", Label::NOT}, {"x y z", Label::NOT}});
  ErrorReport rep;
  rep.off_as_not = {"t1"};
  rep.not_as_off = {"t2", "t3"};
  const auto prof = length_and_repetition_profile(rep, corpus);
  EXPECT_DOUBLE_EQ(*prof.off_as_not.mean_tokens, 2.0);
  EXPECT_DOUBLE_EQ(*prof.not_as_off.mean_tokens, 2.0);
  EXPECT_DOUBLE_EQ(*prof.not_as_off.repeat_fraction, 0.5);
  rep.off_as_not = {"missing"};
  EXPECT_THROW(length_and_repetition_profile(rep, corpus), AnalysisError);
}

// ---------------------------------------------------------------------------
// Reports on disk
// ---------------------------------------------------------------------------

TEST(LoadPredictionRun, ReadsEvaluationReport) {
  const auto dir = testutil::temp_dir("analysis_load");
  ModelSpec spec;
  spec.arch = Arch::GRU;
  spec.feature = FeatureKind::TFIDF;
  EvalResult r;
  r.records = run_with("x", 4, {2}).records;
  {
    std::ofstream out(dir / "run.json");
    out << evaluation_report(spec, r, "gru_tfidf").dump(2);
  }
  const auto run = load_prediction_run((dir / "run.json").string());
  EXPECT_EQ(run.run_id, "gru_tfidf");
  EXPECT_EQ(run.arch, "gru");
  EXPECT_EQ(run.feature, "tfidf");
  EXPECT_EQ(run.records, r.records);
  EXPECT_EQ(run.errors(), std::set<std::string>{"2"});
}

TEST(LoadPredictionRun, Errors) {
  const auto dir = testutil::temp_dir("analysis_load_err");
  EXPECT_THROW(load_prediction_run((dir / "absent.json").string()), ConfigError);
  {
    std::ofstream(dir / "bad.json") << "{ not json";
    std::ofstream(dir / "nopred.json") << R"({"run_id": "x"})";
    std::ofstream(dir / "badlabel.json")
        << R"({"predictions": [{"id": "1", "gold": "MAYBE", "pred": "OFF", "probability": 0.5}]})";
  }
  EXPECT_THROW(load_prediction_run((dir / "bad.json").string()), AnalysisError);
  EXPECT_THROW(load_prediction_run((dir / "nopred.json").string()), AnalysisError);
  EXPECT_THROW(load_prediction_run((dir / "badlabel.json").string()), AnalysisError);
}

TEST(AnalysisReport, Shape) {
  auto rep = misclassified_by_all({run_with("a", 4, {1, 2}), run_with("b", 4, {1, 2, 3})});
  const auto corpus = testutil::corpus_of(
      {{"نص\tاول", Label::OFF}, {"ثاني", Label::NOT}, {"ثالث", Label::OFF}, {"رابع", Label::NOT}});
  Corpus renumbered = corpus;
  for (std::size_t i = 0; i < renumbered.tweets.size(); ++i) renumbered.tweets[i].id = std::to_string(i + 1);
  attach_texts(rep, renumbered);
  const auto prof = length_and_repetition_profile(rep, renumbered);
  const auto j = analysis_report(rep, prof, ContrastSets{{"1"}, {}});
  EXPECT_EQ(j["kind"], "error_analysis");
  EXPECT_EQ(j["runs"], nlohmann::ordered_json({"a", "b"}));
  EXPECT_EQ(j["counts"]["off_as_not"], 1);
  EXPECT_EQ(j["counts"]["not_as_off"], 1);
  EXPECT_EQ(j["off_as_not"][0]["id"], "1");
  EXPECT_EQ(j["off_as_not"][0]["text"], "نص\tاول");
  EXPECT_EQ(j["profile"]["not_as_off"]["count"], 1);
  EXPECT_EQ(j["contrast"]["a_wrong_b_right"], nlohmann::ordered_json({"1"}));

  const auto bare = analysis_report(rep, std::nullopt, std::nullopt);
  EXPECT_FALSE(bare.contains("profile"));
  EXPECT_FALSE(bare.contains("contrast"));

  std::ostringstream tsv;
  write_error_tsv(tsv, rep);
  EXPECT_EQ(tsv.str(), "set\tid\ttext\nOFF_as_NOT\t1\tنص\\tاول\nNOT_as_OFF\t2\tثاني\n");
}
