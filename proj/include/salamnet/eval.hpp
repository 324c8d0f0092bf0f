#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "salamnet/corpus.hpp"
#include "salamnet/error.hpp"
#include "salamnet/metrics.hpp"
#include "salamnet/models.hpp"
#include "salamnet/parallel.hpp"
#include "salamnet/preprocess.hpp"

namespace salamnet {

struct PredictionRecord {
  std::string id;
  Label gold = Label::NOT;
  Label pred = Label::NOT;
  double probability = 0.0;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

struct EvalResult {
  Metrics metrics;
  std::vector<PredictionRecord> records;
};

/// Replaces every tweet text with its normalized form.
inline Corpus preprocess_corpus(const Corpus& corpus, const Pipeline& pipeline) {
  Corpus out = corpus;
  for (auto& t : out.tweets) t.text = pipeline(t.text);
  return out;
}

/// Scores `model` on `test`. With a pipeline the raw texts are normalized
/// first; pass nullptr when `test` is already preprocessed.
inline EvalResult evaluate_split(const TrainedModel& model, const Corpus& test, const Pipeline* pipeline = nullptr) {
  if (test.empty()) throw EvaluationError("empty evaluation corpus");
  std::vector<std::string> texts;
  texts.reserve(test.size());
  for (const auto& t : test.tweets) texts.push_back(pipeline != nullptr ? (*pipeline)(t.text) : t.text);
  const auto preds = predict(model, texts);
  EvalResult r;
  std::vector<Label> labels;
  labels.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    labels.push_back(preds[i].label);
    r.records.push_back({test.tweets[i].id, test.tweets[i].label, preds[i].label, preds[i].probability});
  }
  r.metrics = compute_metrics(labels, test.labels());
  return r;
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct FoldResult {
  int fold = 0;
  std::size_t train_size = 0;
  std::size_t dev_size = 0;
  std::size_t test_size = 0;
  int best_epoch = 0;
  Metrics metrics;
  std::vector<PredictionRecord> records;
  std::shared_ptr<const TfidfModel> tfidf;  // features fitted for this fold, if TF-IDF
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over folds
};

struct CVReport {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<FoldResult> folds;
  MetricSummary precision, recall, macro_f1, weighted_f1, accuracy;

  /// Fold predictions merged back into one list, in corpus order.
  std::vector<PredictionRecord> all_records(const Corpus& corpus) const {
    std::unordered_map<std::string, const PredictionRecord*> by_id;
    for (const auto& f : folds) {
      for (const auto& r : f.records) by_id.emplace(r.id, &r);
    }
    std::vector<PredictionRecord> out;
    out.reserve(corpus.size());
    for (const auto& t : corpus.tweets) {
      if (const auto it = by_id.find(t.id); it != by_id.end()) out.push_back(*it->second);
    }
    return out;
  }
};

struct CVOptions {
  int k = 10;
  std::uint64_t seed = 42;
  /// Share of the k-1 training folds held back for epoch selection.
  double dev_fraction = 0.1;
  int jobs = 1;
};

/// Splits the k-1 training folds of `fold` into the part the model is fitted
/// on and a seeded dev carve used only for model selection. A carve missing
/// either class is returned to training and the dev set is empty.
inline std::pair<Corpus, Corpus> fold_training_sets(const Corpus& corpus, const FoldPlan& plan, int fold,
                                                    double dev_fraction, std::uint64_t seed) {
  std::vector<std::size_t> in = plan.partition(fold).train;
  std::vector<std::size_t> dev_pos;
  if (dev_fraction > 0.0) {
    Rng rng(derive_seed(seed, 0xDE70 + static_cast<std::uint64_t>(fold)));
    rng.shuffle(in);
    const auto n_dev = static_cast<std::size_t>(std::floor(static_cast<double>(in.size()) * dev_fraction));
    dev_pos.assign(in.end() - static_cast<std::ptrdiff_t>(n_dev), in.end());
    // Macro-F1 on a one-class dev set cannot rank epochs; train on it instead.
    bool has_off = false, has_not = false;
    for (auto i : dev_pos) (corpus.tweets[i].label == Label::OFF ? has_off : has_not) = true;
    if (has_off && has_not) {
      in.resize(in.size() - n_dev);
      std::sort(dev_pos.begin(), dev_pos.end());
    } else {
      dev_pos.clear();
    }
  }
  std::sort(in.begin(), in.end());
  return {subset(corpus, in, SplitTag::TRAIN), subset(corpus, dev_pos, SplitTag::DEV)};
}

inline MetricSummary summarize(const std::vector<double>& xs) {
  MetricSummary s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

/// k-fold CV over an already preprocessed corpus. Features are fitted on
/// each fold's training part only. A fold whose test part holds one class
/// is scored with the 0/0 = 0 convention rather than aborting.
inline CVReport cross_validate(const ModelSpec& spec, const Corpus& corpus, const CVOptions& opt,
                               std::shared_ptr<const EmbeddingTable> embeddings = nullptr) {
  const auto counts = corpus.counts();
  if (counts.off == 0 || counts.not_off == 0) throw ConfigError("cross-validation needs both classes");
  if (!(opt.dev_fraction >= 0.0 && opt.dev_fraction < 1.0)) throw ConfigError("dev fraction must lie in [0, 1)");
  const FoldPlan plan = make_folds(corpus, opt.k, opt.seed);
  CVReport report;
  report.k = opt.k;
  report.seed = opt.seed;
  report.folds = parallel_map<FoldResult>(static_cast<std::size_t>(opt.k), opt.jobs, [&](std::size_t i) {
    const int fold = static_cast<int>(i);
    auto [train, dev] = fold_training_sets(corpus, plan, fold, opt.dev_fraction, opt.seed);
    const Corpus test = subset(corpus, plan.partition(fold).test, SplitTag::TEST);
    const TrainedModel model = fit_model(spec, train, dev.empty() ? nullptr : &dev, embeddings);
    const EvalResult ev = evaluate_split(model, test);
    FoldResult fr;
    fr.fold = fold;
    fr.train_size = train.size();
    fr.dev_size = dev.size();
    fr.test_size = test.size();
    fr.best_epoch = model.best_epoch;
    fr.metrics = ev.metrics;
    fr.records = ev.records;
    fr.tfidf = model.features.tfidf();
    return fr;
  });
  std::vector<double> p, r, mf, wf, acc;
  for (const auto& f : report.folds) {
    p.push_back(f.metrics.precision);
    r.push_back(f.metrics.recall);
    mf.push_back(f.metrics.macro_f1);
    wf.push_back(f.metrics.weighted_f1);
    acc.push_back(f.metrics.accuracy);
  }
  report.precision = summarize(p);
  report.recall = summarize(r);
  report.macro_f1 = summarize(mf);
  report.weighted_f1 = summarize(wf);
  report.accuracy = summarize(acc);
  return report;
}

// ---------------------------------------------------------------------------
// JSON reports
// ---------------------------------------------------------------------------

using nlohmann::ordered_json;

inline ordered_json to_json(const ClassScores& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
}

inline ordered_json to_json(const Metrics& m) {
  return {
      {"averaging", "macro"},
      {"precision", m.precision},
      {"recall", m.recall},
      {"macro_f1", m.macro_f1},
      {"weighted_f1", m.weighted_f1},
      {"accuracy", m.accuracy},
      {"per_class", {{"OFF", to_json(m.off)}, {"NOT", to_json(m.not_off)}}},
  };
}

inline ordered_json to_json(const std::vector<PredictionRecord>& records) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : records) {
    arr.push_back({{"id", r.id},
                   {"gold", std::string(to_string(r.gold))},
                   {"pred", std::string(to_string(r.pred))},
                   {"probability", r.probability}});
  }
  return arr;
}

inline ordered_json to_json(const MetricSummary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

inline ordered_json model_json(const ModelSpec& spec) {
  const auto& h = spec.hyper;
  ordered_json j = {{"arch", std::string(to_string(spec.arch))}, {"feature", std::string(to_string(spec.feature))}};
  if (spec.arch != Arch::LR) {
    j["epochs"] = h.epochs;
    j["dropout"] = h.dropout;
    j["hidden"] = h.hidden;
    j["layers"] = h.layers;
    j["batch"] = h.batch;
    j["max_len"] = h.max_len;
    if (spec.feature == FeatureKind::TFIDF) {
      j["tfidf_mode"] = std::string(to_string(h.tfidf_mode));
      j["buckets"] = h.buckets;
    }
  } else {
    j["l2"] = h.l2;
    j["max_epochs"] = h.lr_max_epochs;
  }
  j["learning_rate"] = h.lr;
  j["seed"] = h.seed;
  return j;
}

/// Report for a single held-out evaluation.
inline ordered_json evaluation_report(const ModelSpec& spec, const EvalResult& r, const std::string& run_id) {
  return {{"kind", "evaluation"},
          {"run_id", run_id},
          {"model", model_json(spec)},
          {"metrics", to_json(r.metrics)},
          {"folds", ordered_json::array()},
          {"predictions", to_json(r.records)}};
}

/// CV report: `metrics` holds fold means, `metrics_std` fold standard
/// deviations; `predictions` are the merged out-of-fold predictions.
inline ordered_json cv_report(const ModelSpec& spec, const CVReport& cv, const Corpus& corpus,
                              const std::string& run_id) {
  ordered_json folds = ordered_json::array();
  for (const auto& f : cv.folds) {
    folds.push_back({{"fold", f.fold},
                     {"train_size", f.train_size},
                     {"dev_size", f.dev_size},
                     {"test_size", f.test_size},
                     {"best_epoch", f.best_epoch},
                     {"metrics", to_json(f.metrics)}});
  }
  return {{"kind", "cross_validation"},
          {"run_id", run_id},
          {"model", model_json(spec)},
          {"k", cv.k},
          {"fold_seed", cv.seed},
          {"metrics",
           {{"averaging", "macro"},
            {"precision", cv.precision.mean},
            {"recall", cv.recall.mean},
            {"macro_f1", cv.macro_f1.mean},
            {"weighted_f1", cv.weighted_f1.mean},
            {"accuracy", cv.accuracy.mean}}},
          {"metrics_std",
           {{"precision", cv.precision.std},
            {"recall", cv.recall.std},
            {"macro_f1", cv.macro_f1.std},
            {"weighted_f1", cv.weighted_f1.std},
            {"accuracy", cv.accuracy.std}}},
          {"folds", folds},
          {"predictions", to_json(cv.all_records(corpus))}};
}

inline std::vector<PredictionRecord> records_from_json(const ordered_json& report, const std::string& source) {
  if (!report.contains("predictions") || !report["predictions"].is_array()) {
    throw AnalysisError(source + ": report has no predictions array");
  }
  std::vector<PredictionRecord> out;
  for (const auto& p : report["predictions"]) {
    PredictionRecord r;
    try {
      r.id = p.at("id").get<std::string>();
      r.probability = p.at("probability").get<double>();
      if (!parse_label(p.at("gold").get<std::string>(), r.gold) ||
          !parse_label(p.at("pred").get<std::string>(), r.pred)) {
        throw AnalysisError(source + ": bad label in prediction for id " + r.id);
      }
    } catch (const nlohmann::json::exception& e) {
      throw AnalysisError(source + ": malformed prediction record: " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace salamnet
