#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "salamnet/corpus.hpp"
#include "salamnet/error.hpp"
#include "salamnet/features.hpp"
#include "salamnet/metrics.hpp"
#include "salamnet/neural.hpp"
#include "salamnet/parallel.hpp"
#include "salamnet/random.hpp"

namespace salamnet {

enum class Arch { LR, RNN, GRU, BIGRU, LSTM, BILSTM };
enum class FeatureKind { TFIDF, ARAVEC };

/// How TF-IDF reaches a recurrent model: hashed per-token n-gram weights,
/// or the whole document vector as one timestep.
enum class TfidfSequenceMode { HASHED, DOCUMENT };

inline constexpr Arch kDeepArchs[] = {Arch::RNN, Arch::GRU, Arch::BIGRU, Arch::LSTM, Arch::BILSTM};

inline std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::LR: return "lr";
    case Arch::RNN: return "rnn";
    case Arch::GRU: return "gru";
    case Arch::BIGRU: return "bigru";
    case Arch::LSTM: return "lstm";
    case Arch::BILSTM: return "bilstm";
  }
  return "?";
}

namespace detail {

/// ASCII case-insensitive comparison against a lowercase name.
inline bool equals_lower(std::string_view s, std::string_view lower) {
  return s.size() == lower.size() && std::equal(s.begin(), s.end(), lower.begin(), [](char a, char b) {
           return std::tolower(static_cast<unsigned char>(a)) == b;
         });
}

}  // namespace detail

inline std::optional<Arch> parse_arch(std::string_view s) {
  for (Arch a : {Arch::LR, Arch::RNN, Arch::GRU, Arch::BIGRU, Arch::LSTM, Arch::BILSTM}) {
    if (detail::equals_lower(s, to_string(a))) return a;
  }
  return std::nullopt;
}

inline std::string_view to_string(FeatureKind f) { return f == FeatureKind::TFIDF ? "tfidf" : "aravec"; }

inline std::optional<FeatureKind> parse_feature(std::string_view s) {
  if (detail::equals_lower(s, "tfidf")) return FeatureKind::TFIDF;
  if (detail::equals_lower(s, "aravec")) return FeatureKind::ARAVEC;
  return std::nullopt;
}

inline std::string_view to_string(TfidfSequenceMode m) {
  return m == TfidfSequenceMode::HASHED ? "hashed" : "document";
}

inline CellKind cell_kind(Arch a) {
  switch (a) {
    case Arch::RNN: return CellKind::RNN;
    case Arch::GRU:
    case Arch::BIGRU: return CellKind::GRU;
    case Arch::LSTM:
    case Arch::BILSTM: return CellKind::LSTM;
    case Arch::LR: break;
  }
  throw ConfigError("logistic regression has no recurrent cell");
}

inline bool is_bidirectional(Arch a) { return a == Arch::BIGRU || a == Arch::BILSTM; }

struct Hyper {
  int epochs = 50;
  double dropout = 0.5;
  int hidden = 100;
  int layers = 1;
  double lr = 1e-3;
  int batch = 32;
  int max_len = 50;
  std::uint64_t seed = 42;
  std::size_t buckets = 256;
  TfidfSequenceMode tfidf_mode = TfidfSequenceMode::HASHED;
  bool inter_layer_dropout = false;
  // Logistic regression only.
  double l2 = 1e-4;
  int lr_max_epochs = 500;
  int lr_patience = 20;
};

struct ModelSpec {
  Arch arch = Arch::BIGRU;
  FeatureKind feature = FeatureKind::TFIDF;
  Hyper hyper;

  /// Final settings: 50 epochs, dropout 0.5; RNN has two 300-unit layers,
  /// the gated models one 100-unit layer.
  static ModelSpec defaults(Arch arch, FeatureKind feature) {
    ModelSpec s;
    s.arch = arch;
    s.feature = feature;
    if (arch == Arch::RNN) {
      s.hyper.hidden = 300;
      s.hyper.layers = 2;
    }
    // Plain SGD on unit-norm TF-IDF rows needs a large step.
    if (arch == Arch::LR) s.hyper.lr = 20.0;
    return s;
  }

  std::string name() const { return std::string(to_string(arch)) + "-" + std::string(to_string(feature)); }
};

// ---------------------------------------------------------------------------
// Features bound to a model
// ---------------------------------------------------------------------------

/// The fitted feature artifacts a model was trained with.
class Featurizer {
 public:
  Featurizer() = default;

  static Featurizer fit(const ModelSpec& spec, const std::vector<std::string>& train_texts,
                        std::shared_ptr<const EmbeddingTable> embeddings = nullptr) {
    Featurizer f;
    f.spec_ = spec;
    if (spec.feature == FeatureKind::TFIDF) {
      f.tfidf_ = std::make_shared<const TfidfModel>(fit_char_tfidf(train_texts));
    } else {
      if (!embeddings) throw ConfigError("aravec features need an embedding table");
      f.embeddings_ = std::move(embeddings);
    }
    return f;
  }

  static Featurizer from_artifacts(const ModelSpec& spec, std::shared_ptr<const TfidfModel> tfidf,
                                   std::shared_ptr<const EmbeddingTable> embeddings) {
    Featurizer f;
    f.spec_ = spec;
    f.tfidf_ = std::move(tfidf);
    f.embeddings_ = std::move(embeddings);
    f.check();
    return f;
  }

  void check() const {
    if (spec_.feature == FeatureKind::TFIDF && !tfidf_) throw PredictionError("model lacks its TF-IDF vocabulary");
    if (spec_.feature == FeatureKind::ARAVEC && !embeddings_) throw PredictionError("model lacks its embedding table");
  }

  const std::shared_ptr<const TfidfModel>& tfidf() const { return tfidf_; }
  const std::shared_ptr<const EmbeddingTable>& embeddings() const { return embeddings_; }

  /// Width of one timestep (recurrent) or of the flat vector (LR).
  Index input_dim() const {
    check();
    if (spec_.arch == Arch::LR) {
      return static_cast<Index>(spec_.feature == FeatureKind::TFIDF ? tfidf_->dim() : embeddings_->dim);
    }
    if (spec_.feature == FeatureKind::ARAVEC) return static_cast<Index>(embeddings_->dim);
    return static_cast<Index>(spec_.hyper.tfidf_mode == TfidfSequenceMode::HASHED ? spec_.hyper.buckets
                                                                                 : tfidf_->dim());
  }

  SequenceTensor sequence(std::string_view text) const {
    check();
    const auto max_len = static_cast<std::size_t>(spec_.hyper.max_len);
    if (spec_.feature == FeatureKind::ARAVEC) return encode_sequence(text, *embeddings_, max_len);
    if (spec_.hyper.tfidf_mode == TfidfSequenceMode::DOCUMENT) return document_vector_sequence(text, *tfidf_);
    return hash_ngram_sequence(text, *tfidf_, spec_.hyper.buckets, max_len);
  }

  SparseVector sparse(std::string_view text) const {
    check();
    return transform_tfidf(*tfidf_, text);
  }

  VectorXd pooled(std::string_view text) const {
    check();
    return mean_pool(*embeddings_, text);
  }

 private:
  ModelSpec spec_;
  std::shared_ptr<const TfidfModel> tfidf_;
  std::shared_ptr<const EmbeddingTable> embeddings_;
};

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

struct LogisticParams {
  VectorXd w;
  VectorXd b = VectorXd::Zero(1);

  LogisticParams zeros_like() const { return {VectorXd::Zero(w.size()), VectorXd::Zero(1)}; }

  std::vector<TensorView> views() {
    return {{"lr.w", w.data(), w.size(), 1}, {"lr.b", b.data(), 1, 1}};
  }
  std::vector<TensorView> views() const { return const_cast<LogisticParams*>(this)->views(); }
};

namespace detail {

inline Index row_dim(const SparseVector& x) { return static_cast<Index>(x.dim); }
inline Index row_dim(const VectorXd& x) { return x.size(); }

inline double dot(const VectorXd& w, const SparseVector& x) {
  double s = 0.0;
  for (const auto& [i, v] : x.entries) s += w[static_cast<Index>(i)] * v;
  return s;
}
inline double dot(const VectorXd& w, const VectorXd& x) { return w.dot(x); }

inline void axpy(VectorXd& w, double a, const SparseVector& x) {
  for (const auto& [i, v] : x.entries) w[static_cast<Index>(i)] += a * v;
}
inline void axpy(VectorXd& w, double a, const VectorXd& x) { w += a * x; }

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace detail

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_macro_f1 = std::numeric_limits<double>::quiet_NaN();
  double dev_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct LogisticFit {
  LogisticParams params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

template <typename Row>
RowVectorXd logistic_probs(const LogisticParams& p, const std::vector<Row>& X) {
  RowVectorXd out(static_cast<Index>(X.size()));
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (detail::row_dim(X[i]) != p.w.size()) throw PredictionError("feature width does not match the model");
    out[static_cast<Index>(i)] = detail::sigmoid(detail::dot(p.w, X[i]) + p.b[0]);
  }
  return out;
}

inline Label decide(double probability) { return probability >= 0.5 ? Label::OFF : Label::NOT; }

inline std::vector<Label> decide_all(const RowVectorXd& probs) {
  std::vector<Label> out;
  out.reserve(static_cast<std::size_t>(probs.size()));
  for (Index i = 0; i < probs.size(); ++i) out.push_back(decide(probs[i]));
  return out;
}

/// Mini-batch gradient descent on mean BCE + (l2/2)|w|^2. With a dev set the
/// best dev macro-F1 epoch is kept and training stops after `lr_patience`
/// epochs without improvement.
template <typename Row>
LogisticFit train_logistic(const std::vector<Row>& X, const std::vector<Label>& y, const Hyper& hyper,
                           const std::vector<Row>* dev_x = nullptr, const std::vector<Label>* dev_y = nullptr) {
  if (X.empty() || X.size() != y.size()) {
    throw TrainingError("logistic regression needs equally many rows and labels (got " +
                        std::to_string(X.size()) + " and " + std::to_string(y.size()) + ")");
  }
  const Index dim = detail::row_dim(X.front());
  for (const auto& x : X) {
    if (detail::row_dim(x) != dim) throw TrainingError("inconsistent feature dimensions");
  }
  const bool has_dev = dev_x != nullptr && dev_y != nullptr && !dev_x->empty();
  LogisticFit fit;
  fit.params.w = VectorXd::Zero(dim);
  LogisticParams best = fit.params;
  double best_f1 = -1.0;
  int since_best = 0;

  Rng rng(derive_seed(hyper.seed, 0x10C));
  std::vector<std::size_t> order(X.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto bsz = static_cast<std::size_t>(std::max(1, hyper.batch));
  VectorXd grad_w(dim);
  for (int epoch = 1; epoch <= hyper.lr_max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bsz) {
      const std::size_t end = std::min(order.size(), start + bsz);
      const double n = static_cast<double>(end - start);
      grad_w = hyper.l2 * fit.params.w;
      double grad_b = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& x = X[order[k]];
        const double t = as_target(y[order[k]]);
        const double p = detail::sigmoid(detail::dot(fit.params.w, x) + fit.params.b[0]);
        loss_sum += bce_loss(p, t);
        detail::axpy(grad_w, (p - t) / n, x);
        grad_b += (p - t) / n;
      }
      fit.params.w -= hyper.lr * grad_w;
      fit.params.b[0] -= hyper.lr * grad_b;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(X.size()) + 0.5 * hyper.l2 * fit.params.w.squaredNorm();
    if (!std::isfinite(rec.train_loss)) throw NumericError("logistic loss became non-finite", epoch);
    if (has_dev) {
      const auto m = compute_metrics(decide_all(logistic_probs(fit.params, *dev_x)), *dev_y);
      rec.dev_macro_f1 = m.macro_f1;
      rec.dev_accuracy = m.accuracy;
      if (m.macro_f1 > best_f1) {
        best_f1 = m.macro_f1;
        best = fit.params;
        fit.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= hyper.lr_patience) {
        fit.history.push_back(rec);
        break;
      }
    }
    fit.history.push_back(rec);
  }
  if (has_dev) {
    fit.params = best;
  } else {
    fit.best_epoch = static_cast<int>(fit.history.size());
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Recurrent models
// ---------------------------------------------------------------------------

struct EncodedSet {
  std::vector<SequenceTensor> x;
  std::vector<Label> y;
  std::size_t size() const { return x.size(); }
};

struct RecurrentFit {
  ClassifierParams params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

inline ArchitectureSpec architecture_of(const ModelSpec& spec, Index input_dim) {
  ArchitectureSpec a;
  a.kind = cell_kind(spec.arch);
  a.input_dim = input_dim;
  a.hidden = spec.hyper.hidden;
  a.layers = spec.hyper.layers;
  a.bidirectional = is_bidirectional(spec.arch);
  a.dropout = spec.hyper.dropout;
  a.inter_layer_dropout = spec.hyper.inter_layer_dropout;
  return a;
}

/// Inference over many sequences, `chunk` at a time.
inline RowVectorXd predict_probs(const ClassifierParams& p, const std::vector<SequenceTensor>& seqs,
                                 std::size_t chunk = 64) {
  RowVectorXd out(static_cast<Index>(seqs.size()));
  std::vector<const SequenceTensor*> ptrs;
  for (std::size_t start = 0; start < seqs.size(); start += chunk) {
    const std::size_t end = std::min(seqs.size(), start + chunk);
    ptrs.clear();
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&seqs[i]);
    out.segment(static_cast<Index>(start), static_cast<Index>(end - start)) = forward_batch(p, make_batch(ptrs));
  }
  return out;
}

/// Shuffled mini-batches, Adam, dropout on the head input. Returns the
/// parameters of the epoch with the best dev macro-F1 (first such epoch on
/// ties), or of the last epoch without a dev set.
inline RecurrentFit train_recurrent(const ModelSpec& spec, const EncodedSet& train, const EncodedSet* dev = nullptr) {
  if (spec.arch == Arch::LR) throw ConfigError("train_recurrent called with the LR architecture");
  if (train.size() == 0 || train.x.size() != train.y.size()) throw TrainingError("empty or ragged training set");
  const Index input_dim = static_cast<Index>(train.x.front().dim());
  RecurrentFit fit;
  fit.params = init_params(architecture_of(spec, input_dim), spec.hyper.seed);
  if (spec.hyper.epochs <= 0) return fit;

  auto adam = AdamState<ClassifierParams>::for_params(fit.params, spec.hyper.lr);
  Rng shuffle_rng(derive_seed(spec.hyper.seed, 0x5AFF));
  Rng dropout_rng(derive_seed(spec.hyper.seed, 0xD209));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const bool has_dev = dev != nullptr && dev->size() > 0;
  ClassifierParams best = fit.params;
  double best_f1 = -1.0;
  const auto bsz = static_cast<std::size_t>(std::max(1, spec.hyper.batch));
  std::vector<const SequenceTensor*> ptrs;

  for (int epoch = 1; epoch <= spec.hyper.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bsz) {
      const std::size_t end = std::min(order.size(), start + bsz);
      ptrs.clear();
      RowVectorXd targets(static_cast<Index>(end - start));
      for (std::size_t k = start; k < end; ++k) {
        ptrs.push_back(&train.x[order[k]]);
        targets[static_cast<Index>(k - start)] = as_target(train.y[order[k]]);
      }
      const Batch batch = make_batch(ptrs);
      const DropoutMasks masks = sample_dropout(fit.params, batch, dropout_rng);
      double loss = 0.0;
      ClassifierParams grad;
      try {
        std::tie(loss, grad) = loss_and_gradient(fit.params, batch, targets, &masks);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " in epoch " + std::to_string(epoch), epoch);
      }
      loss_sum += loss * static_cast<double>(end - start);
      adam_step(fit.params, grad, adam);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    if (!std::isfinite(rec.train_loss) || !fit.params.all_finite()) {
      throw NumericError("training diverged in epoch " + std::to_string(epoch), epoch);
    }
    if (has_dev) {
      const auto m = compute_metrics(decide_all(predict_probs(fit.params, dev->x)), dev->y);
      rec.dev_macro_f1 = m.macro_f1;
      rec.dev_accuracy = m.accuracy;
      if (m.macro_f1 > best_f1) {
        best_f1 = m.macro_f1;
        best = fit.params;
        fit.best_epoch = epoch;
      }
    }
    fit.history.push_back(rec);
  }
  if (has_dev) {
    fit.params = std::move(best);
  } else {
    fit.best_epoch = spec.hyper.epochs;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Trained models
// ---------------------------------------------------------------------------

struct Prediction {
  double probability = 0.5;
  Label label = Label::OFF;
};

struct TrainedModel {
  ModelSpec spec;
  Featurizer features;
  std::variant<LogisticParams, ClassifierParams> params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;

  bool is_logistic() const { return std::holds_alternative<LogisticParams>(params); }
};

inline EncodedSet encode_all(const Featurizer& f, const std::vector<std::string>& texts,
                             const std::vector<Label>& labels) {
  EncodedSet s;
  s.x.reserve(texts.size());
  for (const auto& t : texts) s.x.push_back(f.sequence(t));
  s.y = labels;
  return s;
}

/// Fits feature artifacts on `train` (already preprocessed) and trains the
/// model `spec` describes; `dev` drives model selection when given.
inline TrainedModel fit_model(const ModelSpec& spec, const Corpus& train, const Corpus* dev = nullptr,
                              std::shared_ptr<const EmbeddingTable> embeddings = nullptr) {
  if (train.empty()) throw TrainingError("empty training corpus");
  TrainedModel model;
  model.spec = spec;
  model.features = Featurizer::fit(spec, train.texts(), std::move(embeddings));
  const bool has_dev = dev != nullptr && !dev->empty();
  if (spec.arch == Arch::LR) {
    Hyper h = spec.hyper;
    if (spec.feature == FeatureKind::TFIDF) {
      std::vector<SparseVector> x, dx;
      for (const auto& t : train.tweets) x.push_back(model.features.sparse(t.text));
      if (has_dev) {
        for (const auto& t : dev->tweets) dx.push_back(model.features.sparse(t.text));
      }
      const auto dy = has_dev ? dev->labels() : std::vector<Label>{};
      auto fit = train_logistic(x, train.labels(), h, has_dev ? &dx : nullptr, has_dev ? &dy : nullptr);
      model.params = std::move(fit.params);
      model.history = std::move(fit.history);
      model.best_epoch = fit.best_epoch;
    } else {
      std::vector<VectorXd> x, dx;
      for (const auto& t : train.tweets) x.push_back(model.features.pooled(t.text));
      if (has_dev) {
        for (const auto& t : dev->tweets) dx.push_back(model.features.pooled(t.text));
      }
      const auto dy = has_dev ? dev->labels() : std::vector<Label>{};
      auto fit = train_logistic(x, train.labels(), h, has_dev ? &dx : nullptr, has_dev ? &dy : nullptr);
      model.params = std::move(fit.params);
      model.history = std::move(fit.history);
      model.best_epoch = fit.best_epoch;
    }
    return model;
  }
  const EncodedSet tr = encode_all(model.features, train.texts(), train.labels());
  EncodedSet dv;
  if (has_dev) dv = encode_all(model.features, dev->texts(), dev->labels());
  auto fit = train_recurrent(spec, tr, has_dev ? &dv : nullptr);
  model.params = std::move(fit.params);
  model.history = std::move(fit.history);
  model.best_epoch = fit.best_epoch;
  return model;
}

/// Probabilities and labels for preprocessed texts, in input order.
/// A probability of exactly 0.5 is labelled OFF.
inline std::vector<Prediction> predict(const TrainedModel& model, const std::vector<std::string>& texts) {
  model.features.check();
  RowVectorXd probs;
  if (const auto* lr = std::get_if<LogisticParams>(&model.params)) {
    if (model.spec.feature == FeatureKind::TFIDF) {
      std::vector<SparseVector> x;
      for (const auto& t : texts) x.push_back(model.features.sparse(t));
      probs = logistic_probs(*lr, x);
    } else {
      std::vector<VectorXd> x;
      for (const auto& t : texts) x.push_back(model.features.pooled(t));
      probs = logistic_probs(*lr, x);
    }
  } else {
    const auto& p = std::get<ClassifierParams>(model.params);
    if (p.input_dim != model.features.input_dim()) {
      throw PredictionError("model input width " + std::to_string(p.input_dim) +
                            " does not match its features (" + std::to_string(model.features.input_dim()) + ")");
    }
    std::vector<SequenceTensor> seqs;
    seqs.reserve(texts.size());
    for (const auto& t : texts) seqs.push_back(model.features.sequence(t));
    probs = predict_probs(p, seqs);
  }
  std::vector<Prediction> out;
  out.reserve(texts.size());
  for (Index i = 0; i < probs.size(); ++i) out.push_back({probs[i], decide(probs[i])});
  return out;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct GridSpec {
  std::vector<double> dropouts{0.25, 0.5, 0.75, 0.99};
  std::vector<int> layers{1, 2};
  std::vector<int> hiddens{50, 100, 200, 300};

  std::size_t size() const { return dropouts.size() * layers.size() * hiddens.size(); }
};

struct GridPoint {
  double dropout = 0.0;
  int layers = 1;
  int hidden = 0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  std::string error;  // non-empty when training this point failed

  bool ok() const { return error.empty(); }
};

struct GridResult {
  ModelSpec best;
  std::vector<GridPoint> table;
};

/// Ordering used to pick the winner: higher dev accuracy, then lower dropout,
/// fewer layers, smaller hidden.
inline bool grid_better(const GridPoint& a, const GridPoint& b) {
  if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
  if (a.dropout != b.dropout) return a.dropout < b.dropout;
  if (a.layers != b.layers) return a.layers < b.layers;
  return a.hidden < b.hidden;
}

inline std::size_t select_grid_point(const std::vector<GridPoint>& table) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!table[i].ok()) continue;
    if (!best || grid_better(table[i], table[*best])) best = i;
  }
  if (!best) throw TrainingError("every grid point failed to train");
  return *best;
}

/// Trains one model per grid point on `train` and scores it on `dev` by
/// accuracy. Features are fitted once on `train` and shared by all points.
inline GridResult grid_search(const ModelSpec& base, const GridSpec& grid, const Corpus& train, const Corpus& dev,
                              std::shared_ptr<const EmbeddingTable> embeddings = nullptr, int jobs = 1) {
  if (base.arch == Arch::LR) throw ConfigError("grid search covers the recurrent architectures only");
  if (grid.size() == 0) throw ConfigError("empty grid");
  if (dev.empty()) throw ConfigError("grid search needs a non-empty dev set");
  const Featurizer feats = Featurizer::fit(base, train.texts(), std::move(embeddings));
  const EncodedSet tr = encode_all(feats, train.texts(), train.labels());
  const EncodedSet dv = encode_all(feats, dev.texts(), dev.labels());

  std::vector<GridPoint> points;
  for (double d : grid.dropouts) {
    for (int l : grid.layers) {
      for (int h : grid.hiddens) points.push_back({d, l, h, std::numeric_limits<double>::quiet_NaN(), {}});
    }
  }
  const auto scored = parallel_map<GridPoint>(points.size(), jobs, [&](std::size_t i) {
    GridPoint pt = points[i];
    ModelSpec spec = base;
    spec.hyper.dropout = pt.dropout;
    spec.hyper.layers = pt.layers;
    spec.hyper.hidden = pt.hidden;
    try {
      const auto fit = train_recurrent(spec, tr, &dv);
      pt.accuracy = compute_metrics(decide_all(predict_probs(fit.params, dv.x)), dv.y).accuracy;
    } catch (const std::exception& e) {
      pt.error = e.what();
    }
    return pt;
  });
  GridResult result;
  result.table = scored;
  const GridPoint& winner = result.table[select_grid_point(result.table)];
  result.best = base;
  result.best.hyper.dropout = winner.dropout;
  result.best.hyper.layers = winner.layers;
  result.best.hyper.hidden = winner.hidden;
  return result;
}

inline void write_grid_tsv(std::ostream& out, const std::vector<GridPoint>& table) {
  out << "dropout\tlayers\thidden\taccuracy\n";
  char buf[32];
  for (const auto& p : table) {
    out << p.dropout << '\t' << p.layers << '\t' << p.hidden << '\t';
    if (p.ok()) {
      std::snprintf(buf, sizeof buf, "%.6f", p.accuracy);
      out << buf;
    } else {
      out << "error";
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline Checkpoint to_checkpoint(const TrainedModel& m) {
  Checkpoint ck;
  const auto& h = m.spec.hyper;
  ck.header = {
      {"arch", std::string(to_string(m.spec.arch))},
      {"feature", std::string(to_string(m.spec.feature))},
      {"input_dim", std::to_string(m.features.input_dim())},
      {"hidden", std::to_string(h.hidden)},
      {"layers", std::to_string(h.layers)},
      {"bidirectional", is_bidirectional(m.spec.arch) ? "1" : "0"},
      {"dropout", format_double(h.dropout)},
      {"inter_layer_dropout", h.inter_layer_dropout ? "1" : "0"},
      {"seed", std::to_string(h.seed)},
      {"epochs", std::to_string(h.epochs)},
      {"lr", format_double(h.lr)},
      {"batch", std::to_string(h.batch)},
      {"max_len", std::to_string(h.max_len)},
      {"buckets", std::to_string(h.buckets)},
      {"tfidf_mode", std::string(to_string(h.tfidf_mode))},
      {"l2", format_double(h.l2)},
      {"lr_max_epochs", std::to_string(h.lr_max_epochs)},
      {"lr_patience", std::to_string(h.lr_patience)},
      {"best_epoch", std::to_string(m.best_epoch)},
  };
  std::visit([&](const auto& p) {
    for (const auto& v : p.views()) ck.tensors.push_back(to_named(v));
  }, m.params);
  return ck;
}

inline ModelSpec spec_from_checkpoint(const Checkpoint& ck) {
  ModelSpec s;
  const auto arch = parse_arch(ck.get("arch"));
  const auto feat = parse_feature(ck.get("feature"));
  if (!arch || !feat) throw FormatError("checkpoint has unknown arch or feature");
  s.arch = *arch;
  s.feature = *feat;
  auto& h = s.hyper;
  h.hidden = std::stoi(ck.get("hidden"));
  h.layers = std::stoi(ck.get("layers"));
  h.dropout = std::strtod(ck.get("dropout").c_str(), nullptr);
  h.inter_layer_dropout = ck.get("inter_layer_dropout") == "1";
  h.seed = std::stoull(ck.get("seed"));
  h.epochs = std::stoi(ck.get("epochs"));
  h.lr = std::strtod(ck.get("lr").c_str(), nullptr);
  h.batch = std::stoi(ck.get("batch"));
  h.max_len = std::stoi(ck.get("max_len"));
  h.buckets = std::stoull(ck.get("buckets"));
  h.tfidf_mode = ck.get("tfidf_mode") == "document" ? TfidfSequenceMode::DOCUMENT : TfidfSequenceMode::HASHED;
  h.l2 = std::strtod(ck.get("l2").c_str(), nullptr);
  h.lr_max_epochs = std::stoi(ck.get("lr_max_epochs"));
  h.lr_patience = std::stoi(ck.get("lr_patience"));
  return s;
}

/// Rebuilds a model from its checkpoint and feature artifacts.
inline TrainedModel from_checkpoint(const Checkpoint& ck, std::shared_ptr<const TfidfModel> tfidf,
                                    std::shared_ptr<const EmbeddingTable> embeddings) {
  TrainedModel m;
  m.spec = spec_from_checkpoint(ck);
  m.best_epoch = std::stoi(ck.get("best_epoch"));
  m.features = Featurizer::from_artifacts(m.spec, std::move(tfidf), std::move(embeddings));
  const Index input_dim = std::stol(ck.get("input_dim"));
  if (input_dim != m.features.input_dim()) {
    throw PredictionError("checkpoint input width " + std::to_string(input_dim) + " does not match its features (" +
                          std::to_string(m.features.input_dim()) + ")");
  }
  if (m.spec.arch == Arch::LR) {
    LogisticParams p{VectorXd::Zero(input_dim), VectorXd::Zero(1)};
    for (const auto& v : p.views()) from_named(ck.tensor(v.name), v);
    m.params = std::move(p);
  } else {
    ClassifierParams p = init_params(architecture_of(m.spec, input_dim), 0);
    for (const auto& v : p.views()) from_named(ck.tensor(v.name), v);
    m.params = std::move(p);
  }
  return m;
}

/// Writes `model.ckpt` (and `tfidf.tsv` for TF-IDF models) into `dir`.
inline void save_model(const std::filesystem::path& dir, const TrainedModel& m) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "model.ckpt", std::ios::binary);
    if (!out) throw ConfigError("cannot write " + (dir / "model.ckpt").string());
    write_checkpoint(out, to_checkpoint(m));
  }
  if (m.features.tfidf()) {
    std::ofstream out(dir / "tfidf.tsv", std::ios::binary);
    write_tfidf(out, *m.features.tfidf());
  }
}

inline TrainedModel load_model(const std::filesystem::path& dir,
                               std::shared_ptr<const EmbeddingTable> embeddings = nullptr) {
  std::ifstream in(dir / "model.ckpt", std::ios::binary);
  if (!in) throw ConfigError("cannot open " + (dir / "model.ckpt").string());
  const Checkpoint ck = read_checkpoint(in, (dir / "model.ckpt").string());
  std::shared_ptr<const TfidfModel> tfidf;
  if (ck.get("feature") == "tfidf") {
    std::ifstream tin(dir / "tfidf.tsv", std::ios::binary);
    if (!tin) throw ConfigError("cannot open " + (dir / "tfidf.tsv").string());
    tfidf = std::make_shared<const TfidfModel>(read_tfidf(tin, (dir / "tfidf.tsv").string()));
  }
  return from_checkpoint(ck, std::move(tfidf), std::move(embeddings));
}

}  // namespace salamnet
