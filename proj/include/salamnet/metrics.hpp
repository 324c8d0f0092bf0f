#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "salamnet/corpus.hpp"
#include "salamnet/error.hpp"

namespace salamnet {

/// counts[gold][pred], indexed by Label (NOT = 0, OFF = 1).
struct ConfusionMatrix {
  std::array<std::array<std::size_t, 2>, 2> counts{};

  std::size_t& at(Label gold, Label pred) {
    return counts[static_cast<std::size_t>(gold)][static_cast<std::size_t>(pred)];
  }
  std::size_t at(Label gold, Label pred) const {
    return counts[static_cast<std::size_t>(gold)][static_cast<std::size_t>(pred)];
  }
  std::size_t total() const {
    return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
  }
  std::size_t support(Label gold) const {
    const auto g = static_cast<std::size_t>(gold);
    return counts[g][0] + counts[g][1];
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const Label> preds, std::span<const Label> golds) {
  if (preds.size() != golds.size()) {
    throw EvaluationError("prediction count " + std::to_string(preds.size()) +
                          " differs from gold count " + std::to_string(golds.size()));
  }
  if (preds.empty()) throw EvaluationError("cannot evaluate an empty prediction set");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) ++cm.at(golds[i], preds[i]);
  return cm;
}

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// Precision and recall are macro-averaged over the two classes.
struct Metrics {
  ClassScores off;
  ClassScores not_off;
  double precision = 0.0;
  double recall = 0.0;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
};

namespace detail {
inline double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

/// 0/0 is taken as 0 for every precision, recall and F1.
inline Metrics compute_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw EvaluationError("empty confusion matrix");
  const auto scores = [&](Label c) {
    const Label other = c == Label::OFF ? Label::NOT : Label::OFF;
    const std::size_t tp = cm.at(c, c);
    const std::size_t fp = cm.at(other, c);
    const std::size_t fn = cm.at(c, other);
    ClassScores s;
    s.precision = detail::ratio(tp, tp + fp);
    s.recall = detail::ratio(tp, tp + fn);
    s.f1 = detail::ratio(2 * tp, 2 * tp + fp + fn);
    s.support = tp + fn;
    return s;
  };
  Metrics m;
  m.off = scores(Label::OFF);
  m.not_off = scores(Label::NOT);
  m.precision = (m.off.precision + m.not_off.precision) / 2.0;
  m.recall = (m.off.recall + m.not_off.recall) / 2.0;
  m.macro_f1 = (m.off.f1 + m.not_off.f1) / 2.0;
  const double n = static_cast<double>(cm.total());
  m.weighted_f1 = (m.off.f1 * static_cast<double>(m.off.support) +
                   m.not_off.f1 * static_cast<double>(m.not_off.support)) / n;
  m.accuracy = static_cast<double>(cm.at(Label::OFF, Label::OFF) + cm.at(Label::NOT, Label::NOT)) / n;
  return m;
}

inline Metrics compute_metrics(std::span<const Label> preds, std::span<const Label> golds) {
  return compute_metrics(confusion(preds, golds));
}

}  // namespace salamnet
