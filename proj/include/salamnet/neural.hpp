#pragma once

#include <cmath>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "salamnet/error.hpp"
#include "salamnet/features.hpp"
#include "salamnet/random.hpp"

namespace salamnet {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

enum class CellKind { RNN, GRU, LSTM };

inline std::string_view to_string(CellKind k) {
  switch (k) {
    case CellKind::RNN: return "rnn";
    case CellKind::GRU: return "gru";
    case CellKind::LSTM: return "lstm";
  }
  return "?";
}

inline std::optional<CellKind> parse_cell_kind(std::string_view s) {
  if (s == "rnn") return CellKind::RNN;
  if (s == "gru") return CellKind::GRU;
  if (s == "lstm") return CellKind::LSTM;
  return std::nullopt;
}

/// Number of gate blocks stacked in W, U and b.
constexpr int gate_count(CellKind k) {
  return k == CellKind::RNN ? 1 : k == CellKind::GRU ? 3 : 4;
}

/// One recurrent cell. Gate blocks are stacked row-wise:
///   RNN  [a]            h' = tanh(a)
///   GRU  [z, r, n]      n uses U_n (r * h)
///   LSTM [i, f, g, o]
struct CellParams {
  CellKind kind = CellKind::GRU;
  MatrixXd W;  // (gates*hidden) x input
  MatrixXd U;  // (gates*hidden) x hidden
  VectorXd b;  // gates*hidden

  Index input_dim() const { return W.cols(); }
  Index hidden_dim() const { return U.cols(); }

  static CellParams zeros(CellKind kind, Index input, Index hidden) {
    const Index g = gate_count(kind) * hidden;
    return {kind, MatrixXd::Zero(g, input), MatrixXd::Zero(g, hidden), VectorXd::Zero(g)};
  }

  /// Rows of gate `gate` in the stacked tensors.
  Index gate_row(int gate) const { return gate * hidden_dim(); }
};

/// A named, flat view of one parameter tensor.
struct TensorView {
  std::string name;
  double* data;
  Index rows;
  Index cols;
  Index size() const { return rows * cols; }
};

/// Recurrent classifier: `layers` stacked recurrent layers, optionally
/// bidirectional, whose final states feed a sigmoid unit.
struct ClassifierParams {
  CellKind kind = CellKind::GRU;
  Index input_dim = 0;
  Index hidden = 0;
  int layers = 1;
  bool bidirectional = false;
  double dropout = 0.0;
  bool inter_layer_dropout = false;
  std::vector<CellParams> cells;  // index layer * directions() + direction
  VectorXd head_w;
  VectorXd head_b;  // size 1

  int directions() const { return bidirectional ? 2 : 1; }
  Index head_width() const { return hidden * directions(); }
  Index layer_input_dim(int layer) const { return layer == 0 ? input_dim : head_width(); }

  CellParams& cell(int layer, int dir) { return cells[static_cast<std::size_t>(layer * directions() + dir)]; }
  const CellParams& cell(int layer, int dir) const {
    return cells[static_cast<std::size_t>(layer * directions() + dir)];
  }

  /// Same architecture, all tensors zero. Used for gradients and moments.
  ClassifierParams zeros_like() const {
    ClassifierParams z = *this;
    for (auto& c : z.cells) {
      c.W.setZero();
      c.U.setZero();
      c.b.setZero();
    }
    z.head_w.setZero();
    z.head_b.setZero();
    return z;
  }

  std::vector<TensorView> views() {
    std::vector<TensorView> out;
    for (int l = 0; l < layers; ++l) {
      for (int d = 0; d < directions(); ++d) {
        auto& c = cell(l, d);
        const std::string p = "layer" + std::to_string(l) + (d == 0 ? ".fwd." : ".bwd.");
        out.push_back({p + "W", c.W.data(), c.W.rows(), c.W.cols()});
        out.push_back({p + "U", c.U.data(), c.U.rows(), c.U.cols()});
        out.push_back({p + "b", c.b.data(), c.b.rows(), 1});
      }
    }
    out.push_back({"head.w", head_w.data(), head_w.rows(), 1});
    out.push_back({"head.b", head_b.data(), 1, 1});
    return out;
  }

  std::vector<TensorView> views() const { return const_cast<ClassifierParams*>(this)->views(); }

  bool all_finite() const {
    for (const auto& v : views()) {
      for (Index i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v.data[i])) return false;
      }
    }
    return true;
  }

  void check_shapes() const {
    if (layers < 1 || layers > 2) throw DimensionError("layer count must be 1 or 2");
    if (cells.size() != static_cast<std::size_t>(layers * directions())) {
      throw DimensionError("cell count does not match layers x directions");
    }
    for (int l = 0; l < layers; ++l) {
      for (int d = 0; d < directions(); ++d) {
        const auto& c = cell(l, d);
        const Index g = gate_count(kind) * hidden;
        if (c.kind != kind || c.W.rows() != g || c.W.cols() != layer_input_dim(l) ||
            c.U.rows() != g || c.U.cols() != hidden || c.b.size() != g) {
          throw DimensionError("cell tensor shapes inconsistent at layer " + std::to_string(l));
        }
      }
    }
    if (head_w.size() != head_width() || head_b.size() != 1) {
      throw DimensionError("head width does not match final state width");
    }
  }
};

struct ArchitectureSpec {
  CellKind kind = CellKind::GRU;
  Index input_dim = 0;
  Index hidden = 100;
  int layers = 1;
  bool bidirectional = false;
  double dropout = 0.5;
  bool inter_layer_dropout = false;
};

/// Glorot-uniform matrices (per gate block), zero biases, LSTM forget bias 1.
inline ClassifierParams init_params(const ArchitectureSpec& a, std::uint64_t seed) {
  if (a.layers < 1 || a.layers > 2) throw ConfigError("layers must be 1 or 2");
  if (a.hidden < 1 || a.input_dim < 1) throw ConfigError("hidden and input widths must be positive");
  if (!(a.dropout >= 0.0 && a.dropout < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
  ClassifierParams p;
  p.kind = a.kind;
  p.input_dim = a.input_dim;
  p.hidden = a.hidden;
  p.layers = a.layers;
  p.bidirectional = a.bidirectional;
  p.dropout = a.dropout;
  p.inter_layer_dropout = a.inter_layer_dropout;
  Rng rng(derive_seed(seed, 0x1A17));
  const auto glorot = [&](auto block) {
    const double bound = std::sqrt(6.0 / static_cast<double>(block.rows() + block.cols()));
    for (Index j = 0; j < block.cols(); ++j) {
      for (Index i = 0; i < block.rows(); ++i) block(i, j) = rng.uniform(-bound, bound);
    }
  };
  const int g = gate_count(a.kind);
  for (int l = 0; l < a.layers; ++l) {
    for (int d = 0; d < p.directions(); ++d) {
      CellParams c = CellParams::zeros(a.kind, p.layer_input_dim(l), a.hidden);
      for (int k = 0; k < g; ++k) {
        glorot(c.W.middleRows(k * a.hidden, a.hidden));
        glorot(c.U.middleRows(k * a.hidden, a.hidden));
      }
      if (a.kind == CellKind::LSTM) c.b.segment(a.hidden, a.hidden).setOnes();
      p.cells.push_back(std::move(c));
    }
  }
  p.head_w = VectorXd::Zero(p.head_width());
  glorot(Eigen::Map<MatrixXd>(p.head_w.data(), 1, p.head_width()));
  p.head_b = VectorXd::Zero(1);
  return p;
}

// ---------------------------------------------------------------------------
// Single-step cell functions (one column = one example).
// ---------------------------------------------------------------------------

namespace detail {

inline void check_step_shapes(const CellParams& p, CellKind expected, Index x_rows, Index h_rows) {
  if (p.kind != expected) throw DimensionError("cell kind mismatch");
  if (x_rows != p.input_dim() || h_rows != p.hidden_dim()) {
    throw DimensionError("step input/state width does not match cell parameters");
  }
}

}  // namespace detail

inline VectorXd rnn_step(const CellParams& p, const VectorXd& x, const VectorXd& h) {
  detail::check_step_shapes(p, CellKind::RNN, x.size(), h.size());
  return (p.W * x + p.U * h + p.b).array().tanh().matrix();
}

inline VectorXd gru_step(const CellParams& p, const VectorXd& x, const VectorXd& h) {
  detail::check_step_shapes(p, CellKind::GRU, x.size(), h.size());
  const Index H = p.hidden_dim();
  const VectorXd zr = (p.W.topRows(2 * H) * x + p.U.topRows(2 * H) * h + p.b.head(2 * H))
                          .array()
                          .logistic()
                          .matrix();
  const auto z = zr.head(H).array();
  const auto r = zr.tail(H).array();
  const VectorXd rh = (r * h.array()).matrix();
  const VectorXd n =
      (p.W.bottomRows(H) * x + p.U.bottomRows(H) * rh + p.b.tail(H)).array().tanh().matrix();
  return ((1.0 - z) * h.array() + z * n.array()).matrix();
}

inline std::pair<VectorXd, VectorXd> lstm_step(const CellParams& p, const VectorXd& x,
                                               const VectorXd& h, const VectorXd& c) {
  detail::check_step_shapes(p, CellKind::LSTM, x.size(), h.size());
  if (c.size() != h.size()) throw DimensionError("LSTM cell state width mismatch");
  const Index H = p.hidden_dim();
  const VectorXd a = p.W * x + p.U * h + p.b;
  const auto i = a.segment(0, H).array().logistic();
  const auto f = a.segment(H, H).array().logistic();
  const auto g = a.segment(2 * H, H).array().tanh();
  const auto o = a.segment(3 * H, H).array().logistic();
  VectorXd c_next = (f * c.array() + i * g).matrix();
  VectorXd h_next = (o * c_next.array().tanh()).matrix();
  return {std::move(h_next), std::move(c_next)};
}

// ---------------------------------------------------------------------------
// Batched execution with a tape for backpropagation through time.
// ---------------------------------------------------------------------------

/// Time-major batch: column t*B + b of `x` is timestep t of example b;
/// `mask` has the same column layout (1 = real token, 0 = padding).
struct Batch {
  Index steps = 0;
  Index size = 0;
  MatrixXd x;       // input_dim x (steps*size)
  RowVectorXd mask;  // 1 x (steps*size)

  auto step_x(Index t) const { return x.middleCols(t * size, size); }
  auto step_mask(Index t) const { return mask.segment(t * size, size); }
};

inline Batch make_batch(std::span<const SequenceTensor* const> seqs) {
  if (seqs.empty()) throw DimensionError("empty batch");
  Batch b;
  b.size = static_cast<Index>(seqs.size());
  const Index dim = static_cast<Index>(seqs.front()->dim());
  for (const auto* s : seqs) {
    if (static_cast<Index>(s->dim()) != dim) throw DimensionError("sequence widths differ within a batch");
    b.steps = std::max<Index>(b.steps, static_cast<Index>(s->length()));
  }
  b.x = MatrixXd::Zero(dim, b.steps * b.size);
  b.mask = RowVectorXd::Zero(b.steps * b.size);
  for (Index e = 0; e < b.size; ++e) {
    const auto& s = *seqs[static_cast<std::size_t>(e)];
    for (Index t = 0; t < static_cast<Index>(s.length()); ++t) {
      b.x.col(t * b.size + e) = s.vectors.col(t);
      b.mask[t * b.size + e] = s.mask[static_cast<std::size_t>(t)] ? 1.0 : 0.0;
    }
  }
  return b;
}

inline Batch make_batch(const SequenceTensor& seq) {
  const SequenceTensor* p = &seq;
  return make_batch(std::span<const SequenceTensor* const>(&p, 1));
}

/// Dropout masks for one training batch. Empty matrices mean "no dropout".
struct DropoutMasks {
  MatrixXd head;                // head_width x B
  std::vector<MatrixXd> inter;  // per layer >= 1: layer input width x (T*B)
};

/// Inverted dropout: 0 with probability `rate`, else 1 / (1 - rate).
inline VectorXd dropout_mask(Index width, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
  VectorXd m(width);
  const double keep = 1.0 / (1.0 - rate);
  for (Index i = 0; i < width; ++i) m[i] = rng.uniform() < rate ? 0.0 : keep;
  return m;
}

inline DropoutMasks sample_dropout(const ClassifierParams& p, const Batch& batch, Rng& rng) {
  DropoutMasks m;
  if (p.dropout <= 0.0) return m;
  m.head = dropout_mask(p.head_width() * batch.size, p.dropout, rng).reshaped(p.head_width(), batch.size);
  if (p.inter_layer_dropout) {
    for (int l = 1; l < p.layers; ++l) {
      const Index w = p.layer_input_dim(l);
      m.inter.push_back(dropout_mask(w * batch.steps * batch.size, p.dropout, rng)
                            .reshaped(w, batch.steps * batch.size));
    }
  }
  return m;
}

struct DirectionTape {
  MatrixXd acts;   // activated gates, (gates*H) x (T*B)
  MatrixXd hprev;  // state entering each step
  MatrixXd cprev;  // LSTM only
  MatrixXd tanhc;  // LSTM only: tanh of the unmasked new cell state
  MatrixXd rh;     // GRU only: r * hprev
  MatrixXd out;    // state leaving each step (after masking)
  MatrixXd final_state;
};

struct LayerTape {
  MatrixXd input;  // after inter-layer dropout, if any
  std::vector<DirectionTape> dirs;
  MatrixXd output;  // concatenated direction outputs, (dirs*H) x (T*B)
};

struct ForwardTape {
  std::vector<LayerTape> layers;
  MatrixXd features;  // concatenated final states, head_width x B
  MatrixXd dropped;   // features after the head dropout mask
  RowVectorXd prob;
};

/// Runs one direction of one layer over the batch. With `tape`, stores what
/// backward needs. Masked steps leave (h, c) unchanged.
inline MatrixXd run_direction(const CellParams& p, const MatrixXd& input, const RowVectorXd& mask,
                              Index steps, Index bsz, bool reverse, DirectionTape* tape = nullptr) {
  const Index H = p.hidden_dim();
  const Index G = p.W.rows();
  MatrixXd wx = p.W * input;
  wx.colwise() += p.b;
  MatrixXd h = MatrixXd::Zero(H, bsz);
  MatrixXd c = MatrixXd::Zero(H, bsz);
  MatrixXd a(G, bsz);
  if (tape != nullptr) {
    tape->acts.resize(G, steps * bsz);
    tape->hprev.resize(H, steps * bsz);
    tape->out.resize(H, steps * bsz);
    if (p.kind == CellKind::LSTM) {
      tape->cprev.resize(H, steps * bsz);
      tape->tanhc.resize(H, steps * bsz);
    }
    if (p.kind == CellKind::GRU) tape->rh.resize(H, steps * bsz);
  }
  for (Index s = 0; s < steps; ++s) {
    const Index t = reverse ? steps - 1 - s : s;
    const auto m = mask.segment(t * bsz, bsz).array();
    const auto cols = [&](MatrixXd& mat) { return mat.middleCols(t * bsz, bsz); };
    if (tape != nullptr) cols(tape->hprev) = h;
    MatrixXd h_new;
    switch (p.kind) {
      case CellKind::RNN: {
        a.noalias() = wx.middleCols(t * bsz, bsz);
        a.noalias() += p.U * h;
        a = a.array().tanh().matrix();
        h_new = a;
        break;
      }
      case CellKind::GRU: {
        a.topRows(2 * H).noalias() = wx.middleCols(t * bsz, bsz).topRows(2 * H);
        a.topRows(2 * H).noalias() += p.U.topRows(2 * H) * h;
        a.topRows(2 * H) = a.topRows(2 * H).array().logistic().matrix();
        const MatrixXd rh = (a.middleRows(H, H).array() * h.array()).matrix();
        a.bottomRows(H).noalias() = wx.middleCols(t * bsz, bsz).bottomRows(H);
        a.bottomRows(H).noalias() += p.U.bottomRows(H) * rh;
        a.bottomRows(H) = a.bottomRows(H).array().tanh().matrix();
        h_new = ((1.0 - a.topRows(H).array()) * h.array() + a.topRows(H).array() * a.bottomRows(H).array())
                    .matrix();
        if (tape != nullptr) cols(tape->rh) = rh;
        break;
      }
      case CellKind::LSTM: {
        a.noalias() = wx.middleCols(t * bsz, bsz);
        a.noalias() += p.U * h;
        a.topRows(2 * H) = a.topRows(2 * H).array().logistic().matrix();
        a.middleRows(2 * H, H) = a.middleRows(2 * H, H).array().tanh().matrix();
        a.bottomRows(H) = a.bottomRows(H).array().logistic().matrix();
        const MatrixXd c_new = (a.middleRows(H, H).array() * c.array() +
                                a.topRows(H).array() * a.middleRows(2 * H, H).array())
                                   .matrix();
        const MatrixXd tc = c_new.array().tanh().matrix();
        h_new = (a.bottomRows(H).array() * tc.array()).matrix();
        if (tape != nullptr) {
          cols(tape->cprev) = c;
          cols(tape->tanhc) = tc;
        }
        c = (c_new.array().rowwise() * m + c.array().rowwise() * (1.0 - m)).matrix();
        break;
      }
    }
    h = (h_new.array().rowwise() * m + h.array().rowwise() * (1.0 - m)).matrix();
    if (tape != nullptr) {
      cols(tape->acts) = a;
      cols(tape->out) = h;
    }
  }
  if (tape != nullptr) tape->final_state = h;
  return h;
}

/// Final hidden state of one direction over a single sequence.
inline VectorXd run_direction(const CellParams& p, const SequenceTensor& seq, bool reverse) {
  const Batch b = make_batch(seq);
  return run_direction(p, b.x, b.mask, b.steps, 1, reverse).col(0);
}

/// Probabilities for every example in the batch. Dropout masks are applied
/// only when `masks` is given (training); inference uses none.
inline RowVectorXd forward_batch(const ClassifierParams& p, const Batch& batch,
                                 const DropoutMasks* masks = nullptr, ForwardTape* tape = nullptr) {
  if (batch.x.rows() != p.input_dim) {
    throw DimensionError("input width " + std::to_string(batch.x.rows()) + " does not match model input " +
                         std::to_string(p.input_dim));
  }
  const Index T = batch.steps, B = batch.size, H = p.hidden;
  if (tape != nullptr) tape->layers.assign(static_cast<std::size_t>(p.layers), {});
  MatrixXd input = batch.x;
  MatrixXd features(p.head_width(), B);
  for (int l = 0; l < p.layers; ++l) {
    if (l > 0 && masks != nullptr && !masks->inter.empty()) {
      input.array() *= masks->inter[static_cast<std::size_t>(l - 1)].array();
    }
    MatrixXd output(p.head_width(), T * B);
    LayerTape* lt = tape != nullptr ? &tape->layers[static_cast<std::size_t>(l)] : nullptr;
    if (lt != nullptr) {
      lt->input = input;
      lt->dirs.assign(static_cast<std::size_t>(p.directions()), {});
    }
    for (int d = 0; d < p.directions(); ++d) {
      DirectionTape local;
      DirectionTape* dt = lt != nullptr ? &lt->dirs[static_cast<std::size_t>(d)] : &local;
      const MatrixXd fin = run_direction(p.cell(l, d), input, batch.mask, T, B, d == 1, dt);
      output.middleRows(d * H, H) = dt->out;
      if (l == p.layers - 1) features.middleRows(d * H, H) = fin;
    }
    input = std::move(output);
    if (lt != nullptr) lt->output = input;
  }
  MatrixXd dropped = features;
  if (masks != nullptr && masks->head.size() > 0) dropped.array() *= masks->head.array();
  RowVectorXd logits = p.head_w.transpose() * dropped;
  logits.array() += p.head_b[0];
  RowVectorXd prob = logits.array().logistic().matrix();
  if (tape != nullptr) {
    tape->features = std::move(features);
    tape->dropped = std::move(dropped);
    tape->prob = prob;
  }
  return prob;
}

/// Inference-mode probability for one sequence.
inline double forward(const ClassifierParams& p, const SequenceTensor& seq) {
  return forward_batch(p, make_batch(seq))[0];
}

inline constexpr double kProbClamp = 1e-7;

inline double bce_loss(double p, double y) {
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

/// d bce / d p, zero where the clamp is active.
inline double bce_grad(double p, double y) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  return -(y / p) + (1.0 - y) / (1.0 - p);
}

/// Mean BCE over the batch.
inline double batch_loss(const RowVectorXd& prob, const RowVectorXd& targets) {
  double s = 0.0;
  for (Index i = 0; i < prob.size(); ++i) s += bce_loss(prob[i], targets[i]);
  return s / static_cast<double>(prob.size());
}

namespace detail {

/// Reverse pass through one direction. `d_out` is the gradient on each
/// step's emitted state, `d_final` on the last state. Accumulates into
/// `grad` and returns the gradient on the direction's input.
inline MatrixXd backward_direction(const CellParams& p, const DirectionTape& tape, const MatrixXd& input,
                                   const RowVectorXd& mask, Index steps, Index bsz, bool reverse,
                                   const MatrixXd* d_out, const MatrixXd& d_final, CellParams& grad) {
  const Index H = p.hidden_dim();
  const Index G = p.W.rows();
  MatrixXd dA(G, steps * bsz);
  MatrixXd dh = d_final;
  MatrixXd dc = MatrixXd::Zero(H, bsz);
  MatrixXd da(G, bsz);
  for (Index s = steps - 1; s >= 0; --s) {
    const Index t = reverse ? steps - 1 - s : s;
    const auto m = mask.segment(t * bsz, bsz).array();
    const auto col = [&](const MatrixXd& mat) { return mat.middleCols(t * bsz, bsz); };
    if (d_out != nullptr) dh += col(*d_out);
    const MatrixXd dh_new = (dh.array().rowwise() * m).matrix();
    MatrixXd dh_prev = (dh.array().rowwise() * (1.0 - m)).matrix();
    const auto acts = col(tape.acts);
    const auto hp = col(tape.hprev);
    switch (p.kind) {
      case CellKind::RNN: {
        da = (dh_new.array() * (1.0 - acts.array().square())).matrix();
        dh_prev.noalias() += p.U.transpose() * da;
        break;
      }
      case CellKind::GRU: {
        const auto z = acts.topRows(H).array();
        const auto r = acts.middleRows(H, H).array();
        const auto n = acts.bottomRows(H).array();
        da.bottomRows(H) = (dh_new.array() * z * (1.0 - n.square())).matrix();
        const MatrixXd d_rh = p.U.bottomRows(H).transpose() * da.bottomRows(H);
        da.topRows(H) = (dh_new.array() * (n - hp.array()) * z * (1.0 - z)).matrix();
        da.middleRows(H, H) = (d_rh.array() * hp.array() * r * (1.0 - r)).matrix();
        dh_prev.array() += dh_new.array() * (1.0 - z) + d_rh.array() * r;
        dh_prev.noalias() += p.U.topRows(2 * H).transpose() * da.topRows(2 * H);
        break;
      }
      case CellKind::LSTM: {
        const auto i = acts.topRows(H).array();
        const auto f = acts.middleRows(H, H).array();
        const auto g = acts.middleRows(2 * H, H).array();
        const auto o = acts.bottomRows(H).array();
        const auto tc = col(tape.tanhc).array();
        const auto cp = col(tape.cprev).array();
        const MatrixXd dc_new =
            ((dc.array().rowwise() * m) + dh_new.array() * o * (1.0 - tc.square())).matrix();
        da.topRows(H) = (dc_new.array() * g * i * (1.0 - i)).matrix();
        da.middleRows(H, H) = (dc_new.array() * cp * f * (1.0 - f)).matrix();
        da.middleRows(2 * H, H) = (dc_new.array() * i * (1.0 - g.square())).matrix();
        da.bottomRows(H) = (dh_new.array() * tc * o * (1.0 - o)).matrix();
        dc = ((dc.array().rowwise() * (1.0 - m)) + dc_new.array() * f).matrix();
        dh_prev.noalias() += p.U.transpose() * da;
        break;
      }
    }
    dA.middleCols(t * bsz, bsz) = da;
    dh = std::move(dh_prev);
  }
  grad.W.noalias() += dA * input.transpose();
  grad.b += dA.rowwise().sum();
  if (p.kind == CellKind::GRU) {
    grad.U.topRows(2 * H).noalias() += dA.topRows(2 * H) * tape.hprev.transpose();
    grad.U.bottomRows(H).noalias() += dA.bottomRows(H) * tape.rh.transpose();
  } else {
    grad.U.noalias() += dA * tape.hprev.transpose();
  }
  return p.W.transpose() * dA;
}

inline bool finite(const MatrixXd& m) { return m.allFinite(); }

}  // namespace detail

/// Gradients of the mean clamped BCE over the batch with respect to every
/// parameter, using the tape of a forward_batch call with the same masks.
inline ClassifierParams backward(const ClassifierParams& p, const Batch& batch, const ForwardTape& tape,
                                 const RowVectorXd& targets, const DropoutMasks* masks = nullptr) {
  const Index T = batch.steps, B = batch.size, H = p.hidden;
  ClassifierParams grad = p.zeros_like();
  RowVectorXd dlogit(B);
  for (Index e = 0; e < B; ++e) {
    const double pr = tape.prob[e];
    // d/dz of bce(sigmoid(z)) is p - y away from the clamp, 0 inside it.
    dlogit[e] = (pr < kProbClamp || pr > 1.0 - kProbClamp) ? 0.0 : (pr - targets[e]);
  }
  dlogit /= static_cast<double>(B);
  grad.head_w.noalias() = tape.dropped * dlogit.transpose();
  grad.head_b[0] = dlogit.sum();
  MatrixXd d_features = p.head_w * dlogit;
  if (masks != nullptr && masks->head.size() > 0) d_features.array() *= masks->head.array();

  MatrixXd d_output;  // gradient on the current layer's per-step outputs
  for (int l = p.layers - 1; l >= 0; --l) {
    const auto& lt = tape.layers[static_cast<std::size_t>(l)];
    MatrixXd d_input = MatrixXd::Zero(p.layer_input_dim(l), T * B);
    for (int d = 0; d < p.directions(); ++d) {
      MatrixXd d_final = MatrixXd::Zero(H, B);
      if (l == p.layers - 1) d_final = d_features.middleRows(d * H, H);
      MatrixXd d_out_dir;
      if (d_output.size() > 0) d_out_dir = d_output.middleRows(d * H, H);
      d_input += detail::backward_direction(p.cell(l, d), lt.dirs[static_cast<std::size_t>(d)], lt.input,
                                            batch.mask, T, B, d == 1, d_output.size() > 0 ? &d_out_dir : nullptr,
                                            d_final, grad.cell(l, d));
    }
    if (l > 0 && masks != nullptr && !masks->inter.empty()) {
      d_input.array() *= masks->inter[static_cast<std::size_t>(l - 1)].array();
    }
    d_output = std::move(d_input);
  }
  if (!grad.all_finite()) throw NumericError("non-finite gradient");
  return grad;
}

/// Forward + backward for one batch; returns (mean loss, gradients).
inline std::pair<double, ClassifierParams> loss_and_gradient(const ClassifierParams& p, const Batch& batch,
                                                             const RowVectorXd& targets,
                                                             const DropoutMasks* masks = nullptr) {
  ForwardTape tape;
  const RowVectorXd prob = forward_batch(p, batch, masks, &tape);
  const double loss = batch_loss(prob, targets);
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");
  return {loss, backward(p, batch, tape, targets, masks)};
}

/// Backward for a single labelled sequence in inference mode.
inline ClassifierParams backward(const ClassifierParams& p, const SequenceTensor& seq, double y) {
  const Batch b = make_batch(seq);
  RowVectorXd target(1);
  target[0] = y;
  return loss_and_gradient(p, b, target).second;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam moments for any parameter set exposing `views()`.
template <typename Params>
struct AdamState {
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Params m;
  Params v;

  static AdamState for_params(const Params& p, double lr = 1e-3) {
    AdamState s;
    s.lr = lr;
    s.m = p.zeros_like();
    s.v = p.zeros_like();
    return s;
  }
};

template <typename Params>
void adam_step(Params& params, const Params& grads, AdamState<Params>& state) {
  auto pv = params.views();
  const auto gv = grads.views();
  auto mv = state.m.views();
  auto vv = state.v.views();
  if (pv.size() != gv.size() || pv.size() != mv.size() || pv.size() != vv.size()) {
    throw DimensionError("Adam: parameter, gradient and moment sets differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < pv.size(); ++k) {
    if (pv[k].size() != gv[k].size() || pv[k].size() != mv[k].size()) {
      throw DimensionError("Adam: shape mismatch in tensor " + pv[k].name);
    }
    Eigen::Map<VectorXd> w(pv[k].data, pv[k].size());
    Eigen::Map<const VectorXd> g(gv[k].data, gv[k].size());
    Eigen::Map<VectorXd> m(mv[k].data, mv[k].size());
    Eigen::Map<VectorXd> v(vv[k].data, vv[k].size());
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    w.array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

struct NamedTensor {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  std::vector<double> values;  // row-major
};

/// Sectioned text container: `[header]` key = value lines, then `[tensors]`
/// with `name rows cols` followed by one line of values per row, 17
/// significant digits, so values survive a round trip exactly.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<NamedTensor> tensors;

  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : header) {
      if (k == key) return v;
    }
    throw FormatError("checkpoint header lacks key '" + key + "'");
  }

  bool has(const std::string& key) const {
    for (const auto& [k, v] : header) {
      if (k == key) return true;
    }
    return false;
  }

  const NamedTensor& tensor(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return t;
    }
    throw FormatError("checkpoint lacks tensor '" + name + "'");
  }
};

inline NamedTensor to_named(const TensorView& v) {
  NamedTensor t{v.name, v.rows, v.cols, {}};
  t.values.reserve(static_cast<std::size_t>(v.size()));
  const Eigen::Map<const MatrixXd> m(v.data, v.rows, v.cols);
  for (Index r = 0; r < v.rows; ++r) {
    for (Index c = 0; c < v.cols; ++c) t.values.push_back(m(r, c));
  }
  return t;
}

inline void from_named(const NamedTensor& t, const TensorView& v) {
  if (t.rows != v.rows || t.cols != v.cols) {
    throw FormatError("tensor '" + v.name + "' has shape " + std::to_string(t.rows) + "x" +
                      std::to_string(t.cols) + ", expected " + std::to_string(v.rows) + "x" +
                      std::to_string(v.cols));
  }
  Eigen::Map<MatrixXd> m(v.data, v.rows, v.cols);
  for (Index r = 0; r < v.rows; ++r) {
    for (Index c = 0; c < v.cols; ++c) m(r, c) = t.values[static_cast<std::size_t>(r * v.cols + c)];
  }
}

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out << "salamnet-checkpoint 1\n[header]\n";
  for (const auto& [k, v] : ck.header) out << k << " = " << v << '\n';
  out << "[tensors]\n";
  char buf[32];
  for (const auto& t : ck.tensors) {
    out << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
    for (Index r = 0; r < t.rows; ++r) {
      for (Index c = 0; c < t.cols; ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", t.values[static_cast<std::size_t>(r * t.cols + c)]);
        if (c > 0) out << ' ';
        out << buf;
      }
      out << '\n';
    }
  }
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line) || line != "salamnet-checkpoint 1") {
    throw FormatError(source + ": not a salamnet checkpoint");
  }
  if (!std::getline(in, line) || line != "[header]") throw FormatError(source + ": missing [header]");
  Checkpoint ck;
  while (std::getline(in, line) && line != "[tensors]") {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError(source + ": bad header line: " + line);
    ck.header.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    NamedTensor t;
    std::istringstream hs(line);
    if (!(hs >> t.name >> t.rows >> t.cols)) throw FormatError(source + ": bad tensor header: " + line);
    t.values.reserve(static_cast<std::size_t>(t.rows * t.cols));
    for (Index r = 0; r < t.rows; ++r) {
      if (!std::getline(in, line)) throw FormatError(source + ": truncated tensor " + t.name);
      const char* p = line.data();
      const char* end = p + line.size();
      Index n = 0;
      while (p < end) {
        while (p < end && *p == ' ') ++p;
        if (p == end) break;
        char* stop = nullptr;
        const double v = std::strtod(p, &stop);
        if (stop == p) throw FormatError(source + ": bad value in tensor " + t.name);
        t.values.push_back(v);
        p = stop;
        ++n;
      }
      if (n != t.cols) throw FormatError(source + ": row width mismatch in tensor " + t.name);
    }
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

}  // namespace salamnet
