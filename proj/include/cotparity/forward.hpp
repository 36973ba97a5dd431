#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "cotparity/attention.hpp"
#include "cotparity/link.hpp"
#include "cotparity/tokens.hpp"
#include "cotparity/tree.hpp"

namespace cotparity {

/// Self-consistency gate applied after the feedforward layer.
struct FilterConfig {
  enum class Mode { off, token_threshold, weight_threshold };
  Mode mode = Mode::off;
  double eps0 = 0.5;  // token mode: fire when some previous-level augmented
                      // column is uniformly within eps0 of -1; in (0,2)
  double tau = 0.4;   // weight mode: previous level counts as solved when
                      // every row has some softmax score > tau; in (0,1)
  bool latch = false; // evaluate gates once per level instead of per step

  static FilterConfig off() { return {}; }
  static FilterConfig token(double eps0, bool latch = false) {
    FilterConfig f;
    f.mode = Mode::token_threshold;
    f.eps0 = eps0;
    f.latch = latch;
    if (eps0 <= 0.0 || eps0 >= 2.0) throw std::invalid_argument("token filter needs eps0 in (0,2)");
    return f;
  }
  static FilterConfig weight(double tau, bool latch = false) {
    FilterConfig f;
    f.mode = Mode::weight_threshold;
    f.tau = tau;
    f.latch = latch;
    if (tau <= 0.0 || tau >= 1.0) throw std::invalid_argument("weight filter needs tau in (0,1)");
    return f;
  }
};

/// Token matrix plus optional augmented rows, with per-column status as a
/// chain iterates. A column zeroed by the filter is distinct from a dummy
/// that was never generated, and both count as uninformative sources for
/// the next level's gate.
struct ChainTokens {
  Mat x;                       // n x cols
  Mat u;                       // n' x cols (0 rows when no augmentation)
  std::vector<bool> set;       // column has a value (input or generated)
  std::vector<bool> filtered;  // column was zeroed by the filter

  static ChainTokens from_inputs(const TokenMatrix& inputs, const TokenMatrix* aug = nullptr) {
    ChainTokens t;
    t.x = inputs.data;
    t.u = aug ? aug->data : Mat(0, inputs.data.cols());
    t.set = inputs.set;
    t.filtered.assign(static_cast<std::size_t>(inputs.data.cols()), false);
    return t;
  }

  bool equals(const ChainTokens& o) const {
    return set == o.set && filtered == o.filtered && x == o.x && u == o.u;
  }
};

namespace detail {

/// Gate decision for level l >= 1 based on the supplied token state.
/// Level 1's "previous level" is the inputs themselves. A previous-level
/// column that is unset or already zeroed blocks the level outright, so
/// zeroing cascades up the tree.
inline bool filter_fires(const DecompositionTree& tree, const ChainTokens& state,
                         const AttentionWeights& weights, const FilterConfig& filt, int level) {
  if (filt.mode == FilterConfig::Mode::off) return false;
  const int lo = tree.level_bound(level - 2);
  const int hi = tree.level_bound(level - 1);
  for (int j = lo + 1; j <= hi; ++j) {
    const auto idx = static_cast<std::size_t>(j - 1);
    if (!state.set[idx] || state.filtered[idx]) return true;
  }
  if (filt.mode == FilterConfig::Mode::token_threshold) {
    if (state.u.rows() == 0)
      throw std::invalid_argument("token filter requires augmented tokens");
    for (int j = lo + 1; j <= hi; ++j)
      if ((state.u.col(j - 1).array() + 1.0).abs().maxCoeff() < filt.eps0) return true;
    return false;
  }
  // weight mode: fire unless every row of the previous level attends
  // somewhere with score > tau (level 1 sits above the inputs and is
  // never gated by weights).
  for (int m = lo + 1; m <= hi; ++m) {
    if (m <= tree.d()) continue;
    if (softmax_row(weights, m).maxCoeff() <= filt.tau) return true;
  }
  return false;
}

inline double clamp_unit(double t) { return std::clamp(t, -1.0, 1.0); }

/// z_m and x_m = phi(z_m) for one target column from the current state.
/// Pre-activations are convex combinations of values in [-1,1]; clamping
/// only absorbs float rounding at the cube boundary.
inline void compute_column(ChainTokens& state, const AttentionWeights& weights,
                           const LinkFunction& link, int m, double gate,
                           Eigen::VectorXd* z_out = nullptr,
                           Eigen::VectorXd* zu_out = nullptr,
                           Eigen::VectorXd* sigma_out = nullptr) {
  const Eigen::VectorXd sigma = softmax_row(weights, m);
  Eigen::VectorXd z = state.x * sigma;
  z = z.unaryExpr([](double t) { return clamp_unit(t); });
  const auto idx = static_cast<std::size_t>(m - 1);
  if (gate == 0.0) {
    state.x.col(m - 1).setZero();
    state.filtered[idx] = true;
  } else {
    state.x.col(m - 1) = z.unaryExpr([&](double t) { return link.eval(t); });
    state.filtered[idx] = false;
  }
  state.set[idx] = true;
  if (state.u.rows() > 0) {
    Eigen::VectorXd zu = state.u * sigma;
    zu = zu.unaryExpr([](double t) { return clamp_unit(t); });
    if (gate == 0.0)
      state.u.col(m - 1).setZero();
    else
      state.u.col(m - 1) = zu.unaryExpr([&](double t) { return link.eval(t); });
    if (zu_out) *zu_out = std::move(zu);
  }
  if (z_out) *z_out = std::move(z);
  if (sigma_out) *sigma_out = sigma;
}

}  // namespace detail

/// One synchronous application of the transformer: every generated column
/// is recomputed from the incoming state. Gates are decided per level from
/// the incoming state, so a level reacts to outputs of the previous
/// iteration, matching the filtered generation recursion.
inline ChainTokens forward_step(const DecompositionTree& tree, const ChainTokens& in,
                                const AttentionWeights& weights, const LinkFunction& link,
                                const FilterConfig& filt = FilterConfig::off(),
                                std::vector<bool>* sticky_open = nullptr) {
  for (int j = 1; j <= tree.d(); ++j)
    if (!in.set[static_cast<std::size_t>(j - 1)])
      throw std::invalid_argument("forward_step: input columns must be set");
  ChainTokens out = in;
  std::vector<double> gate(static_cast<std::size_t>(tree.v()) + 1, 1.0);
  for (int level = 1; level <= tree.v(); ++level) {
    const auto li = static_cast<std::size_t>(level);
    if (filt.latch && sticky_open && (*sticky_open)[li]) {
      gate[li] = 1.0;
      continue;
    }
    gate[li] = detail::filter_fires(tree, in, weights, filt, level) ? 0.0 : 1.0;
    if (filt.latch && sticky_open && gate[li] == 1.0) (*sticky_open)[li] = true;
  }
  for (int m = tree.d() + 1; m <= tree.columns(); ++m)
    detail::compute_column(out, weights, link, m,
                           gate[static_cast<std::size_t>(tree.height(m))]);
  return out;
}

/// Repeated forward steps until an exact fixed point or maxSteps. With the
/// causal mask the fixed point arrives within k-1 steps; with the block
/// mask within log2(k).
inline ChainTokens generate_chain(const DecompositionTree& tree, const TokenMatrix& inputs,
                                  const AttentionWeights& weights, const LinkFunction& link,
                                  const FilterConfig& filt = FilterConfig::off(),
                                  const TokenMatrix* aug = nullptr, int max_steps = -1) {
  if (max_steps < 0) max_steps = tree.k() - 1;
  ChainTokens state = ChainTokens::from_inputs(inputs, aug);
  std::vector<bool> sticky(static_cast<std::size_t>(tree.v()) + 1, false);
  for (int step = 0; step < max_steps; ++step) {
    ChainTokens next = forward_step(tree, state, weights, link, filt, &sticky);
    if (next.equals(state)) return next;
    state = std::move(next);
  }
  return state;
}

/// Full chain evaluation with per-column intermediates kept for
/// backpropagation. Columns are evaluated in index order, which lands on
/// the same fixed point as iterating forward_step (each column depends
/// only on earlier columns).
struct ChainEval {
  ChainTokens state;
  Mat z;                               // n x (k-1): pre-activation of column d+i
  Mat zu;                              // n' x (k-1)
  std::vector<Eigen::VectorXd> sigma;  // per generated column, full length
  std::vector<double> gate;            // per level, index 1..v
};

inline ChainEval eval_chain(const DecompositionTree& tree, const TokenMatrix& inputs,
                            const AttentionWeights& weights, const LinkFunction& link,
                            const FilterConfig& filt = FilterConfig::off(),
                            const TokenMatrix* aug = nullptr,
                            std::vector<bool>* sticky_open = nullptr) {
  ChainEval ev;
  ev.state = ChainTokens::from_inputs(inputs, aug);
  ev.z.resize(inputs.rows(), tree.k() - 1);
  ev.zu.resize(ev.state.u.rows(), tree.k() - 1);
  ev.sigma.resize(static_cast<std::size_t>(tree.k() - 1));
  ev.gate.assign(static_cast<std::size_t>(tree.v()) + 1, 1.0);
  for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
    const int level = tree.height(m);
    if (m - 1 == tree.level_bound(level - 1)) {
      // first node of the level: decide the gate from the finished state
      const auto li = static_cast<std::size_t>(level);
      if (filt.latch && sticky_open && (*sticky_open)[li]) {
        ev.gate[li] = 1.0;
      } else {
        ev.gate[li] = detail::filter_fires(tree, ev.state, weights, filt, level) ? 0.0 : 1.0;
        if (filt.latch && sticky_open && ev.gate[li] == 1.0) (*sticky_open)[li] = true;
      }
    }
    Eigen::VectorXd z, zu, sigma;
    detail::compute_column(ev.state, weights, link, m,
                           ev.gate[static_cast<std::size_t>(level)], &z,
                           ev.state.u.rows() > 0 ? &zu : nullptr, &sigma);
    const int col = m - tree.d() - 1;
    ev.z.col(col) = z;
    if (ev.state.u.rows() > 0) ev.zu.col(col) = zu;
    ev.sigma[static_cast<std::size_t>(col)] = std::move(sigma);
  }
  return ev;
}

/// Teacher-forced evaluation: each position reads ground-truth sources.
struct ForcedEval {
  Mat z;                               // n x (k-1)
  Mat xhat;                            // n x (k-1)
  std::vector<Eigen::VectorXd> sigma;  // per generated column
};

inline ForcedEval eval_teacher_forced(const DecompositionTree& tree, const TokenMatrix& labeled,
                                      const AttentionWeights& weights, const LinkFunction& link) {
  for (int j = 1; j <= tree.columns(); ++j)
    if (!labeled.is_set(j))
      throw std::invalid_argument("teacher forcing requires ground-truth columns");
  ForcedEval ev;
  ev.z.resize(labeled.rows(), tree.k() - 1);
  ev.xhat.resize(labeled.rows(), tree.k() - 1);
  ev.sigma.resize(static_cast<std::size_t>(tree.k() - 1));
  for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
    const Eigen::VectorXd sigma = softmax_row(weights, m);
    Eigen::VectorXd z = labeled.data * sigma;
    z = z.unaryExpr([](double t) { return detail::clamp_unit(t); });
    const int col = m - tree.d() - 1;
    ev.xhat.col(col) = z.unaryExpr([&](double t) { return link.eval(t); });
    ev.z.col(col) = std::move(z);
    ev.sigma[static_cast<std::size_t>(col)] = sigma;
  }
  return ev;
}

}  // namespace cotparity
