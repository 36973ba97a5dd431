#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotparity/gradients.hpp"
#include "cotparity/hardness.hpp"

namespace cotparity {

/// The four training setups compared in the experiments.
enum class Regime { direct, cot, cot_teacher_forcing, cot_self_consistency };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::direct: return "direct";
    case Regime::cot: return "cot";
    case Regime::cot_teacher_forcing: return "cot-tf";
    case Regime::cot_self_consistency: return "cot-sc";
  }
  return "?";
}

inline Regime regime_from_string(const std::string& s) {
  if (s == "direct") return Regime::direct;
  if (s == "cot") return Regime::cot;
  if (s == "cot-tf" || s == "tf") return Regime::cot_teacher_forcing;
  if (s == "cot-sc" || s == "sc") return Regime::cot_self_consistency;
  throw std::invalid_argument("unknown regime: " + s);
}

/// Direct and teacher forcing read every earlier position; the chain
/// regimes use the level-block mask so generation takes log2(k) steps.
inline MaskKind regime_mask(Regime r) {
  return (r == Regime::direct || r == Regime::cot_teacher_forcing)
             ? MaskKind::teacher_forcing_causal
             : MaskKind::block_level;
}

struct DataSpec {
  int d = 16;
  int k = 8;
  Eigen::Index n = 1024;
  Eigen::Index n_prime = 64;
};

struct TrainConfig {
  Regime regime = Regime::cot_teacher_forcing;
  double eta = 1.0;
  int epochs = 1;
  bool quantize_every_step = false;
  double loss_mix = 0.0;  // fraction of the prediction-loss gradient added
  std::optional<OracleConfig> oracle;
  std::uint64_t seed = 0;
  DataSpec data;
  FilterConfig filter;      // applies to the self-consistency regime
  bool latch_filter = false;  // keep a level unlocked across epochs once open
  std::optional<MaskKind> mask_override;  // defaults to the regime's mask

  void validate() const {
    if (eta < 0.0) throw std::invalid_argument("learning rate must be nonnegative");
    if (epochs < 0) throw std::invalid_argument("epochs must be nonnegative");
    if (loss_mix < 0.0 || loss_mix > 1.0) throw std::invalid_argument("lossMix must be in [0,1]");
    if (loss_mix != 0.0 && regime != Regime::cot_self_consistency)
      throw std::invalid_argument("lossMix is only used by the self-consistency regime");
  }
};

struct EpochRecord {
  int epoch = 0;
  double cot_loss = 0.0;
  double pred_loss = 0.0;
  std::vector<bool> filter_active;  // per level 1..v; true = outputs zeroed
  double child_mass_mean = 0.0;     // mean over rows of sigma_c1 + sigma_c2
};

struct Trace {
  std::vector<EpochRecord> records;
  AttentionWeights final_weights;
};

/// Squared error over all generated states, (1/2n) sum_{m>d} ||xhat - x||^2,
/// optionally scaled by 1/(k-1) to match the prediction loss. States come
/// from teacher-forced evaluation or from the generated chain.
inline double cot_loss(const AttentionWeights& weights, const TokenMatrix& labeled,
                       const DecompositionTree& tree, const LinkFunction& link,
                       const FilterConfig& filt, bool scaled, bool teacher_forced = false,
                       const TokenMatrix* aug = nullptr) {
  const auto n = static_cast<double>(labeled.rows());
  double total = 0.0;
  if (teacher_forced) {
    const ForcedEval ev = eval_teacher_forced(tree, labeled, weights, link);
    for (int m = tree.d() + 1; m <= tree.columns(); ++m)
      total += 0.5 / n * (ev.xhat.col(m - tree.d() - 1) - labeled.col(m)).squaredNorm();
  } else {
    TokenMatrix inputs(labeled.rows(), tree.columns());
    inputs.data.leftCols(tree.d()) = labeled.data.leftCols(tree.d());
    for (int j = 1; j <= tree.d(); ++j) inputs.mark_set(j);
    const ChainEval ev = eval_chain(tree, inputs, weights, link, filt, aug);
    for (int m = tree.d() + 1; m <= tree.columns(); ++m)
      total += 0.5 / n * (ev.state.x.col(m - 1) - labeled.col(m)).squaredNorm();
  }
  return scaled ? total / static_cast<double>(tree.k() - 1) : total;
}

/// Prediction loss (1/2n)||yhat - y||^2 through the generated chain.
inline double pred_loss(const AttentionWeights& weights, const TokenMatrix& labeled,
                        const DecompositionTree& tree, const LinkFunction& link,
                        const FilterConfig& filt = FilterConfig::off(),
                        const TokenMatrix* aug = nullptr) {
  TokenMatrix inputs(labeled.rows(), tree.columns());
  inputs.data.leftCols(tree.d()) = labeled.data.leftCols(tree.d());
  for (int j = 1; j <= tree.d(); ++j) inputs.mark_set(j);
  const ChainEval ev = eval_chain(tree, inputs, weights, link, filt, aug);
  const auto n = static_cast<double>(labeled.rows());
  const int top = tree.columns();
  return 0.5 / n * (ev.state.x.col(top - 1) - labeled.col(top)).squaredNorm();
}

namespace detail {

inline double child_mass_mean(const AttentionWeights& weights, const DecompositionTree& tree) {
  double total = 0.0;
  for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
    const Eigen::VectorXd s = softmax_row(weights, m);
    total += s(tree.child1(m) - 1) + s(tree.child2(m) - 1);
  }
  return total / static_cast<double>(tree.k() - 1);
}

}  // namespace detail

/// Full-batch gradient descent per the configured regime. Deterministic
/// given the config; the epoch-0 record holds pre-update losses so curves
/// start at initialization. Non-finite losses abort with a diagnostic.
inline Trace train(const TrainConfig& config, const TokenMatrix& labeled, const TokenMatrix* aug,
                   const DecompositionTree& tree, const LinkFunction& link) {
  config.validate();
  const MaskKind mask = config.mask_override.value_or(regime_mask(config.regime));
  const bool self_consistency = config.regime == Regime::cot_self_consistency;
  const FilterConfig filt = self_consistency ? config.filter : FilterConfig::off();
  const TokenMatrix* chain_aug = self_consistency ? aug : nullptr;
  const double kscale = 1.0 / static_cast<double>(tree.k() - 1);

  AttentionWeights weights(tree, mask);
  Trace trace;
  std::vector<bool> sticky(static_cast<std::size_t>(tree.v()) + 1, false);

  auto record = [&](int epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    FilterConfig record_filt = filt;
    if (config.latch_filter) record_filt.latch = true;
    TokenMatrix inputs(labeled.rows(), tree.columns());
    inputs.data.leftCols(tree.d()) = labeled.data.leftCols(tree.d());
    for (int j = 1; j <= tree.d(); ++j) inputs.mark_set(j);
    const ChainEval ev = eval_chain(tree, inputs, weights, link, record_filt, chain_aug,
                                    config.latch_filter ? &sticky : nullptr);
    const auto n = static_cast<double>(labeled.rows());
    double cot = 0.0;
    for (int m = tree.d() + 1; m <= tree.columns(); ++m)
      cot += 0.5 / n * (ev.state.x.col(m - 1) - labeled.col(m)).squaredNorm();
    if (config.regime == Regime::cot_teacher_forcing)
      cot = cot_loss(weights, labeled, tree, link, FilterConfig::off(), false, true);
    rec.cot_loss = cot * kscale;
    rec.pred_loss =
        0.5 / n * (ev.state.x.col(tree.columns() - 1) - labeled.col(tree.columns())).squaredNorm();
    for (int level = 1; level <= tree.v(); ++level)
      rec.filter_active.push_back(ev.gate[static_cast<std::size_t>(level)] == 0.0);
    rec.child_mass_mean = detail::child_mass_mean(weights, tree);
    if (!std::isfinite(rec.cot_loss) || !std::isfinite(rec.pred_loss)) {
      std::ostringstream oss;
      oss << "training diverged at epoch " << epoch << " (cot=" << rec.cot_loss
          << ", pred=" << rec.pred_loss << ")";
      throw std::runtime_error(oss.str());
    }
    trace.records.push_back(std::move(rec));
  };

  record(0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Eigen::MatrixXd grad;
    switch (config.regime) {
      case Regime::direct:
        grad = grad_chain_loss(weights, labeled, tree, link, FilterConfig::off(), 0.0, 1.0);
        break;
      case Regime::cot:
        grad = grad_chain_loss(weights, labeled, tree, link, FilterConfig::off(), kscale, 0.0);
        break;
      case Regime::cot_teacher_forcing:
        grad = grad_teacher_forcing(weights, labeled, tree, link) * kscale;
        break;
      case Regime::cot_self_consistency: {
        FilterConfig f = filt;
        if (config.latch_filter) f.latch = true;
        grad = grad_chain_loss(weights, labeled, tree, link, f, kscale, config.loss_mix,
                               chain_aug, config.latch_filter ? &sticky : nullptr);
        break;
      }
    }
    if (config.oracle) {
      if (config.regime != Regime::direct)
        throw std::invalid_argument(
            "the adversarial mean-gradient oracle is defined for the direct objective");
      const ParityFamily fam = enumerate_family(tree.d(), tree.k(), 1e4,
                                                !config.oracle->exhaustive_mean,
                                                config.oracle->sample_size, config.oracle->seed);
      const Mat values = family_values(fam, labeled);
      const Vec mean_labels = values.rowwise().mean();
      TokenMatrix mean_labeled = labeled;
      mean_labeled.col(tree.columns()) = mean_labels;
      const Eigen::MatrixXd mean_grad =
          grad_chain_loss(weights, mean_labeled, tree, link, FilterConfig::off(), 0.0, 1.0);
      grad = adversarial_oracle(grad, mean_grad, config.oracle->epsilon);
    }
    weights.w -= config.eta * grad;
    if (config.quantize_every_step) weights = quantize(weights);
    record(epoch);
  }
  trace.final_weights = weights;
  return trace;
}

/// Full-chain test evaluation of trained weights on fresh inputs.
struct EvalReport {
  double max_abs_err = 0.0;
  double mean_zero_one_err = 0.0;
};

inline EvalReport evaluate(const AttentionWeights& weights, const DecompositionTree& tree,
                           const LinkFunction& link, const FilterConfig& filt,
                           const TokenMatrix& fresh_inputs, const TokenMatrix* aug = nullptr) {
  const ChainTokens out = generate_chain(tree, fresh_inputs, weights, link, filt, aug);
  const TokenMatrix truth = ground_truth_labels(tree, fresh_inputs);
  const int top = tree.columns();
  const Vec err = out.x.col(top - 1) - truth.col(top);
  EvalReport report;
  report.max_abs_err = err.cwiseAbs().maxCoeff();
  Eigen::Index wrong = 0;
  for (Eigen::Index i = 0; i < out.x.rows(); ++i) {
    const double sign = out.x(i, top - 1) >= 0.0 ? 1.0 : -1.0;
    if (sign != truth.data(i, top - 1)) ++wrong;
  }
  report.mean_zero_one_err = static_cast<double>(wrong) / static_cast<double>(out.x.rows());
  return report;
}

// ---------------------------------------------------------------------------
// Theorem-style checkers
// ---------------------------------------------------------------------------

struct Theorem3Row {
  int m = 0;
  double score_child1 = 0.0;
  double score_child2 = 0.0;
};

struct Theorem3Report {
  std::vector<Theorem3Row> rows;
  double min_child_score = 0.0;
  double min_combined_mass = 0.0;
  double max_test_err = 0.0;

  bool pass(double score_floor = 0.45, double mass_floor = 0.9, double err_ceil = 0.2) const {
    return min_child_score >= score_floor && min_combined_mass >= mass_floor &&
           max_test_err <= err_ceil;
  }
};

/// One teacher-forcing update from zero initialization at rate eta, then
/// measure child-score concentration and full-chain test error on fresh
/// inputs generated without ground-truth reference.
inline Theorem3Report theorem3_check(const DecompositionTree& tree, const LinkFunction& link,
                                     double eta, const TokenMatrix& labeled,
                                     Eigen::Index fresh_n = 1000, std::uint64_t fresh_seed = 1,
                                     std::optional<double> oracle_noise = std::nullopt,
                                     std::uint64_t noise_seed = 0) {
  AttentionWeights weights(tree, MaskKind::teacher_forcing_causal);
  Eigen::MatrixXd grad = grad_teacher_forcing(weights, labeled, tree, link);
  if (oracle_noise) {
    SplitRng rng(noise_seed, streams::family);
    for (int m = 1; m <= weights.size(); ++m)
      for (int j = 1; j <= weights.size(); ++j)
        if (!weights.masked(j, m))
          grad(j - 1, m - 1) += *oracle_noise * (2.0 * rng.next_unit() - 1.0);
  }
  weights.w -= eta * grad;

  Theorem3Report report;
  report.min_child_score = 1.0;
  report.min_combined_mass = 1.0;
  for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
    const Eigen::VectorXd s = softmax_row(weights, m);
    Theorem3Row row{m, s(tree.child1(m) - 1), s(tree.child2(m) - 1)};
    report.min_child_score =
        std::min({report.min_child_score, row.score_child1, row.score_child2});
    report.min_combined_mass =
        std::min(report.min_combined_mass, row.score_child1 + row.score_child2);
    report.rows.push_back(row);
  }
  const TokenMatrix fresh = sample_inputs(tree, fresh_n, fresh_seed, streams::fresh);
  report.max_test_err =
      evaluate(weights, tree, link, FilterConfig::off(), fresh).max_abs_err;
  return report;
}

struct PatternViolation {
  int t = 0, m = 0, j = 0;
  double value = 0.0;
  std::string what;
};

struct Theorem4Report {
  std::vector<PatternViolation> violations;
  std::vector<std::vector<double>> child_weight_per_level;  // per stage t: level -> value
  bool pattern_ok = true;
  bool stable_after_final = false;
  double final_max_test_err = 0.0;
  AttentionWeights final_weights;

  bool pass(double err_ceil = 0.1) const {
    return pattern_ok && stable_after_final && final_max_test_err <= err_ceil;
  }
};

/// Staged no-teacher-forcing run: block mask, token filter, quantized
/// updates at eta = d^{2+eps/16} * eta0 (the d^2.5 instantiation), exactly
/// log2(k) updates. After update t the staged integer pattern must hold:
/// rows of levels <= t carry a common positive integer at both children
/// and zero elsewhere, rows above are all-zero. One further update must
/// change nothing.
inline Theorem4Report theorem4_check(const DecompositionTree& tree, const LinkFunction& link,
                                     double eta0, const TokenMatrix& labeled,
                                     const TokenMatrix& aug, double eps0 = 1.9,
                                     Eigen::Index fresh_n = 1000, std::uint64_t fresh_seed = 2) {
  const double eta = std::pow(static_cast<double>(tree.d()), 2.5) * eta0;
  const FilterConfig filt = FilterConfig::token(eps0);
  AttentionWeights weights(tree, MaskKind::block_level);
  Theorem4Report report;

  auto check_stage = [&](int t) {
    std::vector<double> child_w(static_cast<std::size_t>(tree.v()) + 1, 0.0);
    for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
      const int level = tree.height(m);
      const int c1 = tree.child1(m), c2 = tree.child2(m);
      for (int j = 1; j <= tree.level_bound(level - 1); ++j) {
        const double w = weights.w(j - 1, m - 1);
        if (level > t) {
          if (w != 0.0)
            report.violations.push_back({t, m, j, w, "row above stage not zero"});
          continue;
        }
        if (j == c1 || j == c2) {
          if (w <= 0.0 || w != std::round(w))
            report.violations.push_back({t, m, j, w, "child weight not a positive integer"});
        } else if (w != 0.0) {
          report.violations.push_back({t, m, j, w, "non-child weight not zero"});
        }
      }
      if (level <= t) {
        const double w1 = weights.w(c1 - 1, m - 1);
        const double w2 = weights.w(c2 - 1, m - 1);
        if (w1 != w2)
          report.violations.push_back({t, m, c2, w2, "children differ within row"});
        child_w[static_cast<std::size_t>(level)] = w1;
      }
    }
    report.child_weight_per_level.push_back(child_w);
  };

  for (int t = 1; t <= tree.v(); ++t) {
    const Eigen::MatrixXd grad =
        grad_chain_loss(weights, labeled, tree, link, filt, 1.0, 0.0, &aug);
    weights.w -= eta * grad;
    weights = quantize(weights);
    check_stage(t);
  }
  report.pattern_ok = report.violations.empty();

  AttentionWeights before = weights;
  const Eigen::MatrixXd grad = grad_chain_loss(weights, labeled, tree, link, filt, 1.0, 0.0, &aug);
  weights.w -= eta * grad;
  weights = quantize(weights);
  report.stable_after_final = (weights.w == before.w);

  const TokenMatrix fresh = sample_inputs(tree, fresh_n, fresh_seed, streams::fresh);
  report.final_max_test_err = evaluate(weights, tree, link, filt, fresh, &aug).max_abs_err;
  report.final_weights = weights;
  return report;
}

}  // namespace cotparity
