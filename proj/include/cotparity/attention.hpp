#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cotparity/tree.hpp"

namespace cotparity {

using BoolMat = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Which positions are forbidden as attention sources.
enum class MaskKind {
  /// j >= m or m <= d: each generated token sees everything before it.
  teacher_forcing_causal,
  /// j > d_{h[m]-1} or m <= d: each token sees all tokens up to the
  /// previous tree level, shortening the chain to log2(k) steps.
  block_level,
};

inline std::string to_string(MaskKind kind) {
  return kind == MaskKind::teacher_forcing_causal ? "causal" : "block";
}

inline MaskKind mask_kind_from_string(const std::string& s) {
  if (s == "causal") return MaskKind::teacher_forcing_causal;
  if (s == "block") return MaskKind::block_level;
  throw std::invalid_argument("unknown mask kind: " + s);
}

/// mask(j-1, m-1) == true means source j is forbidden for target m
/// (the -inf entries of the paper's parametrization; kept as flags so
/// neither softmax nor gradients ever touch non-finite values).
inline BoolMat make_mask(const DecompositionTree& tree, MaskKind kind) {
  const int cols = tree.columns();
  BoolMat mask = BoolMat::Constant(cols, cols, true);
  for (int m = tree.d() + 1; m <= cols; ++m) {
    const int hi = kind == MaskKind::teacher_forcing_causal ? m - 1
                                                            : tree.level_bound(tree.height(m) - 1);
    for (int j = 1; j <= hi; ++j) mask(j - 1, m - 1) = false;
  }
  return mask;
}

/// Trainable attention logits. w(j-1, m-1) scores source position j for
/// target position m; masked entries never participate and never update.
struct AttentionWeights {
  Eigen::MatrixXd w;
  BoolMat mask;

  AttentionWeights() = default;
  AttentionWeights(const DecompositionTree& tree, MaskKind kind)
      : w(Eigen::MatrixXd::Zero(tree.columns(), tree.columns())), mask(make_mask(tree, kind)) {}

  int size() const { return static_cast<int>(w.rows()); }
  bool masked(int j, int m) const { return mask(j - 1, m - 1); }
};

/// Softmax scores of row m over its unmasked sources, computed with
/// max-subtraction. Returns a full-length vector, zero at masked entries.
inline Eigen::VectorXd softmax_row(const AttentionWeights& weights, int m) {
  const int size = weights.size();
  Eigen::VectorXd scores = Eigen::VectorXd::Zero(size);
  double wmax = -std::numeric_limits<double>::infinity();
  for (int j = 1; j <= size; ++j)
    if (!weights.masked(j, m)) wmax = std::max(wmax, weights.w(j - 1, m - 1));
  if (!std::isfinite(wmax)) throw std::invalid_argument("softmax_row: fully masked row");
  double total = 0.0;
  for (int j = 1; j <= size; ++j) {
    if (weights.masked(j, m)) continue;
    const double e = std::exp(weights.w(j - 1, m - 1) - wmax);
    scores(j - 1) = e;
    total += e;
  }
  scores /= total;
  return scores;
}

/// Round every unmasked entry to the nearest integer; exact half-integers
/// round away from zero. Idempotent.
inline AttentionWeights quantize(const AttentionWeights& weights) {
  AttentionWeights out = weights;
  for (int m = 0; m < out.w.cols(); ++m)
    for (int j = 0; j < out.w.rows(); ++j)
      if (!out.mask(j, m)) out.w(j, m) = std::round(out.w(j, m));
  return out;
}

/// Checkpoint schema: {d, k, maskKind, entries:[{j, m, w}...]} with masked
/// entries omitted; indices are 1-based, listed row-major.
inline nlohmann::json weights_to_json(const AttentionWeights& weights, int d, int k,
                                      MaskKind kind, const std::string& value_key = "w") {
  nlohmann::json entries = nlohmann::json::array();
  for (int j = 1; j <= weights.size(); ++j)
    for (int m = 1; m <= weights.size(); ++m)
      if (!weights.masked(j, m))
        entries.push_back({{"j", j}, {"m", m}, {value_key, weights.w(j - 1, m - 1)}});
  return {{"d", d}, {"k", k}, {"maskKind", to_string(kind)}, {"entries", entries}};
}

inline AttentionWeights weights_from_json(const nlohmann::json& j,
                                          const std::string& value_key = "w") {
  const auto inst = ParityInstance::from_seed(j.at("d").get<int>(), j.at("k").get<int>(), 0);
  DecompositionTree tree(inst);
  AttentionWeights out(tree, mask_kind_from_string(j.at("maskKind").get<std::string>()));
  for (const auto& e : j.at("entries"))
    out.w(e.at("j").get<int>() - 1, e.at("m").get<int>() - 1) = e.at(value_key).get<double>();
  return out;
}

}  // namespace cotparity
