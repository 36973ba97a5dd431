#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "cotparity/forward.hpp"

namespace cotparity {

/// Gradient of the teacher-forcing loss (1/2n) sum_m ||phi(z_m) - x_m||^2
/// where every z_m reads ground-truth sources. Masked entries are zero.
///
/// Per entry: sigma_j(w_m)/n * < phi(z_m) - x_m, phi'(z_m), x_j - z_m >.
inline Eigen::MatrixXd grad_teacher_forcing(const AttentionWeights& weights,
                                            const TokenMatrix& labeled,
                                            const DecompositionTree& tree,
                                            const LinkFunction& link) {
  const ForcedEval ev = eval_teacher_forced(tree, labeled, weights, link);
  const auto n = static_cast<double>(labeled.rows());
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(tree.columns(), tree.columns());
  for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
    const int col = m - tree.d() - 1;
    const Eigen::VectorXd& sigma = ev.sigma[static_cast<std::size_t>(col)];
    const Eigen::VectorXd z = ev.z.col(col);
    Eigen::VectorXd r = (ev.xhat.col(col) - labeled.col(m)).cwiseProduct(
        z.unaryExpr([&](double t) { return link.deriv(t); }));
    const double base = r.dot(z);
    // <r, x_j> for all sources at once, then subtract the common <r, z>
    const Eigen::VectorXd rx = labeled.data.transpose() * r;
    for (int j = 1; j < m; ++j) {
      if (weights.masked(j, m)) continue;
      grad(j - 1, m - 1) = sigma(j - 1) / n * (rx(j - 1) - base);
    }
  }
  return grad;
}

/// Reverse-mode gradient through the generated chain of
/// cot_scale * (1/2n) sum_{m>d} ||xhat_m - x_m||^2  +  pred_weight * (1/2n) ||yhat - y||^2.
/// Filtered levels act as constant zero: their loss terms carry no
/// gradient and nothing propagates through them.
inline Eigen::MatrixXd grad_chain_loss(const AttentionWeights& weights, const TokenMatrix& labeled,
                                       const DecompositionTree& tree, const LinkFunction& link,
                                       const FilterConfig& filt, double cot_scale,
                                       double pred_weight, const TokenMatrix* aug = nullptr,
                                       std::vector<bool>* sticky_open = nullptr,
                                       ChainEval* eval_out = nullptr) {
  TokenMatrix inputs(labeled.rows(), tree.columns());
  inputs.data.leftCols(tree.d()) = labeled.data.leftCols(tree.d());
  for (int j = 1; j <= tree.d(); ++j) inputs.mark_set(j);
  ChainEval ev = eval_chain(tree, inputs, weights, link, filt, aug, sticky_open);

  const auto n = static_cast<double>(labeled.rows());
  const int d = tree.d();
  const int cols = tree.columns();
  Mat delta = Mat::Zero(labeled.rows(), cols);  // dL/d xhat_m, x-part only
  if (cot_scale != 0.0) {
    for (int m = d + 1; m <= cols; ++m)
      delta.col(m - 1) = cot_scale / n * (ev.state.x.col(m - 1) - labeled.col(m));
  }
  if (pred_weight != 0.0) {
    delta.col(cols - 1) += pred_weight / n * (ev.state.x.col(cols - 1) - labeled.col(cols));
  }

  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(cols, cols);
  for (int m = cols; m > d; --m) {
    const double gate = ev.gate[static_cast<std::size_t>(tree.height(m))];
    if (gate == 0.0) continue;  // zeroed output: no gradient in or through
    const int col = m - d - 1;
    const Eigen::VectorXd& sigma = ev.sigma[static_cast<std::size_t>(col)];
    const Eigen::VectorXd z = ev.z.col(col);
    const Eigen::VectorXd dz = delta.col(m - 1).cwiseProduct(
        z.unaryExpr([&](double t) { return link.deriv(t); }));
    const double base = dz.dot(z);
    const Eigen::VectorXd dzx = ev.state.x.transpose() * dz;
    for (int j = 1; j < m; ++j) {
      if (weights.masked(j, m)) continue;
      grad(j - 1, m - 1) = sigma(j - 1) * (dzx(j - 1) - base);
      if (j > d) delta.col(j - 1) += sigma(j - 1) * dz;
    }
  }
  if (eval_out) *eval_out = std::move(ev);
  return grad;
}

/// Gradient of the end-to-end loss L(W,U) = (1/2n) sum_i ||ybar_i - f(x_i)||^2
/// over the generated chain, plus loss_mix times the prediction-loss gradient.
inline Eigen::MatrixXd grad_end_to_end(const AttentionWeights& weights, const TokenMatrix& labeled,
                                       const TokenMatrix* augmented, const DecompositionTree& tree,
                                       const LinkFunction& link, const FilterConfig& filt,
                                       double loss_mix = 0.0) {
  return grad_chain_loss(weights, labeled, tree, link, filt, 1.0, loss_mix, augmented);
}

/// Gradient of the prediction loss (1/2n)||yhat - y||^2 through the chain.
inline Eigen::MatrixXd grad_prediction_only(const AttentionWeights& weights,
                                            const TokenMatrix& labeled,
                                            const DecompositionTree& tree,
                                            const LinkFunction& link,
                                            const FilterConfig& filt = FilterConfig::off(),
                                            const TokenMatrix* augmented = nullptr) {
  return grad_chain_loss(weights, labeled, tree, link, filt, 0.0, 1.0, augmented);
}

/// Central finite differences of an arbitrary scalar loss, per unmasked entry.
inline Eigen::MatrixXd finite_diff_grad(
    const std::function<double(const AttentionWeights&)>& loss, const AttentionWeights& weights,
    double h = 1e-5) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: need h > 0");
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(weights.w.rows(), weights.w.cols());
  AttentionWeights probe = weights;
  for (int m = 1; m <= weights.size(); ++m) {
    for (int j = 1; j <= weights.size(); ++j) {
      if (weights.masked(j, m)) continue;
      const double w0 = weights.w(j - 1, m - 1);
      probe.w(j - 1, m - 1) = w0 + h;
      const double up = loss(probe);
      probe.w(j - 1, m - 1) = w0 - h;
      const double down = loss(probe);
      probe.w(j - 1, m - 1) = w0;
      grad(j - 1, m - 1) = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

/// Decomposition of a gradient taken at the uniform initialization: per
/// target row, the mean child entry against the predicted leading value
/// -2c / s^2 where s is the number of visible sources, and the largest
/// entry elsewhere.
struct LeadingTermRow {
  int m = 0;
  double child_grad_mean = 0.0;
  double non_child_grad_max = 0.0;
  double predicted_leading = 0.0;
};

struct LeadingTermReport {
  std::vector<LeadingTermRow> rows;

  bool children_dominate() const {
    for (const auto& r : rows)
      if (r.non_child_grad_max >= std::abs(r.child_grad_mean)) return false;
    return true;
  }
  bool within_factor_two() const {
    for (const auto& r : rows)
      if (std::abs(r.child_grad_mean - r.predicted_leading) > std::abs(r.predicted_leading) / 2.0)
        return false;
    return true;
  }
};

inline LeadingTermReport leading_term_report(const Eigen::MatrixXd& grad,
                                             const DecompositionTree& tree,
                                             const LinkFunction& link, MaskKind kind) {
  const double c = link.curvature();
  LeadingTermReport report;
  for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
    LeadingTermRow row;
    row.m = m;
    const int visible = kind == MaskKind::teacher_forcing_causal
                            ? m - 1
                            : tree.level_bound(tree.height(m) - 1);
    row.predicted_leading = -2.0 * c / (static_cast<double>(visible) * visible);
    const int c1 = tree.child1(m), c2 = tree.child2(m);
    row.child_grad_mean = (grad(c1 - 1, m - 1) + grad(c2 - 1, m - 1)) / 2.0;
    for (int j = 1; j <= visible; ++j) {
      if (j == c1 || j == c2) continue;
      row.non_child_grad_max = std::max(row.non_child_grad_max, std::abs(grad(j - 1, m - 1)));
    }
    report.rows.push_back(row);
  }
  return report;
}

/// Per-sample gradient-norm bounds from the uniform Lipschitz estimates.
///
/// Teacher forcing:   ||grad_W f(x)|| <= 2 ||phi'||_inf sqrt(k-1).
/// End-to-end chain:  ||grad_W f(x)||^2 <= 4 kap^4 / ((kap^2-2)(2 kap^2-1)) * (2 kap^2)^v
/// with kap = ||phi'||_inf.
struct GradBoundsReport {
  double bound = 0.0;
  double worst = 0.0;           // max over samples of ||grad_W f(x_i)||
  Eigen::Index worst_sample = -1;
  bool ok() const { return worst <= bound && worst > 0.0; }
};

inline double teacher_forcing_grad_bound(const DecompositionTree& tree, const LinkFunction& link) {
  return 2.0 * link.sup_deriv() * std::sqrt(static_cast<double>(tree.k() - 1));
}

inline double end_to_end_grad_bound(const DecompositionTree& tree, const LinkFunction& link) {
  const double kap2 = link.sup_deriv() * link.sup_deriv();
  const double factor = 4.0 * kap2 * kap2 / ((kap2 - 2.0) * (2.0 * kap2 - 1.0));
  return std::sqrt(factor * std::pow(2.0 * kap2, tree.v()));
}

/// Measure max_i ||d f(x_i) / dW||_F for the teacher-forced map
/// f_m = phi(z_m) and compare against the Lemma-style constant.
inline GradBoundsReport check_grad_bounds_teacher_forcing(const AttentionWeights& weights,
                                                          const TokenMatrix& labeled,
                                                          const DecompositionTree& tree,
                                                          const LinkFunction& link) {
  const ForcedEval ev = eval_teacher_forced(tree, labeled, weights, link);
  const Eigen::Index n = labeled.rows();
  Eigen::VectorXd total = Eigen::VectorXd::Zero(n);
  for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
    const int col = m - tree.d() - 1;
    const Eigen::VectorXd& sigma = ev.sigma[static_cast<std::size_t>(col)];
    const Eigen::VectorXd dphi =
        ev.z.col(col).unaryExpr([&](double t) { return link.deriv(t); });
    for (int j = 1; j < m; ++j) {
      if (weights.masked(j, m)) continue;
      const Eigen::VectorXd entry =
          sigma(j - 1) * dphi.cwiseProduct(labeled.col(j) - ev.z.col(col));
      total += entry.cwiseAbs2();
    }
  }
  GradBoundsReport report;
  report.bound = teacher_forcing_grad_bound(tree, link);
  report.worst = std::sqrt(total.maxCoeff(&report.worst_sample));
  return report;
}

/// Same measurement for the end-to-end chain map: one reverse sweep per
/// output node accumulates the full per-sample Jacobian norm.
inline GradBoundsReport check_grad_bounds_end_to_end(const AttentionWeights& weights,
                                                     const TokenMatrix& labeled,
                                                     const DecompositionTree& tree,
                                                     const LinkFunction& link) {
  TokenMatrix inputs(labeled.rows(), tree.columns());
  inputs.data.leftCols(tree.d()) = labeled.data.leftCols(tree.d());
  for (int j = 1; j <= tree.d(); ++j) inputs.mark_set(j);
  const ChainEval ev = eval_chain(tree, inputs, weights, link);

  const int d = tree.d();
  const int cols = tree.columns();
  const Eigen::Index n = labeled.rows();
  Eigen::VectorXd total = Eigen::VectorXd::Zero(n);
  for (int out = d + 1; out <= cols; ++out) {
    Mat dy = Mat::Zero(n, cols);  // d xhat_out / d xhat_m per sample
    dy.col(out - 1).setOnes();
    for (int m = out; m > d; --m) {
      const int col = m - d - 1;
      const Eigen::VectorXd& sigma = ev.sigma[static_cast<std::size_t>(col)];
      const Eigen::VectorXd z = ev.z.col(col);
      const Eigen::VectorXd dz = dy.col(m - 1).cwiseProduct(
          z.unaryExpr([&](double t) { return link.deriv(t); }));
      for (int j = 1; j < m; ++j) {
        if (weights.masked(j, m)) continue;
        const Eigen::VectorXd entry =
            sigma(j - 1) * dz.cwiseProduct(ev.state.x.col(j - 1) - z);
        total += entry.cwiseAbs2();
        if (j > d) dy.col(j - 1) += sigma(j - 1) * dz;
      }
    }
  }
  GradBoundsReport report;
  report.bound = end_to_end_grad_bound(tree, link);
  report.worst = std::sqrt(total.maxCoeff(&report.worst_sample));
  return report;
}

}  // namespace cotparity
