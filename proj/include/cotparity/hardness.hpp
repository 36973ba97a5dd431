#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "cotparity/attention.hpp"
#include "cotparity/link.hpp"
#include "cotparity/rng.hpp"
#include "cotparity/tokens.hpp"

namespace cotparity {

/// The hypothesis class P of size-k subsets of [1..d], exhaustive in
/// lexicographic order when C(d,k) fits under the cap, otherwise a seeded
/// Monte Carlo sample flagged as such.
struct ParityFamily {
  int d = 0;
  int k = 0;
  bool exhaustive = true;
  std::vector<std::vector<int>> members;
};

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

inline ParityFamily enumerate_family(int d, int k, double cap = 1e4, bool monte_carlo = false,
                                     Eigen::Index sample_size = 0, std::uint64_t seed = 0) {
  if (k < 1 || k > d) throw std::invalid_argument("enumerate_family: need 1 <= k <= d");
  ParityFamily fam;
  fam.d = d;
  fam.k = k;
  if (binomial(d, k) > cap) {
    if (!monte_carlo)
      throw std::invalid_argument("family cap exceeded; request Monte Carlo sampling");
    fam.exhaustive = false;
    SplitRng rng(seed, streams::family);
    for (Eigen::Index i = 0; i < sample_size; ++i) fam.members.push_back(rng.sample_subset(d, k));
    return fam;
  }
  std::vector<int> idx(k);
  std::iota(idx.begin(), idx.end(), 1);
  while (true) {
    fam.members.push_back(idx);
    int pos = k - 1;
    while (pos >= 0 && idx[pos] == d - (k - 1 - pos)) --pos;
    if (pos < 0) break;
    ++idx[pos];
    for (int i = pos + 1; i < k; ++i) idx[i] = idx[i - 1] + 1;
  }
  return fam;
}

/// Evaluate every family member on every sample row: column p of the
/// result is the parity p applied to each input row.
inline Mat family_values(const ParityFamily& fam, const TokenMatrix& inputs) {
  Mat values(inputs.rows(), static_cast<Eigen::Index>(fam.members.size()));
  for (std::size_t p = 0; p < fam.members.size(); ++p) {
    Vec col = Vec::Ones(inputs.rows());
    for (int j : fam.members[p]) col = col.cwiseProduct(inputs.col(j));
    values.col(static_cast<Eigen::Index>(p)) = col;
  }
  return values;
}

/// Empirical Gram matrix (<p, p'>_n); diagonal is exactly 1 for +-1 data.
inline Mat gram_matrix(const ParityFamily& fam, const TokenMatrix& inputs) {
  const Mat values = family_values(fam, inputs);
  Mat g = values.transpose() * values / static_cast<double>(inputs.rows());
  for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, i) = 1.0;
  return g;
}

/// (1/|P|) sum_p p(x) at one point; meaningful only for exhaustive families.
inline double mean_parity_at_point(const std::vector<double>& x, const ParityFamily& fam) {
  if (!fam.exhaustive)
    throw std::invalid_argument("mean_parity_at_point needs an exhaustive family");
  double total = 0.0;
  for (const auto& p : fam.members) {
    double v = 1.0;
    for (int j : p) v *= x[static_cast<std::size_t>(j - 1)];
    total += v;
  }
  return total / static_cast<double>(fam.members.size());
}

/// The adversarial oracle of the hardness construction: reveal the true
/// gradient only when it is within eps of the family mean; otherwise
/// default to the mean and leak nothing about the target.
struct OracleConfig {
  double epsilon = 0.0;
  bool exhaustive_mean = true;
  Eigen::Index sample_size = 0;
  std::uint64_t seed = 0;
};

inline Eigen::MatrixXd adversarial_oracle(const Eigen::MatrixXd& grad,
                                          const Eigen::MatrixXd& mean_grad, double epsilon,
                                          bool* intervened = nullptr) {
  if (grad.rows() != mean_grad.rows() || grad.cols() != mean_grad.cols())
    throw std::invalid_argument("adversarial_oracle: shape mismatch");
  const bool defaulted = (grad - mean_grad).norm() > epsilon;
  if (intervened) *intervened = defaulted;
  return defaulted ? mean_grad : grad;
}

/// Direct (no-CoT) transformer over d inputs and k-1 generated columns
/// with the causal mask; no tree structure is required, so k need not be
/// a power of two. Used as the f_theta of the hardness statements.
class DirectChainModel {
public:
  DirectChainModel(int d, int k, const LinkFunction& link) : d_(d), cols_(d + k - 1), link_(link) {}

  int d() const { return d_; }
  int columns() const { return cols_; }

  BoolMat causal_mask() const {
    BoolMat mask = BoolMat::Constant(cols_, cols_, true);
    for (int m = d_ + 1; m <= cols_; ++m)
      for (int j = 1; j < m; ++j) mask(j - 1, m - 1) = false;
    return mask;
  }

  AttentionWeights zero_weights() const {
    AttentionWeights w;
    w.w = Eigen::MatrixXd::Zero(cols_, cols_);
    w.mask = causal_mask();
    return w;
  }

  struct Eval {
    Mat x;                               // n x cols: chain fixed point
    Mat z;                               // n x (k-1)
    std::vector<Eigen::VectorXd> sigma;  // per generated column
  };

  Eval evaluate(const AttentionWeights& weights, const Mat& inputs) const {
    Eval ev;
    ev.x = Mat::Zero(inputs.rows(), cols_);
    ev.x.leftCols(d_) = inputs;
    ev.z.resize(inputs.rows(), cols_ - d_);
    ev.sigma.resize(static_cast<std::size_t>(cols_ - d_));
    for (int m = d_ + 1; m <= cols_; ++m) {
      const Eigen::VectorXd sigma = softmax_row(weights, m);
      Eigen::VectorXd z = ev.x * sigma;
      z = z.unaryExpr([](double t) { return std::clamp(t, -1.0, 1.0); });
      ev.x.col(m - 1) = z.unaryExpr([&](double t) { return link_.eval(t); });
      ev.z.col(m - d_ - 1) = std::move(z);
      ev.sigma[static_cast<std::size_t>(m - d_ - 1)] = sigma;
    }
    return ev;
  }

  Vec predict(const AttentionWeights& weights, const Mat& inputs) const {
    return evaluate(weights, inputs).x.col(cols_ - 1);
  }

  /// Gradient of (1/2n)||yhat - y||^2 through the chain.
  Eigen::MatrixXd grad_prediction(const AttentionWeights& weights, const Mat& inputs,
                                  const Vec& labels) const {
    const Eval ev = evaluate(weights, inputs);
    const auto n = static_cast<double>(inputs.rows());
    Mat delta = Mat::Zero(inputs.rows(), cols_);
    delta.col(cols_ - 1) = (ev.x.col(cols_ - 1) - labels) / n;
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(cols_, cols_);
    for (int m = cols_; m > d_; --m) {
      const int col = m - d_ - 1;
      const Eigen::VectorXd& sigma = ev.sigma[static_cast<std::size_t>(col)];
      const Eigen::VectorXd z = ev.z.col(col);
      const Eigen::VectorXd dz =
          delta.col(m - 1).cwiseProduct(z.unaryExpr([&](double t) { return link_.deriv(t); }));
      const double base = dz.dot(z);
      const Eigen::VectorXd dzx = ev.x.transpose() * dz;
      for (int j = 1; j < m; ++j) {
        grad(j - 1, m - 1) = sigma(j - 1) * (dzx(j - 1) - base);
        if (j > d_) delta.col(j - 1) += sigma(j - 1) * dz;
      }
    }
    return grad;
  }

  /// max over samples of ||d yhat_i / dW||^2, the empirical stand-in for
  /// sup ||grad f_theta(x)||^2 in the variance bound.
  double sup_jacobian_sq(const AttentionWeights& weights, const Mat& inputs) const {
    const Eval ev = evaluate(weights, inputs);
    const Eigen::Index n = inputs.rows();
    Mat dy = Mat::Zero(n, cols_);
    dy.col(cols_ - 1).setOnes();
    Vec total = Vec::Zero(n);
    for (int m = cols_; m > d_; --m) {
      const int col = m - d_ - 1;
      const Eigen::VectorXd& sigma = ev.sigma[static_cast<std::size_t>(col)];
      const Eigen::VectorXd z = ev.z.col(col);
      const Eigen::VectorXd dz =
          dy.col(m - 1).cwiseProduct(z.unaryExpr([&](double t) { return link_.deriv(t); }));
      for (int j = 1; j < m; ++j) {
        const Eigen::VectorXd entry = sigma(j - 1) * dz.cwiseProduct(ev.x.col(j - 1) - z);
        total += entry.cwiseAbs2();
        if (j > d_) dy.col(j - 1) += sigma(j - 1) * dz;
      }
    }
    return total.maxCoeff();
  }

private:
  int d_;
  int cols_;
  LinkFunction link_;
};

/// Gradient variance over the family and the frame-style upper bound
/// 2 (1/|P| v sqrt(4d/n)) * sup ||grad f||^2.
struct VarianceReport {
  double variance = 0.0;
  double bound = 0.0;
  double sup_grad_sq = 0.0;
};

inline VarianceReport variance_over_family(
    const std::function<Eigen::MatrixXd(const std::vector<int>&)>& grad_fn,
    const ParityFamily& fam, const TokenMatrix& inputs, double sup_grad_sq) {
  std::vector<Eigen::MatrixXd> grads;
  grads.reserve(fam.members.size());
  for (const auto& p : fam.members) grads.push_back(grad_fn(p));
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(grads.front().rows(), grads.front().cols());
  for (const auto& g : grads) mean += g;
  mean /= static_cast<double>(grads.size());
  double var = 0.0;
  for (const auto& g : grads) var += (g - mean).squaredNorm();
  var /= static_cast<double>(grads.size());

  VarianceReport report;
  report.variance = var;
  report.sup_grad_sq = sup_grad_sq;
  const double delta = std::sqrt(4.0 * fam.d / static_cast<double>(inputs.rows()));
  report.bound = 2.0 * std::max(1.0 / static_cast<double>(fam.members.size()), delta) * sup_grad_sq;
  return report;
}

struct HardnessTrial {
  std::vector<int> target;
  double final_l2 = 0.0;
  int oracle_interventions = 0;
};

struct HardnessReport {
  std::vector<HardnessTrial> trials;
  double mean_loss = 0.0;
  double variance = 0.0;
  double bound = 0.0;
  double epsilon = 0.0;
};

/// Hardness demonstration: train the direct model by full-batch GD, every
/// gradient passing through the adversarial oracle, then measure the test
/// L2 loss against the hidden target. The family-mean gradient is a single
/// backprop with the labels replaced by the per-sample family mean, since
/// the prediction-loss gradient is affine in the labels.
///
/// In the polynomial regime the construction trades sample count against
/// model-gradient growth d^{nu1}, oracle precision d^{-nu2}, query budget
/// d^{nu3} and loss gap d^{-nu4} via n = Omega(d^nu) with
/// nu = 4*nu1 + 4*nu2 + 2*nu3 + 2*nu4 + 1; this bookkeeping constrains
/// asymptotics only and is not enforced at this desk scale.
inline HardnessReport hardness_demo(const DirectChainModel& model, const ParityFamily& fam,
                                    const TokenMatrix& inputs, double epsilon, int trials,
                                    int queries, double eta, std::uint64_t seed,
                                    Eigen::Index test_samples = 2000) {
  if (!fam.exhaustive)
    throw std::invalid_argument("hardness_demo requires an exhaustive family");
  const Mat values = family_values(fam, inputs);
  const Vec mean_labels = values.rowwise().mean();
  const Mat x_in = inputs.data.leftCols(model.d());

  HardnessReport report;
  report.epsilon = epsilon;
  SplitRng rng(seed, streams::fresh);
  double total = 0.0;
  for (int t = 0; t < trials; ++t) {
    HardnessTrial trial;
    const auto pick = static_cast<std::size_t>(rng.next_below(fam.members.size()));
    trial.target = fam.members[pick];
    const Vec labels = values.col(static_cast<Eigen::Index>(pick));
    AttentionWeights w = model.zero_weights();
    for (int q = 0; q < queries; ++q) {
      const Eigen::MatrixXd g = model.grad_prediction(w, x_in, labels);
      const Eigen::MatrixXd g_mean = model.grad_prediction(w, x_in, mean_labels);
      bool intervened = false;
      const Eigen::MatrixXd g_used = adversarial_oracle(g, g_mean, epsilon, &intervened);
      if (intervened) ++trial.oracle_interventions;
      w.w -= eta * g_used;
    }
    Mat fresh(test_samples, model.d());
    for (Eigen::Index i = 0; i < test_samples; ++i)
      for (int j = 0; j < model.d(); ++j) fresh(i, j) = rng.next_sign();
    Vec y = Vec::Ones(test_samples);
    for (int j : trial.target) y = y.cwiseProduct(fresh.col(j - 1));
    const Vec yhat = model.predict(w, fresh);
    trial.final_l2 = (yhat - y).squaredNorm() / static_cast<double>(test_samples);
    total += trial.final_l2;
    report.trials.push_back(std::move(trial));
  }
  report.mean_loss = total / trials;
  return report;
}

}  // namespace cotparity
