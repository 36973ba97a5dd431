#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cotparity/rng.hpp"
#include "cotparity/tree.hpp"

namespace cotparity {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Sample-major token storage: column j-1 holds token x_j across all
/// samples. Input columns are +-1 when sampled; columns above d start as
/// unset zero dummies until generated or filled from ground truth.
struct TokenMatrix {
  Mat data;               // n x (d+k-1)
  std::vector<bool> set;  // per column: true once filled

  TokenMatrix() = default;
  TokenMatrix(Eigen::Index n, int columns) : data(Mat::Zero(n, columns)), set(columns, false) {}

  Eigen::Index rows() const { return data.rows(); }
  int columns() const { return static_cast<int>(data.cols()); }

  /// 1-based column access.
  auto col(int j) { return data.col(j - 1); }
  auto col(int j) const { return data.col(j - 1); }
  bool is_set(int j) const { return set[static_cast<std::size_t>(j - 1)]; }
  void mark_set(int j, bool value = true) { set[static_cast<std::size_t>(j - 1)] = value; }
};

/// n i.i.d. uniform +-1 rows over columns 1..d; dummy columns above d stay
/// zero and unset. Reproducible from (seed, stream).
inline TokenMatrix sample_inputs(const DecompositionTree& tree, Eigen::Index n,
                                 std::uint64_t seed, std::uint64_t stream = streams::inputs) {
  if (n < 1) throw std::invalid_argument("sample_inputs: need n >= 1");
  TokenMatrix t(n, tree.columns());
  SplitRng rng(seed, stream);
  for (int j = 1; j <= tree.d(); ++j) {
    for (Eigen::Index i = 0; i < n; ++i) t.data(i, j - 1) = rng.next_sign();
    t.mark_set(j);
  }
  return t;
}

/// All 2^d inputs, one per row; the exact population for d <= 20.
inline TokenMatrix enumerate_inputs(const DecompositionTree& tree) {
  const int d = tree.d();
  if (d > 20) throw std::domain_error("enumerate_inputs: 2^d rows infeasible for d > 20");
  const Eigen::Index n = Eigen::Index(1) << d;
  TokenMatrix t(n, tree.columns());
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) t.data(i, j) = ((i >> j) & 1) ? -1.0 : 1.0;
  for (int j = 1; j <= d; ++j) t.mark_set(j);
  return t;
}

/// Fill every internal column m with the elementwise product of its
/// children; the top column then carries the target parity of each row.
inline TokenMatrix ground_truth_labels(const DecompositionTree& tree, const TokenMatrix& inputs) {
  for (int j = 1; j <= tree.d(); ++j)
    if (!inputs.is_set(j)) throw std::invalid_argument("ground_truth_labels: input columns must be set");
  TokenMatrix t = inputs;
  for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
    t.col(m) = t.col(tree.child1(m)).cwiseProduct(t.col(tree.child2(m)));
    t.mark_set(m);
  }
  return t;
}

/// Unlabeled augmentation: nPrime fresh +-1 rows with the same column
/// layout, drawn from an independent stream.
inline TokenMatrix sample_augmented(const DecompositionTree& tree, Eigen::Index n_prime,
                                    std::uint64_t seed) {
  return sample_inputs(tree, n_prime, seed, streams::augmented);
}

/// CSV export: header sample_id,x_1,...,x_{d+k-1}; entries are +-1/0 integers.
inline void write_dataset_csv(const TokenMatrix& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "sample_id";
  for (int j = 1; j <= t.columns(); ++j) out << ",x_" << j;
  out << "\n";
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    out << i;
    for (int j = 0; j < t.columns(); ++j) out << ',' << static_cast<long long>(t.data(i, j));
    out << "\n";
  }
}

}  // namespace cotparity
