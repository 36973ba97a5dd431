#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "cotparity/tree.hpp"

namespace cotparity {

/// True iff the product of the node parities indexed by `nodes` is
/// identically 1: expanding every node to its leaf bits, each input bit
/// must occur an even number of times (XOR of leaf masks is empty).
inline bool is_trivial(const std::vector<int>& nodes, const DecompositionTree& tree) {
  std::uint64_t acc = 0;
  for (int m : nodes) acc ^= tree.leaf_mask(m);
  return acc == 0;
}

/// Multilinear inner product <z_1,...,z_r> = sum_i prod_r z_{r,i}.
inline double contraction(const std::vector<Eigen::VectorXd>& columns) {
  if (columns.empty()) throw std::invalid_argument("contraction of zero vectors");
  const auto n = columns.front().size();
  for (const auto& c : columns)
    if (c.size() != n) throw std::invalid_argument("contraction: length mismatch");
  Eigen::VectorXd acc = Eigen::VectorXd::Ones(n);
  for (const auto& c : columns) acc = acc.cwiseProduct(c);
  return acc.sum();
}

/// Concentration level for interaction terms up to fourth order:
/// with probability at least 1-p, every nontrivial contraction of at
/// most four sampled token columns is bounded by n*kappa.
inline double kappa(Eigen::Index n, double p, int d) {
  if (n < 1) throw std::invalid_argument("kappa: need n >= 1");
  if (p <= 0.0 || p >= 1.0) throw std::invalid_argument("kappa: need 0 < p < 1");
  return std::sqrt(2.0 / static_cast<double>(n) *
                   std::log(32.0 * std::pow(static_cast<double>(d), 4) / p));
}

}  // namespace cotparity
