#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotparity/rng.hpp"

namespace cotparity {

inline bool is_power_of_two(int k) { return k > 0 && (k & (k - 1)) == 0; }

/// A k-parity task over d-bit inputs: the label of x in {-1,+1}^d is the
/// product of the bits indexed by `target`.
struct ParityInstance {
  int d = 0;
  int k = 0;
  int v = 0;                 // tree height, k = 2^v
  std::vector<int> target;   // strictly increasing, in [1..d]

  static ParityInstance from_indices(int d, int k, std::vector<int> indices) {
    ParityInstance inst;
    inst.d = d;
    inst.k = k;
    if (k < 2 || !is_power_of_two(k))
      throw std::invalid_argument("parity size k must be a power of two, k >= 2");
    if (k > d) throw std::invalid_argument("parity size k cannot exceed input width d");
    inst.v = 0;
    for (int t = k; t > 1; t >>= 1) ++inst.v;
    std::sort(indices.begin(), indices.end());
    if (static_cast<int>(indices.size()) != k)
      throw std::invalid_argument("target must contain exactly k indices");
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] < 1 || indices[i] > d) throw std::invalid_argument("target index out of [1..d]");
      if (i > 0 && indices[i] == indices[i - 1])
        throw std::invalid_argument("target indices must be distinct");
    }
    inst.target = std::move(indices);
    return inst;
  }

  /// Uniform choice over size-k subsets of [1..d], reproducible from the seed.
  static ParityInstance from_seed(int d, int k, std::uint64_t seed) {
    if (k < 2 || !is_power_of_two(k))
      throw std::invalid_argument("parity size k must be a power of two, k >= 2");
    if (k > d) throw std::invalid_argument("parity size k cannot exceed input width d");
    SplitRng rng(seed, streams::target);
    return from_indices(d, k, rng.sample_subset(d, k));
  }

  int columns() const { return d + k - 1; }

  nlohmann::json to_json(std::uint64_t seed = 0) const {
    return {{"d", d}, {"k", k}, {"target", target}, {"seed", seed}};
  }

  static ParityInstance from_json(const nlohmann::json& j) {
    return from_indices(j.at("d").get<int>(), j.at("k").get<int>(),
                        j.at("target").get<std::vector<int>>());
  }
};

/// Complete binary decomposition tree. Leaves are the target indices in
/// ascending order; internal nodes are labelled d+1 .. d+k-1 level by
/// level, left to right, and each computes the 2-parity of its children.
class DecompositionTree {
public:
  explicit DecompositionTree(ParityInstance inst) : inst_(std::move(inst)) {
    const int d = inst_.d;
    std::vector<int> prev = inst_.target;  // level-0 nodes, left to right
    int next = d + 1;
    for (int level = 1; level <= inst_.v; ++level) {
      std::vector<int> cur;
      for (std::size_t i = 0; i + 1 < prev.size(); i += 2) {
        const int m = next++;
        child1_[m] = prev[i];
        child2_[m] = prev[i + 1];
        parent_[prev[i]] = m;
        parent_[prev[i + 1]] = m;
        height_[m] = level;
        cur.push_back(m);
      }
      prev = std::move(cur);
    }
    level_bound_.resize(inst_.v + 1);
    level_bound_[0] = d;
    for (int level = 1; level <= inst_.v; ++level)
      level_bound_[level] = level_bound_[level - 1] + (inst_.k >> level);
  }

  const ParityInstance& instance() const { return inst_; }
  int d() const { return inst_.d; }
  int k() const { return inst_.k; }
  int v() const { return inst_.v; }
  int columns() const { return inst_.columns(); }
  int top() const { return inst_.columns(); }

  int child1(int m) const { return child1_.at(m); }
  int child2(int m) const { return child2_.at(m); }
  int parent(int m) const { return parent_.at(m); }
  bool has_parent(int m) const { return parent_.count(m) != 0; }

  /// Level of node m: 0 for inputs, v for the root.
  int height(int m) const {
    if (m <= inst_.d) return 0;
    return height_.at(m);
  }

  /// Largest node index on level l (d_l in the decomposition).
  int level_bound(int l) const {
    if (l < 0) return 0;
    return level_bound_.at(static_cast<std::size_t>(l));
  }

  bool is_internal(int m) const { return m > inst_.d && m <= columns(); }

  /// Leaf-bit set of node m as a bitmask over input positions 1..d
  /// (bit j-1 <-> x_j). Internal nodes expand to the XOR of their
  /// children, which for parities is exact.
  std::uint64_t leaf_mask(int m) const {
    if (inst_.d > 64) throw std::domain_error("leaf_mask supports d <= 64");
    if (m < 1 || m > columns()) throw std::out_of_range("node index out of range");
    if (m <= inst_.d) return 1ull << (m - 1);
    return leaf_mask(child1_.at(m)) ^ leaf_mask(child2_.at(m));
  }

private:
  ParityInstance inst_;
  std::map<int, int> child1_, child2_, parent_, height_;
  std::vector<int> level_bound_;
};

}  // namespace cotparity
