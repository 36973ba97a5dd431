#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <set>

#include "cotparity/tree.hpp"

using namespace cotparity;

namespace {
// the 8-parity layout used as the running example: leaves 1,4 under the
// first internal node
const std::vector<int> kExampleTarget{1, 4, 5, 7, 9, 12, 14, 16};
}  // namespace

TEST_CASE("instance construction and validation", "[tree]") {
  const auto inst = ParityInstance::from_indices(16, 8, kExampleTarget);
  CHECK(inst.v == 3);
  CHECK(inst.columns() == 23);

  const auto tiny = ParityInstance::from_indices(2, 2, {1, 2});
  CHECK(tiny.v == 1);

  CHECK_THROWS_AS(ParityInstance::from_indices(16, 6, {1, 2, 3, 4, 5, 6}), std::invalid_argument);
  CHECK_THROWS_AS(ParityInstance::from_indices(4, 8, {1, 2, 3, 4}), std::invalid_argument);
  CHECK_THROWS_AS(ParityInstance::from_indices(16, 2, {3, 3}), std::invalid_argument);
  CHECK_THROWS_AS(ParityInstance::from_indices(16, 2, {0, 5}), std::invalid_argument);
  CHECK_THROWS_AS(ParityInstance::from_indices(16, 2, {5, 17}), std::invalid_argument);
}

TEST_CASE("seeded instances are reproducible and uniform-ish", "[tree]") {
  const auto a = ParityInstance::from_seed(16, 8, 42);
  const auto b = ParityInstance::from_seed(16, 8, 42);
  CHECK(a.target == b.target);
  const auto c = ParityInstance::from_seed(16, 8, 43);
  CHECK(a.target != c.target);  // 1/C(16,8) chance of a false alarm

  // every index appears among many draws
  std::set<int> seen;
  for (std::uint64_t s = 0; s < 64; ++s)
    for (int j : ParityInstance::from_seed(16, 8, s).target) seen.insert(j);
  CHECK(seen.size() == 16);
}

TEST_CASE("tree matches the worked 8-parity example", "[tree]") {
  const DecompositionTree tree(ParityInstance::from_indices(16, 8, kExampleTarget));
  CHECK(tree.child1(17) == 1);
  CHECK(tree.child2(17) == 4);
  CHECK(tree.parent(17) == 21);
  CHECK(tree.height(17) == 1);
  CHECK(tree.level_bound(0) == 16);
  CHECK(tree.level_bound(1) == 20);
  CHECK(tree.level_bound(2) == 22);
  CHECK(tree.level_bound(3) == 23);
  CHECK(tree.top() == 23);
}

TEST_CASE("smallest legal tree", "[tree]") {
  const DecompositionTree tree(ParityInstance::from_indices(2, 2, {1, 2}));
  CHECK(tree.child1(3) == 1);
  CHECK(tree.child2(3) == 2);
  CHECK(tree.height(3) == 1);
}

TEST_CASE("tree structural invariants", "[tree]") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const DecompositionTree tree(ParityInstance::from_seed(32, 16, seed));
    for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
      CHECK(tree.child1(m) < tree.child2(m));
      CHECK(tree.child2(m) < m);
      CHECK(tree.parent(tree.child1(m)) == m);
      CHECK(tree.parent(tree.child2(m)) == m);
      const int h = tree.height(m);
      CHECK(tree.level_bound(h - 1) < m);
      CHECK(m <= tree.level_bound(h));
      // expanding through children reaches exactly 2^h distinct leaves
      CHECK(std::popcount(tree.leaf_mask(m)) == (1 << h));
    }
  }
}
