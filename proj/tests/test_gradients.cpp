#include <catch2/catch_amalgamated.hpp>

#include "cotparity/gradients.hpp"
#include "cotparity/training.hpp"

using namespace cotparity;

namespace {
const LinkFunction kLink = LinkFunction::piecewise_quadratic_default();

DecompositionTree small_tree() {
  return DecompositionTree(ParityInstance::from_indices(8, 4, {1, 3, 4, 6}));
}

AttentionWeights random_weights(const DecompositionTree& tree, MaskKind kind, double scale,
                                std::uint64_t seed) {
  AttentionWeights w(tree, kind);
  SplitRng rng(seed, 99);
  for (int m = 1; m <= w.size(); ++m)
    for (int j = 1; j <= w.size(); ++j)
      if (!w.masked(j, m)) w.w(j - 1, m - 1) = scale * (2.0 * rng.next_unit() - 1.0);
  return w;
}

double max_rel_err(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& fd) {
  double worst = 0.0;
  for (int m = 0; m < analytic.cols(); ++m)
    for (int j = 0; j < analytic.rows(); ++j)
      if (std::abs(analytic(j, m)) > 1e-8)
        worst = std::max(worst, std::abs(analytic(j, m) - fd(j, m)) / std::abs(analytic(j, m)));
  return worst;
}
}  // namespace

TEST_CASE("teacher-forcing gradient matches finite differences", "[gradients]") {
  const auto tree = small_tree();
  const auto labeled = ground_truth_labels(tree, sample_inputs(tree, 256, 1));
  for (std::uint64_t s : {1ull, 2ull}) {
    const auto w = random_weights(tree, MaskKind::teacher_forcing_causal, 0.5, s);
    const auto g = grad_teacher_forcing(w, labeled, tree, kLink);
    const auto fd = finite_diff_grad(
        [&](const AttentionWeights& ww) {
          return cot_loss(ww, labeled, tree, kLink, FilterConfig::off(), false, true);
        },
        w, 1e-5);
    CHECK(max_rel_err(g, fd) < 1e-5);
  }
}

TEST_CASE("end-to-end gradient matches finite differences", "[gradients]") {
  const auto tree = small_tree();
  const auto labeled = ground_truth_labels(tree, sample_inputs(tree, 256, 2));
  const auto aug = sample_augmented(tree, 32, 2);
  for (std::uint64_t s : {3ull, 4ull}) {
    const auto w = random_weights(tree, MaskKind::block_level, 0.1, s);
    const auto g = grad_end_to_end(w, labeled, &aug, tree, kLink, FilterConfig::off(), 0.0);
    const auto fd = finite_diff_grad(
        [&](const AttentionWeights& ww) {
          return cot_loss(ww, labeled, tree, kLink, FilterConfig::off(), false, false, &aug);
        },
        w, 1e-5);
    CHECK(max_rel_err(g, fd) < 1e-5);
  }
}

TEST_CASE("gradient with active filter and loss mix matches finite differences", "[gradients]") {
  const auto tree = small_tree();
  const auto labeled = ground_truth_labels(tree, sample_inputs(tree, 256, 3));
  const auto aug = sample_augmented(tree, 32, 3);
  const auto filt = FilterConfig::weight(0.4);
  const auto w = random_weights(tree, MaskKind::block_level, 0.3, 5);
  const auto g = grad_chain_loss(w, labeled, tree, kLink, filt, 1.0 / 3.0, 0.1, &aug);
  const auto fd = finite_diff_grad(
      [&](const AttentionWeights& ww) {
        return cot_loss(ww, labeled, tree, kLink, filt, false, false, &aug) / 3.0 +
               0.1 * pred_loss(ww, labeled, tree, kLink, filt, &aug);
      },
      w, 1e-5);
  CHECK(max_rel_err(g, fd) < 1e-5);
}

TEST_CASE("prediction gradient matches finite differences and kills masked entries",
          "[gradients]") {
  const auto tree = small_tree();
  const auto labeled = ground_truth_labels(tree, sample_inputs(tree, 256, 4));
  const auto w = random_weights(tree, MaskKind::teacher_forcing_causal, 0.3, 6);
  const auto g = grad_prediction_only(w, labeled, tree, kLink);
  const auto fd = finite_diff_grad(
      [&](const AttentionWeights& ww) { return pred_loss(ww, labeled, tree, kLink); }, w, 1e-5);
  CHECK(max_rel_err(g, fd) < 1e-5);
  for (int m = 1; m <= w.size(); ++m)
    for (int j = 1; j <= w.size(); ++j)
      if (w.masked(j, m)) CHECK(g(j - 1, m - 1) == 0.0);
}

TEST_CASE("gradient is linear in the loss mix", "[gradients]") {
  const auto tree = small_tree();
  const auto labeled = ground_truth_labels(tree, sample_inputs(tree, 128, 5));
  const auto w = random_weights(tree, MaskKind::block_level, 0.2, 7);
  const double alpha = 0.65, beta = 0.27;
  const auto cot_only = grad_chain_loss(w, labeled, tree, kLink, FilterConfig::off(), 1.0, 0.0);
  const auto pred_only = grad_chain_loss(w, labeled, tree, kLink, FilterConfig::off(), 0.0, 1.0);
  const auto mixed = grad_chain_loss(w, labeled, tree, kLink, FilterConfig::off(), alpha, beta);
  CHECK((mixed - alpha * cot_only - beta * pred_only).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("finite differences recover a quadratic exactly", "[gradients]") {
  const auto tree = small_tree();
  const auto w = random_weights(tree, MaskKind::teacher_forcing_causal, 1.0, 8);
  const auto fd = finite_diff_grad(
      [](const AttentionWeights& ww) {
        double total = 0.0;
        for (int m = 0; m < ww.w.cols(); ++m)
          for (int j = 0; j < ww.w.rows(); ++j)
            if (!ww.mask(j, m)) total += ww.w(j, m) * ww.w(j, m);
        return total;
      },
      w, 1e-4);
  for (int m = 1; m <= w.size(); ++m)
    for (int j = 1; j <= w.size(); ++j)
      if (!w.masked(j, m))
        CHECK(fd(j - 1, m - 1) == Catch::Approx(2.0 * w.w(j - 1, m - 1)).margin(1e-7));
  CHECK_THROWS_AS(finite_diff_grad([](const AttentionWeights&) { return 0.0; }, w, 0.0),
                  std::invalid_argument);
}

TEST_CASE("shrinking h converges at second order", "[gradients]") {
  const auto tree = small_tree();
  const auto labeled = ground_truth_labels(tree, sample_inputs(tree, 128, 6));
  const auto w = random_weights(tree, MaskKind::teacher_forcing_causal, 0.4, 9);
  const auto g = grad_teacher_forcing(w, labeled, tree, kLink);
  auto loss = [&](const AttentionWeights& ww) {
    return cot_loss(ww, labeled, tree, kLink, FilterConfig::off(), false, true);
  };
  const double err_coarse = (finite_diff_grad(loss, w, 1e-3) - g).cwiseAbs().maxCoeff();
  const double err_fine = (finite_diff_grad(loss, w, 1e-4) - g).cwiseAbs().maxCoeff();
  const double order = std::log10(err_coarse / err_fine);
  CHECK(order >= 1.9);
}

TEST_CASE("population gradient concentrates on the children", "[gradients]") {
  const auto tree = small_tree();
  const auto labeled = ground_truth_labels(tree, enumerate_inputs(tree));
  const AttentionWeights w(tree, MaskKind::teacher_forcing_causal);
  const auto g = grad_teacher_forcing(w, labeled, tree, kLink);

  for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
    std::vector<std::pair<double, int>> entries;
    for (int j = 1; j < m; ++j) entries.push_back({std::abs(g(j - 1, m - 1)), j});
    std::sort(entries.rbegin(), entries.rend());
    const std::set<int> top{entries[0].second, entries[1].second};
    CHECK(top == std::set<int>{tree.child1(m), tree.child2(m)});
  }

  const auto report = leading_term_report(g, tree, kLink, MaskKind::teacher_forcing_causal);
  CHECK(report.children_dominate());
  for (const auto& row : report.rows) {
    CHECK(row.predicted_leading ==
          -8.0 / (static_cast<double>(row.m - 1) * static_cast<double>(row.m - 1)));
    CHECK(row.child_grad_mean < 0.0);
  }
}

TEST_CASE("filtered levels receive exactly zero gradient", "[gradients]") {
  const auto tree = small_tree();
  const auto labeled = ground_truth_labels(tree, sample_inputs(tree, 256, 7));
  // balanced augmented rows: every level-1 output sits near -1, so the
  // level-2 gate must fire
  TokenMatrix aug(16, tree.columns());
  for (Eigen::Index i = 0; i < aug.rows(); ++i)
    for (int j = 0; j < 8; ++j) aug.data(i, j) = ((i + j) % 2 == 0) ? 1.0 : -1.0;
  for (int j = 1; j <= 8; ++j) aug.mark_set(j);
  const AttentionWeights w(tree, MaskKind::block_level);  // level 2 will be gated
  const auto g = grad_chain_loss(w, labeled, tree, kLink, FilterConfig::token(1.5), 1.0, 0.0, &aug);
  for (int m = tree.d() + 1; m <= tree.columns(); ++m)
    if (tree.height(m) >= 2)
      for (int j = 1; j <= tree.columns(); ++j) CHECK(g(j - 1, m - 1) == 0.0);
  // level 1 rows keep their teacher-forcing-style signal
  CHECK(g.col(9 - 1).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("solved rows see exponentially small gradients", "[gradients]") {
  const auto tree = small_tree();
  const auto labeled = ground_truth_labels(tree, sample_inputs(tree, 512, 8));
  AttentionWeights w(tree, MaskKind::block_level);
  for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
    w.w(tree.child1(m) - 1, m - 1) = 30.0;
    w.w(tree.child2(m) - 1, m - 1) = 30.0;
  }
  const auto g = grad_chain_loss(w, labeled, tree, kLink, FilterConfig::off(), 1.0, 0.0);
  const double child_leading = 2.0 * kLink.curvature() / (8.0 * 8.0);
  CHECK(g.cwiseAbs().maxCoeff() <= 1e-6 * child_leading);
}

TEST_CASE("label-dependent prediction signal at zero weights is drowned", "[gradients]") {
  // The raw prediction gradient carries a target-independent drift of
  // order 1/m; only its label-dependent component can reveal the parity,
  // and that component is negligible next to the teacher-forcing child
  // signal. The gradient is affine in the labels, so subtracting the
  // zero-label gradient isolates it.
  const DecompositionTree tree(ParityInstance::from_seed(16, 8, 9));
  const auto labeled = ground_truth_labels(tree, enumerate_inputs(tree));
  const AttentionWeights w(tree, MaskKind::teacher_forcing_causal);
  const auto g_pred = grad_prediction_only(w, labeled, tree, kLink);
  TokenMatrix unlabeled = labeled;
  unlabeled.col(tree.columns()).setZero();
  const auto g_base = grad_prediction_only(w, unlabeled, tree, kLink);
  const double signal = (g_pred - g_base).cwiseAbs().maxCoeff();

  const auto g_tf = grad_teacher_forcing(w, labeled, tree, kLink);
  const auto report = leading_term_report(g_tf, tree, kLink, MaskKind::teacher_forcing_causal);
  const double child_leading = std::abs(report.rows.front().child_grad_mean);
  CHECK(signal * 50.0 < child_leading);
}

TEST_CASE("uniform gradient-norm bounds hold at random weights", "[gradients]") {
  const DecompositionTree tree(ParityInstance::from_seed(16, 8, 10));
  const auto labeled = ground_truth_labels(tree, sample_inputs(tree, 128, 10));
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto w = random_weights(tree, MaskKind::teacher_forcing_causal, 3.0, 100 + s);
    const auto tf = check_grad_bounds_teacher_forcing(w, labeled, tree, kLink);
    CHECK(tf.worst <= tf.bound);
    CHECK(tf.worst > 0.0);
    const auto wb = random_weights(tree, MaskKind::block_level, 3.0, 200 + s);
    const auto e2e = check_grad_bounds_end_to_end(wb, labeled, tree, kLink);
    CHECK(e2e.worst <= e2e.bound);
    CHECK(e2e.worst > 0.0);
  }

  // both norms strictly positive at the zero initialization
  const AttentionWeights z_tf(tree, MaskKind::teacher_forcing_causal);
  CHECK(check_grad_bounds_teacher_forcing(z_tf, labeled, tree, kLink).worst > 0.0);
  const AttentionWeights z_b(tree, MaskKind::block_level);
  CHECK(check_grad_bounds_end_to_end(z_b, labeled, tree, kLink).worst > 0.0);
}
