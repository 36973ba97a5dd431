// Command-line front end: dataset generation, regime training, the
// figure-style four-regime comparison, theorem checkers, the hardness
// demonstration, gradient checking and link-function verification.
//
// Exit codes: 0 success, 1 assertion/check failure, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cotparity/experiment.hpp"
#include "cotparity/gradients.hpp"
#include "cotparity/hardness.hpp"
#include "cotparity/parity_algebra.hpp"
#include "cotparity/training.hpp"

namespace fs = std::filesystem;
using namespace cotparity;

namespace {

struct CommonOpts {
  int d = 16;
  int k = 8;
  long long n = 1024;
  long long nprime = 64;
  int epochs = 350;
  double eta = 0.0;
  std::uint64_t seed = 7;
  std::string out = "runs/out";
};

void add_common(CLI::App* cmd, CommonOpts& o, bool require_task = false) {
  auto* d = cmd->add_option("--d", o.d, "input bit count");
  auto* k = cmd->add_option("--k", o.k, "parity size (power of two)");
  if (require_task) {
    d->required();
    k->required();
  }
  cmd->add_option("--n", o.n, "training sample count");
  cmd->add_option("--nprime", o.nprime, "augmented sample count");
  cmd->add_option("--epochs", o.epochs, "gradient-descent epochs");
  cmd->add_option("--eta", o.eta, "learning rate (0 = per-k default)");
  cmd->add_option("--seed", o.seed, "base RNG seed");
  cmd->add_option("--out", o.out, "output directory");
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << j.dump(2) << "\n";
}

int cmd_gen_task(const CommonOpts& o) {
  const auto inst = ParityInstance::from_seed(o.d, o.k, o.seed);
  const DecompositionTree tree(inst);
  const TokenMatrix labeled = ground_truth_labels(tree, sample_inputs(tree, o.n, o.seed));
  fs::create_directories(o.out);
  write_dataset_csv(labeled, (fs::path(o.out) / "dataset.csv").string());
  write_json(fs::path(o.out) / "instance.json", inst.to_json(o.seed));
  std::cout << "wrote " << o.n << " samples for d=" << o.d << " k=" << o.k << " target=[";
  for (std::size_t i = 0; i < inst.target.size(); ++i)
    std::cout << (i ? "," : "") << inst.target[i];
  std::cout << "] to " << o.out << "\n";
  return 0;
}

int cmd_train(const CommonOpts& o, const std::string& regime_name, const std::string& mask_name,
              const std::string& filter_name, double filter_threshold, bool quantize,
              double loss_mix, double oracle_eps) {
  TrainConfig cfg;
  cfg.regime = regime_from_string(regime_name);
  if (!mask_name.empty()) cfg.mask_override = mask_kind_from_string(mask_name);
  cfg.eta = o.eta > 0.0 ? o.eta : default_eta(o.k);
  if (cfg.regime == Regime::direct && o.eta == 0.0) cfg.eta *= 0.01;
  cfg.epochs = o.epochs;
  cfg.seed = o.seed;
  cfg.quantize_every_step = quantize;
  cfg.data = {o.d, o.k, o.n, o.nprime};
  if (cfg.regime == Regime::cot_self_consistency) {
    cfg.loss_mix = loss_mix;
    if (filter_name == "token")
      cfg.filter = FilterConfig::token(filter_threshold);
    else if (filter_name == "weight")
      cfg.filter = FilterConfig::weight(filter_threshold);
    else if (filter_name != "off")
      throw CLI::ValidationError("--filter must be token, weight or off");
  }
  if (oracle_eps > 0.0) {
    OracleConfig oc;
    oc.epsilon = oracle_eps;
    cfg.oracle = oc;
  }

  const auto inst = ParityInstance::from_seed(o.d, o.k, o.seed);
  const DecompositionTree tree(inst);
  const LinkFunction link = LinkFunction::piecewise_quadratic_default();
  const TokenMatrix labeled = ground_truth_labels(tree, sample_inputs(tree, o.n, o.seed));
  const TokenMatrix aug = sample_augmented(tree, o.nprime, o.seed);

  const Trace trace = train(cfg, labeled, &aug, tree, link);
  fs::create_directories(o.out);
  write_trace_csv(trace, tree.v(), (fs::path(o.out) / "trace.csv").string());
  write_json(fs::path(o.out) / "weights.json",
             weights_to_json(trace.final_weights, o.d, o.k,
                            cfg.mask_override.value_or(regime_mask(cfg.regime))));
  nlohmann::json meta = {{"regime", to_string(cfg.regime)}, {"eta", cfg.eta},
                         {"epochs", cfg.epochs},           {"quantize", quantize},
                         {"lossMix", cfg.loss_mix},        {"seed", o.seed},
                         {"d", o.d},                       {"k", o.k},
                         {"n", o.n},                       {"nprime", o.nprime},
                         {"instance", inst.to_json(o.seed)}, {"version", version_string()}};
  write_json(fs::path(o.out) / "metadata.json", meta);
  const auto& last = trace.records.back();
  std::cout << "final cot_loss=" << last.cot_loss << " pred_loss=" << last.pred_loss << "\n";
  return 0;
}

int cmd_figure4(const CLI::App* cmd, const CommonOpts& o, const std::string& config_path,
                double filter_threshold, double loss_mix) {
  ExperimentSpec spec;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open " + config_path);
    nlohmann::json j;
    in >> j;
    spec = ExperimentSpec::from_json(j);
  }
  // explicit flags override the config file
  if (cmd->count("--d")) spec.data.d = o.d;
  if (cmd->count("--k")) spec.data.k = o.k;
  if (cmd->count("--n")) spec.data.n = o.n;
  if (cmd->count("--nprime")) spec.data.n_prime = o.nprime;
  if (cmd->count("--epochs")) spec.epochs = o.epochs;
  if (cmd->count("--eta")) spec.eta = o.eta;
  if (cmd->count("--seed")) spec.seed = o.seed;
  if (cmd->count("--out")) spec.out_dir = o.out;
  if (cmd->count("--filter-threshold")) spec.filter_threshold = filter_threshold;
  if (cmd->count("--loss-mix")) spec.loss_mix = loss_mix;
  if (config_path.empty()) {
    spec.data = {o.d, o.k, o.n, o.nprime};
    spec.epochs = o.epochs;
    spec.eta = o.eta;
    spec.seed = o.seed;
    spec.out_dir = o.out;
    spec.filter_threshold = filter_threshold;
    spec.loss_mix = loss_mix;
  }
  const ExperimentResult res = run_figure4(spec);
  for (const auto& r : res.results) {
    const auto& last = r.trace.records.back();
    std::cout << to_string(r.regime) << ": final cot=" << last.cot_loss
              << " pred=" << last.pred_loss;
    if (r.regime == Regime::cot_self_consistency) {
      std::cout << " filter-deactivation=[";
      for (std::size_t i = 0; i < r.filter_deactivation_epochs.size(); ++i)
        std::cout << (i ? "," : "") << r.filter_deactivation_epochs[i];
      std::cout << "]";
    }
    std::cout << "\n";
  }
  std::cout << "outputs in " << spec.out_dir << "\n";
  return 0;
}

int cmd_theorem3(const CommonOpts& o, bool sample_mode) {
  const auto inst = ParityInstance::from_seed(o.d, o.k, o.seed);
  const DecompositionTree tree(inst);
  const LinkFunction link = LinkFunction::piecewise_quadratic_default();
  const TokenMatrix data =
      sample_mode ? ground_truth_labels(tree, sample_inputs(tree, o.n, o.seed))
                  : ground_truth_labels(tree, enumerate_inputs(tree));
  const double eta = o.eta > 0.0 ? o.eta : std::pow(o.d, 2.5);
  const auto report = theorem3_check(tree, link, eta, data, 1000, o.seed + 1);
  for (const auto& row : report.rows)
    std::cout << "row m=" << row.m << " child scores " << row.score_child1 << " "
              << row.score_child2 << "\n";
  std::cout << "min child score = " << report.min_child_score
            << ", min combined mass = " << report.min_combined_mass
            << ", max test err = " << report.max_test_err << "\n";
  const bool ok = report.pass();
  std::cout << (ok ? "theorem3 check PASSED" : "theorem3 check FAILED") << "\n";
  return ok ? 0 : 1;
}

int cmd_theorem4(const CommonOpts& o, double eta0, double eps0, bool sample_mode) {
  const auto inst = ParityInstance::from_seed(o.d, o.k, o.seed);
  const DecompositionTree tree(inst);
  const LinkFunction link = LinkFunction::piecewise_quadratic_default();
  const TokenMatrix data =
      sample_mode ? ground_truth_labels(tree, sample_inputs(tree, o.n, o.seed))
                  : ground_truth_labels(tree, enumerate_inputs(tree));
  const TokenMatrix aug = sample_augmented(tree, o.nprime, o.seed);
  const auto report = theorem4_check(tree, link, eta0, data, aug, eps0, 1000, o.seed + 2);
  for (std::size_t t = 0; t < report.child_weight_per_level.size(); ++t) {
    std::cout << "after update " << t + 1 << ": child weights per level =";
    for (int level = 1; level <= tree.v(); ++level)
      std::cout << ' ' << report.child_weight_per_level[t][static_cast<std::size_t>(level)];
    std::cout << "\n";
  }
  for (const auto& viol : report.violations)
    std::cout << "pattern violation t=" << viol.t << " m=" << viol.m << " j=" << viol.j
              << " w=" << viol.value << " (" << viol.what << ")\n";
  // softmax is invariant under a common shift of a row, so also report the
  // final rows in that gauge: child weight, then the distinct non-child values
  for (int m = tree.d() + 1; m <= tree.columns(); ++m) {
    const int level = tree.height(m);
    std::set<double> others;
    for (int j = 1; j <= tree.level_bound(level - 1); ++j)
      if (j != tree.child1(m) && j != tree.child2(m))
        others.insert(report.final_weights.w(j - 1, m - 1));
    std::cout << "row m=" << m << " (level " << level
              << "): child w=" << report.final_weights.w(tree.child1(m) - 1, m - 1)
              << ", non-child values {";
    bool first = true;
    for (double v : others) {
      std::cout << (first ? "" : ",") << v;
      first = false;
    }
    std::cout << "}\n";
  }
  std::cout << "pattern_ok=" << report.pattern_ok
            << " stable_after_final=" << report.stable_after_final
            << " final_max_test_err=" << report.final_max_test_err << "\n";
  const bool ok = report.pass();
  std::cout << (ok ? "theorem4 check PASSED" : "theorem4 check FAILED") << "\n";
  return ok ? 0 : 1;
}

int cmd_hardness(const CommonOpts& o, int trials, int queries, double oracle_eps) {
  const LinkFunction link = LinkFunction::piecewise_quadratic_default();
  const ParityFamily fam = enumerate_family(o.d, o.k);
  TokenMatrix inputs(o.n, o.d + o.k - 1);
  SplitRng rng(o.seed, streams::inputs);
  for (int j = 1; j <= o.d; ++j) {
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) inputs.data(i, j - 1) = rng.next_sign();
    inputs.mark_set(j);
  }
  const DirectChainModel model(o.d, o.k, link);

  const Mat x_in = inputs.data.leftCols(o.d);
  const AttentionWeights w0 = model.zero_weights();
  const auto grad_fn = [&](const std::vector<int>& parity) {
    Vec y = Vec::Ones(inputs.rows());
    for (int j : parity) y = y.cwiseProduct(x_in.col(j - 1));
    return model.grad_prediction(w0, x_in, y);
  };
  const VarianceReport var =
      variance_over_family(grad_fn, fam, inputs, model.sup_jacobian_sq(w0, x_in));
  const double eps = oracle_eps > 0.0 ? oracle_eps : std::cbrt(var.variance);
  const auto report = hardness_demo(model, fam, inputs, eps, trials, queries,
                                    o.eta > 0.0 ? o.eta : 1.0, o.seed);

  fs::create_directories(o.out);
  {
    std::ofstream csv(fs::path(o.out) / "trials.csv");
    csv << "trial,target,final_l2,oracle_interventions\n";
    for (std::size_t t = 0; t < report.trials.size(); ++t) {
      csv << t << ",\"";
      for (std::size_t i = 0; i < report.trials[t].target.size(); ++i)
        csv << (i ? " " : "") << report.trials[t].target[i];
      csv << "\"," << report.trials[t].final_l2 << ',' << report.trials[t].oracle_interventions
          << "\n";
    }
  }
  write_json(fs::path(o.out) / "summary.json",
             {{"meanLoss", report.mean_loss},
              {"variance", var.variance},
              {"bound", var.bound},
              {"epsilon", eps}});
  std::cout << "family size " << fam.members.size() << ", Var_n = " << var.variance
            << " (bound " << var.bound << "), eps = " << eps << "\n";
  std::cout << "mean test L2 over " << trials << " trials = " << report.mean_loss << "\n";
  return var.variance <= var.bound ? 0 : 1;
}

int cmd_grad_check(const CommonOpts& o, double tol, double h) {
  const auto inst = ParityInstance::from_seed(o.d, o.k, o.seed);
  const DecompositionTree tree(inst);
  const LinkFunction link = LinkFunction::piecewise_quadratic_default();
  const TokenMatrix labeled = ground_truth_labels(tree, sample_inputs(tree, o.n, o.seed));
  const TokenMatrix aug = sample_augmented(tree, o.nprime, o.seed);
  SplitRng rng(o.seed, streams::family);

  double worst = 0.0;
  bool dumped = false;
  for (int trial = 0; trial < 5; ++trial) {
    for (const char* which : {"tf", "e2e", "pred"}) {
      const MaskKind kind = std::string(which) == "e2e" ? MaskKind::block_level
                                                        : MaskKind::teacher_forcing_causal;
      AttentionWeights w(tree, kind);
      for (int m = 1; m <= w.size(); ++m)
        for (int j = 1; j <= w.size(); ++j)
          if (!w.masked(j, m)) w.w(j - 1, m - 1) = 0.2 * (2.0 * rng.next_unit() - 1.0);

      Eigen::MatrixXd analytic;
      std::function<double(const AttentionWeights&)> loss;
      if (std::string(which) == "tf") {
        analytic = grad_teacher_forcing(w, labeled, tree, link);
        loss = [&](const AttentionWeights& ww) {
          return cot_loss(ww, labeled, tree, link, FilterConfig::off(), false, true);
        };
      } else if (std::string(which) == "e2e") {
        analytic = grad_end_to_end(w, labeled, &aug, tree, link, FilterConfig::off(), 0.0);
        loss = [&](const AttentionWeights& ww) {
          return cot_loss(ww, labeled, tree, link, FilterConfig::off(), false, false, &aug);
        };
      } else {
        analytic = grad_prediction_only(w, labeled, tree, link);
        loss = [&](const AttentionWeights& ww) {
          return pred_loss(ww, labeled, tree, link);
        };
      }
      const Eigen::MatrixXd fd = finite_diff_grad(loss, w, h);
      for (int m = 0; m < analytic.cols(); ++m)
        for (int j = 0; j < analytic.rows(); ++j)
          if (std::abs(analytic(j, m)) > 1e-8)
            worst = std::max(worst,
                             std::abs(analytic(j, m) - fd(j, m)) / std::abs(analytic(j, m)));
      if (!dumped) {
        AttentionWeights dump = w;
        dump.w = analytic;
        write_json(fs::path(o.out) / ("grad_" + std::string(which) + ".json"),
                   weights_to_json(dump, o.d, o.k, kind, "grad"));
        if (std::string(which) == "pred") dumped = true;
      }
    }
  }
  std::cout << "worst relative error over 5 trials x 3 regimes: " << worst << "\n";
  const bool ok = worst < tol;
  std::cout << (ok ? "grad check PASSED" : "grad check FAILED") << "\n";
  return ok ? 0 : 1;
}

int cmd_verify_link(const std::string& spec_path) {
  LinkFunction link = LinkFunction::piecewise_quadratic_default();
  if (!spec_path.empty()) {
    std::ifstream in(spec_path);
    if (!in) throw std::runtime_error("cannot open " + spec_path);
    nlohmann::json j;
    in >> j;
    link = LinkFunction::from_json(j);  // constructor runs the invariants
  }
  std::cout << "c = " << link.curvature() << ", sup|phi'| = " << link.sup_deriv()
            << ", g = " << link.growth_exponent() << "\n";
  std::cout << "link function invariants PASSED\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"one-layer chain-of-thought transformer laboratory for k-parity"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string regime = "cot-tf", mask_name, filter = "weight";
  double filter_threshold = 0.4, loss_mix = 0.1, oracle_eps = 0.0;
  bool quantize = false, sample_mode = false;
  double eta0 = 1.0, eps0 = 1.9, tol = 1e-5, h = 1e-5;
  int trials = 20, queries = 100;
  std::string link_spec;

  auto* gen = app.add_subcommand("gen-task", "sample an instance and export the dataset");
  add_common(gen, o);

  auto* tr = app.add_subcommand("train", "train one regime and write its trace");
  add_common(tr, o, /*require_task=*/true);
  tr->add_option("--regime", regime, "direct|cot|cot-tf|cot-sc")->required();
  tr->add_option("--mask", mask_name, "causal|block (default: the regime's mask)");
  tr->add_option("--filter", filter, "token|weight|off (self-consistency only)");
  tr->add_option("--filter-threshold", filter_threshold, "eps0 or tau");
  tr->add_flag("--quantize", quantize, "round weights to integers after each update");
  tr->add_option("--loss-mix", loss_mix, "prediction-gradient fraction (self-consistency)");
  tr->add_option("--oracle-eps", oracle_eps, "adversarial oracle epsilon (direct regime)");

  auto* f4 = app.add_subcommand("figure4", "train all four regimes on shared data");
  std::string config_path;
  add_common(f4, o);
  f4->add_option("--config", config_path, "experiment spec JSON; flags override");
  f4->add_option("--filter-threshold", filter_threshold, "weight-filter tau");
  f4->add_option("--loss-mix", loss_mix, "prediction-gradient fraction");

  auto* t3 = app.add_subcommand("theorem3", "one-step teacher-forcing check");
  add_common(t3, o);
  t3->add_flag("--sample", sample_mode, "use sampled data instead of full enumeration");

  auto* t4 = app.add_subcommand("theorem4", "staged quantized no-teacher-forcing check");
  add_common(t4, o);
  t4->add_option("--eta0", eta0, "base rate; eta = d^2.5 * eta0");
  t4->add_option("--filter-threshold", eps0, "token filter eps0");
  t4->add_flag("--sample", sample_mode, "use sampled data instead of full enumeration");

  auto* hd = app.add_subcommand("hardness-demo", "adversarial-oracle hardness demonstration");
  add_common(hd, o);
  hd->add_option("--trials", trials, "independent targets");
  hd->add_option("--queries", queries, "oracle queries per trial");
  hd->add_option("--oracle-eps", oracle_eps, "epsilon (0 = variance^(1/3))");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
  add_common(gc, o);
  gc->add_option("--tol", tol, "relative error tolerance");
  gc->add_option("--fd-step", h, "finite-difference step");

  auto* vl = app.add_subcommand("verify-link", "check link-function invariants");
  vl->add_option("--spec", link_spec, "JSON piece list (default: built-in piecewise quadratic)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_task(o);
    if (tr->parsed())
      return cmd_train(o, regime, mask_name, filter, filter_threshold, quantize, loss_mix,
                       oracle_eps);
    if (f4->parsed()) return cmd_figure4(f4, o, config_path, filter_threshold, loss_mix);
    if (t3->parsed()) return cmd_theorem3(o, sample_mode);
    if (t4->parsed()) return cmd_theorem4(o, eta0, eps0, sample_mode);
    if (hd->parsed()) {
      // the hardness setting defaults to the exhaustive 252-parity family
      if (hd->count("--d") == 0) o.d = 10;
      if (hd->count("--k") == 0) o.k = 5;
      if (hd->count("--n") == 0) o.n = 4096;
      return cmd_hardness(o, trials, queries, oracle_eps);
    }
    if (gc->parsed()) return cmd_grad_check(o, tol, h);
    if (vl->parsed()) return cmd_verify_link(link_spec);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
