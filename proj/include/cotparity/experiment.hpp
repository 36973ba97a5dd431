#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cotparity/svg.hpp"
#include "cotparity/training.hpp"

namespace cotparity {

inline const char* version_string() { return "cotparity 0.1.0"; }

/// Worker cap for regime-parallel experiment execution; COTLAB_THREADS
/// overrides hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("COTLAB_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

// ---------------------------------------------------------------------------
// Trace serialization
// ---------------------------------------------------------------------------

/// epoch,cot_loss,pred_loss,filter_l1,...,filter_lv,child_mass_mean
inline void write_trace_csv(const Trace& trace, int v, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.precision(17);
  out << "epoch,cot_loss,pred_loss";
  for (int level = 1; level <= v; ++level) out << ",filter_l" << level;
  out << ",child_mass_mean\n";
  for (const auto& rec : trace.records) {
    out << rec.epoch << ',' << rec.cot_loss << ',' << rec.pred_loss;
    for (bool active : rec.filter_active) out << ',' << (active ? 1 : 0);
    out << ',' << rec.child_mass_mean << "\n";
  }
}

inline std::vector<EpochRecord> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty trace file " + path);
  int levels = 0;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ','))
      if (field.rfind("filter_l", 0) == 0) ++levels;
  }
  std::vector<EpochRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::stringstream ss(line);
    std::string field;
    EpochRecord rec;
    std::getline(ss, field, ',');
    rec.epoch = std::stoi(field);
    std::getline(ss, field, ',');
    rec.cot_loss = std::stod(field);
    std::getline(ss, field, ',');
    rec.pred_loss = std::stod(field);
    for (int level = 0; level < levels; ++level) {
      std::getline(ss, field, ',');
      rec.filter_active.push_back(field == "1");
    }
    std::getline(ss, field, ',');
    rec.child_mass_mean = std::stod(field);
    records.push_back(std::move(rec));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Experiment orchestration
// ---------------------------------------------------------------------------

struct ExperimentSpec {
  std::string name = "figure4";
  DataSpec data{64, 32, 10000, 64};
  int epochs = 350;
  double eta = 0.0;          // 0 -> per-k default
  double direct_eta_scale = 0.01;
  double filter_threshold = 0.4;
  double loss_mix = 0.1;
  std::uint64_t seed = 7;
  std::string out_dir = "runs/figure4";
  bool log_y = false;
  std::vector<Regime> regimes = {Regime::direct, Regime::cot, Regime::cot_teacher_forcing,
                                 Regime::cot_self_consistency};

  nlohmann::json to_json() const {
    nlohmann::json regs = nlohmann::json::array();
    for (auto r : regimes) regs.push_back(to_string(r));
    return {{"name", name},
            {"d", data.d},
            {"k", data.k},
            {"n", data.n},
            {"nprime", data.n_prime},
            {"epochs", epochs},
            {"eta", eta},
            {"directEtaScale", direct_eta_scale},
            {"filterThreshold", filter_threshold},
            {"lossMix", loss_mix},
            {"seed", seed},
            {"out", out_dir},
            {"logY", log_y},
            {"regimes", regs}};
  }

  static ExperimentSpec from_json(const nlohmann::json& j) {
    ExperimentSpec spec;
    if (j.contains("name")) spec.name = j.at("name").get<std::string>();
    if (j.contains("d")) spec.data.d = j.at("d").get<int>();
    if (j.contains("k")) spec.data.k = j.at("k").get<int>();
    if (j.contains("n")) spec.data.n = j.at("n").get<Eigen::Index>();
    if (j.contains("nprime")) spec.data.n_prime = j.at("nprime").get<Eigen::Index>();
    if (j.contains("epochs")) spec.epochs = j.at("epochs").get<int>();
    if (j.contains("eta")) spec.eta = j.at("eta").get<double>();
    if (j.contains("directEtaScale")) spec.direct_eta_scale = j.at("directEtaScale").get<double>();
    if (j.contains("filterThreshold"))
      spec.filter_threshold = j.at("filterThreshold").get<double>();
    if (j.contains("lossMix")) spec.loss_mix = j.at("lossMix").get<double>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("out")) spec.out_dir = j.at("out").get<std::string>();
    if (j.contains("logY")) spec.log_y = j.at("logY").get<bool>();
    if (j.contains("regimes")) {
      spec.regimes.clear();
      for (const auto& r : j.at("regimes")) spec.regimes.push_back(regime_from_string(r));
    }
    return spec;
  }
};

/// Learning rates used in the reference experiments per parity size.
inline double default_eta(int k) {
  switch (k) {
    case 8: return 15.0;
    case 16: return 50.0;
    case 32: return 100.0;
    default:
      throw std::invalid_argument("no default learning rate for k=" + std::to_string(k) +
                                  "; pass --eta");
  }
}

struct RegimeResult {
  Regime regime = Regime::cot;
  Trace trace;
  std::vector<int> filter_deactivation_epochs;  // per level, -1 = never
};

struct ExperimentResult {
  ExperimentSpec spec;
  ParityInstance instance;
  std::vector<RegimeResult> results;
};

/// First epoch at which each level's filter is observed inactive.
inline std::vector<int> filter_deactivation_epochs(const Trace& trace, int v) {
  std::vector<int> epochs(static_cast<std::size_t>(v), -1);
  for (const auto& rec : trace.records)
    for (int level = 0; level < v; ++level)
      if (epochs[static_cast<std::size_t>(level)] < 0 &&
          !rec.filter_active[static_cast<std::size_t>(level)])
        epochs[static_cast<std::size_t>(level)] = rec.epoch;
  return epochs;
}

/// Train the configured regimes on one shared dataset and write traces,
/// checkpoints, metadata, series CSVs and the two combined loss plots.
inline ExperimentResult run_figure4(const ExperimentSpec& spec) {
  namespace fs = std::filesystem;
  const double eta = spec.eta > 0.0 ? spec.eta : default_eta(spec.data.k);
  const auto inst = ParityInstance::from_seed(spec.data.d, spec.data.k, spec.seed);
  const DecompositionTree tree(inst);
  const LinkFunction link = LinkFunction::piecewise_quadratic_default();

  const TokenMatrix inputs = sample_inputs(tree, spec.data.n, spec.seed);
  const TokenMatrix labeled = ground_truth_labels(tree, inputs);
  const TokenMatrix aug = sample_augmented(tree, spec.data.n_prime, spec.seed);

  ExperimentResult result;
  result.spec = spec;
  result.instance = inst;
  result.results.resize(spec.regimes.size());

  auto run_one = [&](std::size_t idx) {
    const Regime regime = spec.regimes[idx];
    TrainConfig cfg;
    cfg.regime = regime;
    cfg.eta = regime == Regime::direct ? spec.direct_eta_scale * eta : eta;
    cfg.epochs = spec.epochs;
    cfg.seed = spec.seed;
    cfg.data = spec.data;
    if (regime == Regime::cot_self_consistency) {
      cfg.filter = FilterConfig::weight(spec.filter_threshold);
      cfg.loss_mix = spec.loss_mix;
    }
    RegimeResult r;
    r.regime = regime;
    r.trace = train(cfg, labeled, &aug, tree, link);
    r.filter_deactivation_epochs = filter_deactivation_epochs(r.trace, tree.v());
    result.results[idx] = std::move(r);
  };

  // Regimes share read-only data; fan them out across workers.
  const unsigned workers = std::min<unsigned>(worker_count(),
                                              static_cast<unsigned>(spec.regimes.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < spec.regimes.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < spec.regimes.size(); i = next.fetch_add(1))
          run_one(i);
      });
    for (auto& th : pool) th.join();
  }

  fs::create_directories(spec.out_dir);
  const fs::path out(spec.out_dir);

  {
    std::ofstream meta(out / "metadata.json");
    nlohmann::json j = spec.to_json();
    j["instance"] = inst.to_json(spec.seed);
    j["etaResolved"] = eta;
    j["version"] = version_string();
    meta << j.dump(2) << "\n";
  }

  std::vector<PlotSeries> cot_series, pred_series;
  for (const auto& r : result.results) {
    const std::string tag = to_string(r.regime);
    write_trace_csv(r.trace, tree.v(), (out / ("trace_" + tag + ".csv")).string());
    std::ofstream wout(out / ("weights_" + tag + ".json"));
    wout << weights_to_json(r.trace.final_weights, tree.d(), tree.k(), regime_mask(r.regime))
                .dump()
         << "\n";

    PlotSeries cs, ps;
    cs.label = ps.label = tag;
    for (const auto& rec : r.trace.records) {
      cs.x.push_back(rec.epoch);
      cs.y.push_back(rec.cot_loss);
      ps.x.push_back(rec.epoch);
      ps.y.push_back(rec.pred_loss);
    }
    if (r.regime == Regime::cot_self_consistency) {
      for (int e : r.filter_deactivation_epochs)
        if (e > 0) { cs.markers.push_back(e); ps.markers.push_back(e); }
    }
    for (const char* kind : {"cot", "pred"}) {
      std::ofstream sout(out / ("series_" + std::string(kind) + "_" + tag + ".csv"));
      sout.precision(17);
      sout << "epoch," << kind << "_loss\n";
      for (const auto& rec : r.trace.records)
        sout << rec.epoch << ','
             << (std::string(kind) == "cot" ? rec.cot_loss : rec.pred_loss) << "\n";
    }
    cot_series.push_back(std::move(cs));
    pred_series.push_back(std::move(ps));
  }

  const std::string suffix =
      " (d=" + std::to_string(spec.data.d) + ", k=" + std::to_string(spec.data.k) + ")";
  {
    std::ofstream svg(out / "cot_loss.svg");
    svg << emit_svg(cot_series, "epoch", "CoT loss", "CoT loss" + suffix, spec.log_y);
  }
  {
    std::ofstream svg(out / "pred_loss.svg");
    svg << emit_svg(pred_series, "epoch", "prediction loss", "Prediction loss" + suffix,
                    spec.log_y);
  }
  return result;
}

}  // namespace cotparity
