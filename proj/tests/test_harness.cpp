#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cotparity/experiment.hpp"

using namespace cotparity;

namespace {
const LinkFunction kLink = LinkFunction::piecewise_quadratic_default();
}

TEST_CASE("trace CSV round-trips exactly", "[harness]") {
  const DecompositionTree tree(ParityInstance::from_indices(8, 4, {2, 3, 5, 8}));
  const auto labeled = ground_truth_labels(tree, sample_inputs(tree, 128, 1));
  const auto aug = sample_augmented(tree, 32, 1);
  TrainConfig cfg;
  cfg.regime = Regime::cot_self_consistency;
  cfg.eta = 3.0;
  cfg.epochs = 7;
  cfg.loss_mix = 0.1;
  cfg.filter = FilterConfig::weight(0.4);
  cfg.data = {8, 4, 128, 32};
  const Trace trace = train(cfg, labeled, &aug, tree, kLink);

  const std::string path = "test_trace_tmp.csv";
  write_trace_csv(trace, tree.v(), path);
  const auto records = read_trace_csv(path);
  REQUIRE(records.size() == trace.records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].epoch == trace.records[i].epoch);
    CHECK(records[i].cot_loss == trace.records[i].cot_loss);
    CHECK(records[i].pred_loss == trace.records[i].pred_loss);
    CHECK(records[i].filter_active == trace.records[i].filter_active);
    CHECK(records[i].child_mass_mean == trace.records[i].child_mass_mean);
  }
  std::remove(path.c_str());
}

TEST_CASE("experiment spec JSON round trip with overrides", "[harness]") {
  ExperimentSpec spec;
  spec.data = {32, 8, 5000, 128};
  spec.epochs = 42;
  spec.eta = 3.5;
  spec.seed = 99;
  spec.out_dir = "runs/x";
  const auto back = ExperimentSpec::from_json(spec.to_json());
  CHECK(back.data.d == 32);
  CHECK(back.data.k == 8);
  CHECK(back.data.n == 5000);
  CHECK(back.epochs == 42);
  CHECK(back.eta == 3.5);
  CHECK(back.seed == 99);
  CHECK(back.out_dir == "runs/x");
  CHECK(back.regimes.size() == 4);

  // partial JSON keeps defaults for missing fields
  const auto partial = ExperimentSpec::from_json({{"k", 16}});
  CHECK(partial.data.k == 16);
  CHECK(partial.data.d == 64);
  CHECK(partial.epochs == 350);
}

TEST_CASE("default learning rates follow the reference table", "[harness]") {
  CHECK(default_eta(8) == 15.0);
  CHECK(default_eta(16) == 50.0);
  CHECK(default_eta(32) == 100.0);
  CHECK_THROWS_AS(default_eta(4), std::invalid_argument);
}

TEST_CASE("svg emitter produces well-formed single-root output", "[harness]") {
  PlotSeries s;
  s.label = "demo";
  s.x = {0.0, 1.0};
  s.y = {0.5, 0.25};
  s.markers = {1.0};
  const std::string svg = emit_svg({s}, "epoch", "loss", "demo");

  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("<svg ") != std::string::npos);
  CHECK(svg.rfind("</svg>\n") == svg.size() - 7);
  CHECK(svg.find("<svg ", svg.find("<svg ") + 1) == std::string::npos);  // single root

  // one polyline with exactly two coordinate pairs
  const auto poly = svg.find("<polyline");
  REQUIRE(poly != std::string::npos);
  CHECK(svg.find("<polyline", poly + 1) == std::string::npos);
  const auto points = svg.find("points=\"", poly);
  const auto end = svg.find('"', points + 8);
  const std::string coords = svg.substr(points + 8, end - points - 8);
  CHECK(std::count(coords.begin(), coords.end(), ',') == 2);

  // one dashed marker line
  CHECK(svg.find("stroke-dasharray") != std::string::npos);

  // every opened tag is closed
  for (const char* tag : {"text", "line", "rect"}) {
    std::size_t opens = 0, closes = 0, selfclosed = 0, pos = 0;
    const std::string open = "<" + std::string(tag);
    while ((pos = svg.find(open, pos)) != std::string::npos) {
      const auto gt = svg.find('>', pos);
      if (svg[gt - 1] == '/') ++selfclosed;
      ++opens;
      pos = gt;
    }
    pos = 0;
    const std::string close = "</" + std::string(tag) + ">";
    while ((pos = svg.find(close, pos)) != std::string::npos) {
      ++closes;
      pos += close.size();
    }
    CHECK(opens == closes + selfclosed);
  }

  CHECK_THROWS_AS(emit_svg({}, "x", "y", "t"), std::invalid_argument);
  PlotSeries bad;
  bad.x = {1.0};
  CHECK_THROWS_AS(emit_svg({bad}, "x", "y", "t"), std::invalid_argument);
}

TEST_CASE("figure-style experiment writes a reproducible bundle", "[harness]") {
  namespace fs = std::filesystem;
  ExperimentSpec spec;
  spec.data = {8, 4, 96, 24};
  spec.epochs = 4;
  spec.eta = 2.0;
  spec.seed = 5;
  spec.out_dir = "test_fig_tmp";
  const auto result = run_figure4(spec);
  REQUIRE(result.results.size() == 4);
  for (const auto& r : result.results) REQUIRE(r.trace.records.size() == 5);

  for (const char* name :
       {"metadata.json", "trace_direct.csv", "trace_cot.csv", "trace_cot-tf.csv",
        "trace_cot-sc.csv", "weights_direct.json", "weights_cot-sc.json", "cot_loss.svg",
        "pred_loss.svg", "series_cot_direct.csv", "series_pred_cot-sc.csv"})
    CHECK(fs::exists(fs::path(spec.out_dir) / name));

  // metadata is sufficient to reproduce the run
  std::ifstream meta(fs::path(spec.out_dir) / "metadata.json");
  nlohmann::json j;
  meta >> j;
  CHECK(j.at("seed") == 5);
  CHECK(j.at("etaResolved") == 2.0);
  CHECK(j.contains("version"));
  CHECK(j.at("instance").at("target").size() == 4);

  // emitted traces parse back to the in-memory records
  const auto records = read_trace_csv((fs::path(spec.out_dir) / "trace_cot-sc.csv").string());
  const auto& sc = result.results.back().trace.records;
  REQUIRE(records.size() == sc.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].cot_loss == sc[i].cot_loss);
    CHECK(records[i].pred_loss == sc[i].pred_loss);
  }
  fs::remove_all(spec.out_dir);
}
