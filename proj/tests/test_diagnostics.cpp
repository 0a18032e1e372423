#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hg/diagnostics.hpp"
#include "hg/synthetic.hpp"

using hg::ActivationHistory;
using hg::Tensor;

namespace {

ActivationHistory<double> gcn_rollout(std::size_t layers, std::uint64_t seed) {
  auto gs = hg::generate_synthetic(hg::SyntheticKind::community_classes,
                                   {2, 6, 0.3, 0.5}, seed);
  auto batch = hg::batch_graphs(gs);
  auto ahat = hg::sparse_cast<double>(
      hg::normalized_adjacency(batch.num_nodes, batch.edges));
  hg::Rng rng(seed + 1);
  auto w = Tensor<double>::zeros({6, 6});
  for (auto& v : *w.data) v = rng.normal() * 0.25;

  ActivationHistory<double> hist;
  hist.node_graph_id = batch.node_graph_id;
  hist.num_graphs = batch.num_graphs;
  auto x = Tensor<double>::zeros({batch.num_nodes, 6});
  for (auto& v : *x.data) v = rng.normal();
  hist.slices.push_back(x);
  for (std::size_t l = 1; l < layers; ++l) {
    x = hg::gcn_layer(x, ahat, w);
    hist.slices.push_back(x);
  }
  return hist;
}

}  // namespace

TEST_CASE("feature distance closed forms") {
  ActivationHistory<double> hist;
  hist.num_graphs = 1;
  hist.node_graph_id = {0, 0};
  hist.slices.push_back(Tensor<double>::from({2, 2}, {1, 1, 1, 1}));
  CHECK(hg::feature_distance(hist, 0) == 0.0);

  hist.slices.push_back(Tensor<double>::from({2, 2}, {0, 0, 3, 4}));
  CHECK(hg::feature_distance(hist, 1) == doctest::Approx(5.0));

  CHECK_THROWS_AS(hg::feature_distance(hist, 7), hg::ContractError);

  // Single-node graphs contribute zero.
  ActivationHistory<double> lone;
  lone.num_graphs = 1;
  lone.node_graph_id = {0};
  lone.slices.push_back(Tensor<double>::from({1, 2}, {5, 5}));
  CHECK(hg::feature_distance(lone, 0) == 0.0);
}

TEST_CASE("deep plain gcn shrinks feature distance") {
  auto hist = gcn_rollout(64, 11);
  const double d0 = hg::feature_distance(hist, 0);
  const double d63 = hg::feature_distance(hist, 63);
  CHECK(d63 < d0);
}

TEST_CASE("embedding drift self-difference and constant history") {
  auto hist = gcn_rollout(5, 13);
  auto drift = hg::embedding_drift(hist);
  REQUIRE(drift.size() == 5);
  CHECK(drift[4] == 0.0);
  for (double v : drift) CHECK(std::isfinite(v));

  ActivationHistory<double> constant;
  constant.num_graphs = 1;
  constant.node_graph_id = {0, 0};
  for (int l = 0; l < 3; ++l) {
    constant.slices.push_back(Tensor<double>::from({2, 2}, {1, 2, 3, 4}));
  }
  for (double v : hg::embedding_drift(constant)) CHECK(v == 0.0);
}

TEST_CASE("attention trace matches epochs and normalization") {
  auto data = hg::generate_synthetic(hg::SyntheticKind::community_classes,
                                     {6, 4, 0.3, 0.8}, 17);
  hg::TrainConfig cfg;
  cfg.task = hg::TaskKind::graph_class;
  cfg.readout = hg::ReadoutKind::histograph;
  cfg.backbone.kind = hg::BackboneKind::gin;
  cfg.backbone.layers = 3;
  cfg.backbone.hidden = 8;
  cfg.pool.heads = 2;
  cfg.epochs = 4;
  cfg.batch_size = 3;
  cfg.seed = 3;
  cfg.canonicalize();
  auto run = hg::train<float>(data, cfg);

  auto series = hg::attention_trace(run, cfg.seed, "deadbeef");
  REQUIRE(series.size() == 2 * 3);  // alpha and raw series per layer
  for (const auto& s : series) {
    CHECK(s.x.size() == 4);
  }
  for (const auto& em : run.history) {
    double sum = 0.0;
    for (double a : em.alpha) sum += a;
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }

  // A run without the histograph readout has no trace to emit.
  auto mean_cfg = cfg;
  mean_cfg.readout = hg::ReadoutKind::mean;
  auto mean_run = hg::train<float>(data, mean_cfg);
  CHECK_THROWS_AS(hg::attention_trace(mean_run, 0, "x"), hg::ContractError);
}

TEST_CASE("epoch timer needs six epochs and reports the median") {
  hg::TrainOutput<float> run;
  for (int e = 0; e < 5; ++e) run.history.push_back({});
  CHECK_THROWS_AS(hg::epoch_timer(run), hg::ContractError);

  run.history.clear();
  const double secs[7] = {9.0, 0.4, 0.1, 0.3, 0.2, 0.5, 0.35};
  for (int e = 0; e < 7; ++e) {
    hg::EpochMetrics em;
    em.epoch = static_cast<std::size_t>(e);
    em.seconds = secs[e];
    run.history.push_back(em);
  }
  // Warmup epoch dropped; median of the remaining six.
  CHECK(hg::epoch_timer(run) == doctest::Approx(0.35));
}

TEST_CASE("linear fit r2 separates lines from noise") {
  std::vector<double> x{1, 2, 3, 4, 5};
  std::vector<double> line{2.5, 4.5, 6.5, 8.5, 10.5};
  CHECK(hg::linear_fit_r2(x, line) == doctest::Approx(1.0));
  std::vector<double> bumpy{1, 9, 2, 8, 3};
  CHECK(hg::linear_fit_r2(x, bumpy) < 0.5);
}

TEST_CASE("repeated pool timings agree within the stability bound") {
  hg::PoolConfig cfg;
  cfg.hidden = 32;
  cfg.heads = 4;
  const double t1 = hg::time_pool_forward<float>(128, 8, 32, cfg, 9, 5);
  const double t2 = hg::time_pool_forward<float>(128, 8, 32, cfg, 9, 5);
  const double ratio = std::max(t1, t2) / std::min(t1, t2);
  CHECK(ratio < 1.5);
}

TEST_CASE("diagnostics csv layout") {
  hg::DiagnosticSeries s{"demo", {0, 1}, {0.5, 0.25}, 7, "abc123"};
  const std::string csv = hg::diagnostics_csv({s});
  CHECK(csv.find("name,x,value,seed,config_hash\n") == 0);
  CHECK(csv.find("demo,0,0.5,7,abc123\n") != std::string::npos);
  CHECK(csv.find("demo,1,0.25,7,abc123\n") != std::string::npos);
}
