#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "hg/synthetic.hpp"
#include "hg/trainer.hpp"

namespace fs = std::filesystem;
using hg::Tensor;
using hg::TrainConfig;

namespace {

TrainConfig small_community_config() {
  TrainConfig cfg;
  cfg.task = hg::TaskKind::graph_class;
  cfg.readout = hg::ReadoutKind::histograph;
  cfg.backbone.kind = hg::BackboneKind::gin;
  cfg.backbone.layers = 3;
  cfg.backbone.hidden = 8;
  cfg.pool.heads = 2;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.lr = 3e-3;
  cfg.seed = 5;
  cfg.canonicalize();
  return cfg;
}

std::vector<hg::Graph> small_community(std::size_t count, std::uint64_t seed) {
  return hg::generate_synthetic(hg::SyntheticKind::community_classes,
                                {count, 4, 0.3, 0.8}, seed);
}

}  // namespace

TEST_CASE("loss_fn dispatch covers the three tasks") {
  auto logits = Tensor<double>::zeros({4, 3});
  auto ce = hg::loss_fn(hg::TaskKind::graph_class, logits, {0, 1, 2, 0},
                        Tensor<double>());
  CHECK(ce.item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  auto confident = Tensor<double>::from({2, 2}, {20, 0, 0, 20});
  CHECK(hg::loss_fn(hg::TaskKind::node_class, confident, {0, 1},
                    Tensor<double>())
            .item() < 1e-3);

  auto pred = Tensor<double>::from({3, 1}, {1, 2, 3});
  CHECK(hg::loss_fn(hg::TaskKind::node_regress, pred, {}, pred.clone())
            .item() == 0.0);
}

TEST_CASE("adam first step, zero grad, quadratic convergence, skips") {
  // First step: bias-corrected update magnitude is about lr for any grad.
  {
    hg::ParamStore<double> store;
    store.add("x", Tensor<double>::scalar(0.0));
    (*store.at("x").grad)[0] = 3.7;
    hg::Adam<double> adam({0.01});
    adam.step(store);
    CHECK(std::abs(store.at("x").at(0) + 0.01) < 1e-6);
  }
  // Zero gradient with zero state leaves parameters unchanged.
  {
    hg::ParamStore<double> store;
    store.add("x", Tensor<double>::scalar(1.25));
    hg::Adam<double> adam({0.01});
    adam.step(store);
    CHECK(store.at("x").at(0) == doctest::Approx(1.25));
  }
  // 1-d quadratic (x - 3)^2 reaches |x - 3| < 1e-3 within 500 steps.
  {
    hg::ParamStore<double> store;
    store.add("x", Tensor<double>::scalar(-2.0));
    hg::Adam<double> adam({0.05});
    for (int step = 0; step < 500; ++step) {
      store.zero_grads();
      (*store.at("x").grad)[0] = 2.0 * (store.at("x").at(0) - 3.0);
      adam.step(store);
    }
    CHECK(std::abs(store.at("x").at(0) - 3.0) < 1e-3);
  }
  // Non-finite gradients skip the step and bump the counter.
  {
    hg::ParamStore<double> store;
    store.add("x", Tensor<double>::scalar(1.0));
    (*store.at("x").grad)[0] = std::numeric_limits<double>::quiet_NaN();
    hg::Adam<double> adam({0.01});
    adam.step(store);
    CHECK(store.at("x").at(0) == doctest::Approx(1.0));
    CHECK(adam.skipped_steps() == 1);
  }
}

TEST_CASE("identical seeds give identical metric series") {
  auto data = small_community(8, 42);
  auto cfg = small_community_config();
  auto run1 = hg::train<float>(data, cfg);
  auto run2 = hg::train<float>(data, cfg);
  CHECK(hg::metrics_csv(run1.history) == hg::metrics_csv(run2.history));
  CHECK(run1.checkpoint.params.checksum() ==
        run2.checkpoint.params.checksum());

  auto cfg2 = cfg;
  cfg2.seed = 6;
  auto run3 = hg::train<float>(data, cfg2);
  CHECK(hg::metrics_csv(run1.history) != hg::metrics_csv(run3.history));
}

TEST_CASE("non-finite loss aborts with a divergence diagnostic") {
  auto data = small_community(4, 9);
  data[0].features[0] = std::numeric_limits<double>::quiet_NaN();
  auto cfg = small_community_config();
  cfg.val_fraction = 0.0;
  CHECK_THROWS_AS(hg::train<float>(data, cfg), hg::DivergenceError);
}

TEST_CASE("evaluate leaves parameters untouched and scores a majority vote") {
  auto data = small_community(10, 11);
  auto cfg = small_community_config();
  cfg.epochs = 2;
  auto run = hg::train<float>(data, cfg);
  const auto checksum = run.checkpoint.params.checksum();
  hg::evaluate(data, run.checkpoint);
  CHECK(run.checkpoint.params.checksum() == checksum);

  // Zero head: all logits tie, argmax picks class 0, accuracy equals the
  // class-0 fraction (60% in this fixture).
  std::vector<hg::Graph> skewed;
  for (std::size_t i = 0; i < 10; ++i) {
    skewed.push_back(data[i]);
    skewed.back().label = i < 6 ? 0 : 1;
  }
  auto& head_w = run.checkpoint.params.at("head.w");
  auto& head_b = run.checkpoint.params.at("head.b");
  std::fill(head_w.data->begin(), head_w.data->end(), 0.0f);
  std::fill(head_b.data->begin(), head_b.data->end(), 0.0f);
  auto metrics = hg::evaluate(skewed, run.checkpoint);
  CHECK(metrics.accuracy == doctest::Approx(0.6));
}

TEST_CASE("a hand-built perfect predictor scores accuracy 1.0") {
  // L=1 mean-pool model whose head reads the one-hot class feature.
  std::vector<hg::Graph> data;
  for (int i = 0; i < 6; ++i) {
    hg::Graph g;
    g.num_nodes = 1;
    g.feat_dim = 2;
    g.features = {i % 2 == 0 ? 1.0 : 0.0, i % 2 == 0 ? 0.0 : 1.0};
    g.label = i % 2;
    data.push_back(g);
  }
  TrainConfig cfg;
  cfg.task = hg::TaskKind::graph_class;
  cfg.readout = hg::ReadoutKind::mean;
  cfg.backbone.kind = hg::BackboneKind::gcn;
  cfg.backbone.layers = 1;
  cfg.backbone.hidden = 2;
  cfg.feat_dim = 2;
  cfg.num_classes = 2;
  cfg.canonicalize();

  hg::Checkpoint<float> ckpt;
  ckpt.config_json = hg::config_to_json(cfg);
  ckpt.params.add("backbone.embed.w",
                  Tensor<float>::from({2, 2}, {1, 0, 0, 1}));
  ckpt.params.add("backbone.embed.b", Tensor<float>::zeros({2}));
  ckpt.params.add("head.w", Tensor<float>::from({2, 2}, {10, 0, 0, 10}));
  ckpt.params.add("head.b", Tensor<float>::zeros({2}));
  auto metrics = hg::evaluate(data, ckpt);
  CHECK(metrics.accuracy == doctest::Approx(1.0));
  REQUIRE(metrics.auc);
  CHECK(*metrics.auc == doctest::Approx(1.0));
}

TEST_CASE("roc_auc matches a brute-force pair count and centers at 0.5") {
  hg::Rng rng(123);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) {
    scores.push_back(rng.normal());
    labels.push_back(i % 2);
  }
  auto auc = hg::roc_auc(scores, labels);
  REQUIRE(auc);

  // Brute force: P(score_pos > score_neg) + 0.5 P(tie).
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] == 1 && labels[j] == 0) {
        ++pairs;
        if (scores[i] > scores[j]) wins += 1.0;
        else if (scores[i] == scores[j]) wins += 0.5;
      }
    }
  }
  CHECK(*auc == doctest::Approx(wins / pairs).epsilon(1e-12));
  CHECK(std::abs(*auc - 0.5) < 0.1);

  CHECK(!hg::roc_auc({1.0, 2.0}, {1, 1}));
}

TEST_CASE("checkpoint save-load-save is byte identical") {
  auto data = small_community(6, 13);
  auto cfg = small_community_config();
  cfg.epochs = 2;
  auto run = hg::train<float>(data, cfg);

  const fs::path dir = fs::temp_directory_path() / "hg_ckpt_test";
  fs::create_directories(dir);
  const std::string p1 = (dir / "a.ckpt").string();
  const std::string p2 = (dir / "b.ckpt").string();
  hg::save_checkpoint(run.checkpoint, p1);
  auto loaded = hg::load_checkpoint<float>(p1);
  hg::save_checkpoint(loaded, p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  CHECK(loaded.params.checksum() == run.checkpoint.params.checksum());
  fs::remove_all(dir);
}

TEST_CASE("activation cache round trip is bitwise and sized exactly") {
  auto data = small_community(5, 17);
  auto cfg = small_community_config();
  cfg.epochs = 1;
  auto run = hg::train<float>(data, cfg);

  auto cached = hg::collect_activations(data, run.checkpoint.params,
                                        hg::config_from_json(
                                            run.checkpoint.config_json));
  const fs::path dir = fs::temp_directory_path() / "hg_cache_test";
  fs::create_directories(dir);
  const std::string path = (dir / "acts.bin").string();
  hg::write_activation_cache(cached, path);
  auto back = hg::read_activation_cache<float>(path);
  REQUIRE(back.size() == cached.size());
  for (std::size_t g = 0; g < cached.size(); ++g) {
    CHECK(back[g].label == cached[g].label);
    for (std::size_t l = 0; l < cached[g].hist.layers(); ++l) {
      CHECK(std::memcmp(back[g].hist.slices[l].data->data(),
                        cached[g].hist.slices[l].data->data(),
                        cached[g].hist.slices[l].numel() * sizeof(float)) ==
            0);
    }
  }

  // File length: 12-byte header, then per graph 16 bytes of dims, the
  // length-prefixed label payload, and N*L*D float32 values.
  std::size_t expect = 12;
  for (const auto& g : cached) {
    nlohmann::json meta;
    if (g.label) meta["label"] = *g.label;
    if (g.node_labels) meta["node_labels"] = *g.node_labels;
    if (g.node_targets) meta["node_targets"] = *g.node_targets;
    expect += 16 + meta.dump().size() +
              g.hist.num_nodes() * g.hist.layers() * g.hist.width() * 4;
  }
  CHECK(fs::file_size(path) == expect);

  // Corrupted magic bytes are rejected.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(hg::read_activation_cache<float>(path), hg::IngestError);
  fs::remove_all(dir);
}

TEST_CASE("cached-history head forward is bitwise equal to end-to-end") {
  auto data = small_community(6, 19);
  auto cfg = small_community_config();
  cfg.epochs = 1;
  auto run = hg::train<float>(data, cfg);
  TrainConfig tcfg = hg::config_from_json(run.checkpoint.config_json);

  auto cached = hg::collect_activations(data, run.checkpoint.params, tcfg);
  std::vector<const hg::CachedGraph<float>*> refs;
  for (const auto& c : cached) refs.push_back(&c);
  auto cached_hist = hg::detail::concat_cached(refs);

  hg::GraphBatch batch = hg::batch_graphs(data);
  auto fresh_hist =
      hg::forward_with_history(batch, run.checkpoint.params, tcfg.backbone);

  REQUIRE(cached_hist.layers() == fresh_hist.layers());
  for (std::size_t l = 0; l < fresh_hist.layers(); ++l) {
    CHECK(std::memcmp(cached_hist.slices[l].data->data(),
                      fresh_hist.slices[l].data->data(),
                      fresh_hist.slices[l].numel() * sizeof(float)) == 0);
  }

  auto out_cached = hg::head_forward_on_history(cached_hist,
                                                run.checkpoint.params, tcfg);
  auto out_fresh = hg::head_forward_on_history(fresh_hist,
                                               run.checkpoint.params, tcfg);
  CHECK(std::memcmp(out_cached.data->data(), out_fresh.data->data(),
                    out_fresh.numel() * sizeof(float)) == 0);
}

TEST_CASE("finetune updates only head parameters and records metrics") {
  auto data = small_community(8, 23);
  auto base_cfg = small_community_config();
  base_cfg.readout = hg::ReadoutKind::mean;
  base_cfg.epochs = 2;
  auto base = hg::train<float>(data, base_cfg);
  const auto backbone_checksum = base.checkpoint.params.checksum();

  auto cached = hg::collect_activations(
      data, base.checkpoint.params,
      hg::config_from_json(base.checkpoint.config_json));

  TrainConfig ft_cfg = small_community_config();
  ft_cfg.mode = hg::TrainMode::ft_frozen;
  ft_cfg.epochs = 3;
  auto ft = hg::finetune_head(cached, ft_cfg);

  // The source backbone is untouched and the FT store holds head-side
  // parameters only.
  CHECK(base.checkpoint.params.checksum() == backbone_checksum);
  for (const auto& name : ft.checkpoint.params.names()) {
    CHECK((name.rfind("pool.", 0) == 0 || name.rfind("head.", 0) == 0));
  }
  CHECK(ft.history.size() == 3);
  for (const auto& em : ft.history) {
    CHECK(std::isfinite(em.train_loss));
    REQUIRE(!em.alpha.empty());
    double sum = 0.0;
    for (double a : em.alpha) sum += a;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("train mode ft requires a cache") {
  auto data = small_community(4, 29);
  auto cfg = small_community_config();
  cfg.mode = hg::TrainMode::ft_frozen;
  CHECK_THROWS_AS(hg::train<float>(data, cfg), hg::ConfigError);
}
