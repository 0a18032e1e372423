#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hg/backbone.hpp"
#include "hg/diagnostics.hpp"
#include "hg/grad_check.hpp"
#include "hg/synthetic.hpp"

using hg::Tensor;

namespace {

Tensor<double> randn(hg::Shape shape, hg::Rng& rng) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (auto& v : *t.data) v = rng.normal();
  return t;
}

double spectral_norm(const Tensor<double>& w) {
  hg::Rng rng(1);
  auto v = randn({w.shape[1], 1}, rng);
  double sigma = 0.0;
  for (int it = 0; it < 100; ++it) {
    auto u = hg::matmul(w, v);
    double nu = 0.0;
    for (double x : *u.data) nu += x * x;
    nu = std::sqrt(nu);
    for (auto& x : *u.data) x /= nu;
    v = hg::matmul_nt(Tensor<double>::from({1, w.shape[0]}, *u.data), w);
    v.shape = {w.shape[1], 1};
    double nv = 0.0;
    for (double x : *v.data) nv += x * x;
    nv = std::sqrt(nv);
    for (auto& x : *v.data) x /= nv;
    sigma = nu;
  }
  return sigma;
}

hg::Graph permuted(const hg::Graph& g, const std::vector<std::size_t>& perm) {
  hg::Graph p;
  p.num_nodes = g.num_nodes;
  p.feat_dim = g.feat_dim;
  p.features.resize(g.features.size());
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    for (std::size_t j = 0; j < g.feat_dim; ++j) {
      p.features[perm[v] * g.feat_dim + j] = g.features[v * g.feat_dim + j];
    }
  }
  for (const auto& [u, v] : g.edges) p.edges.emplace_back(perm[u], perm[v]);
  p.label = g.label;
  return p;
}

}  // namespace

TEST_CASE("input embed identity, bias broadcast, gradient") {
  auto f = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto zero_b = Tensor<double>::zeros({2});
  CHECK(*hg::input_embed(f, eye, zero_b).data == *f.data);

  auto zero_w = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::from({3}, {0.5, -1.0, 2.0});
  auto rows = hg::input_embed(f, zero_w, b);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(rows.at(i, j) == doctest::Approx(b.at(j)));
    }
  }

  hg::Rng rng(3);
  auto ff = randn({3, 4}, rng);
  auto w = randn({4, 5}, rng);
  auto bias = randn({5}, rng);
  const double err = hg::grad_check<double>(
      [](std::vector<Tensor<double>>& in) {
        return hg::mean_all(hg::input_embed(in[0], in[1], in[2]));
      },
      {ff, w, bias}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("gcn layer closed forms") {
  hg::Graph pair;
  pair.num_nodes = 2;
  pair.edges = {{0, 1}};
  pair.feat_dim = 1;
  pair.features = {1.0, 1.0};
  auto ahat = hg::sparse_cast<double>(hg::normalized_adjacency(pair));
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto out = hg::gcn_layer(eye, ahat, eye);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(out.at(i, j) == doctest::Approx(0.5));
    }
  }

  // Isolated node: the self-loop is the only message.
  hg::Graph lone;
  lone.num_nodes = 1;
  lone.feat_dim = 1;
  lone.features = {1.0};
  auto a1 = hg::sparse_cast<double>(hg::normalized_adjacency(lone));
  hg::Rng rng(5);
  auto x = randn({1, 3}, rng);
  auto w = randn({3, 3}, rng);
  auto y = hg::gcn_layer(x, a1, w);
  auto direct = hg::relu(hg::matmul(x, w));
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(y.at(0, j) == doctest::Approx(direct.at(0, j)).epsilon(1e-12));
  }
}

TEST_CASE("repeated gcn application over-smooths a connected graph") {
  auto gs = hg::generate_synthetic(hg::SyntheticKind::community_classes,
                                   {1, 8, 0.3, 0.5}, 17);
  auto batch = hg::batch_graphs(gs);
  auto ahat = hg::sparse_cast<double>(
      hg::normalized_adjacency(batch.num_nodes, batch.edges));
  hg::Rng rng(7);
  auto w = randn({8, 8}, rng);
  const double sn = spectral_norm(w);
  for (auto& v : *w.data) v *= 0.9 / sn;

  auto x = randn({batch.num_nodes, 8}, rng);
  const double d0 =
      hg::mean_pairwise_distance(x, batch.node_graph_id, batch.num_graphs);
  for (int l = 0; l < 64; ++l) {
    x = hg::gcn_layer(x, ahat, w);
  }
  const double d64 =
      hg::mean_pairwise_distance(x, batch.node_graph_id, batch.num_graphs);
  CHECK(d64 < 0.1 * d0);
}

TEST_CASE("gin layer closed forms and gradient") {
  hg::Graph lone;
  lone.num_nodes = 1;
  lone.feat_dim = 1;
  lone.features = {1.0};
  auto adj1 = hg::sparse_cast<double>(
      hg::neighbor_sum_adjacency(lone.num_nodes, lone.edges));
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto zero_b = Tensor<double>::zeros({2});
  auto eps = Tensor<double>::zeros({1});
  auto x = Tensor<double>::from({1, 2}, {0.7, 0.2});
  auto y = hg::gin_layer(x, adj1, eps, eye, zero_b, eye, zero_b,
                         hg::Nonlinearity::identity);
  CHECK(y.at(0, 0) == doctest::Approx(0.7));
  CHECK(y.at(0, 1) == doctest::Approx(0.2));

  hg::Graph pair;
  pair.num_nodes = 2;
  pair.edges = {{0, 1}};
  pair.feat_dim = 1;
  pair.features = {1.0, 1.0};
  auto adj2 = hg::sparse_cast<double>(
      hg::neighbor_sum_adjacency(pair.num_nodes, pair.edges));
  auto x2 = Tensor<double>::from({2, 2}, {1, 2, 10, 20});
  auto y2 = hg::gin_layer(x2, adj2, eps, eye, zero_b, eye, zero_b,
                          hg::Nonlinearity::identity);
  CHECK(y2.at(0, 0) == doctest::Approx(11.0));  // x_v + x_u
  CHECK(y2.at(0, 1) == doctest::Approx(22.0));
  CHECK(y2.at(1, 0) == doctest::Approx(11.0));
  CHECK(y2.at(1, 1) == doctest::Approx(22.0));

  hg::Rng rng(11);
  auto xr = randn({2, 3}, rng);
  auto w0 = randn({3, 3}, rng);
  auto b0 = randn({3}, rng);
  auto w1 = randn({3, 3}, rng);
  auto b1 = randn({3}, rng);
  auto eps_r = Tensor<double>::from({1}, {0.3});
  const double err = hg::grad_check<double>(
      [&adj2](std::vector<Tensor<double>>& in) {
        return hg::mean_all(hg::gin_layer(in[0], adj2, in[1], in[2], in[3],
                                          in[4], in[5]));
      },
      {xr, eps_r, w0, b0, w1, b1}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("history contracts: base case, composition, shapes") {
  auto gs = hg::generate_synthetic(hg::SyntheticKind::community_classes,
                                   {3, 5, 0.3, 0.5}, 23);
  auto batch = hg::batch_graphs(gs);
  hg::Rng rng(29);

  hg::BackboneConfig cfg;
  cfg.kind = hg::BackboneKind::gcn;
  cfg.layers = 1;
  cfg.hidden = 6;
  hg::ParamStore<double> store1;
  hg::init_backbone_params(store1, cfg, batch.feat_dim, rng);
  auto h1 = hg::forward_with_history(batch, store1, cfg);
  CHECK(h1.layers() == 1);
  auto embed = hg::input_embed(batch.feature_tensor<double>(),
                               store1.at("backbone.embed.w"),
                               store1.at("backbone.embed.b"));
  CHECK(*h1.slices[0].data == *embed.data);

  hg::BackboneConfig cfg4 = cfg;
  cfg4.layers = 4;
  hg::Rng rng2(29);
  hg::ParamStore<double> store4;
  hg::init_backbone_params(store4, cfg4, batch.feat_dim, rng2);
  auto h4 = hg::forward_with_history(batch, store4, cfg4);
  CHECK(h4.layers() == 4);
  CHECK(h4.num_nodes() == batch.num_nodes);
  CHECK(h4.width() == 6);

  // Slice 0 does not depend on the configured depth.
  CHECK(*h4.slices[0].data == *h1.slices[0].data);

  // Each slice equals applying the layers sequentially from slice 0.
  auto ahat = hg::sparse_cast<double>(
      hg::normalized_adjacency(batch.num_nodes, batch.edges));
  auto x = h4.slices[0];
  for (std::size_t l = 1; l < 4; ++l) {
    x = hg::gcn_layer(x, ahat,
                      store4.at("backbone.l" + std::to_string(l) + ".w"));
    CHECK(*x.data == *h4.slices[l].data);
  }
}

TEST_CASE("backbone forward is equivariant to node permutations") {
  auto gs = hg::generate_synthetic(hg::SyntheticKind::community_classes,
                                   {2, 4, 0.3, 0.5}, 31);
  hg::Rng rng(37);
  hg::BackboneConfig cfg;
  cfg.kind = hg::BackboneKind::gin;
  cfg.layers = 3;
  cfg.hidden = 8;
  hg::ParamStore<double> store;
  hg::init_backbone_params(store, cfg, gs[0].feat_dim, rng);

  // Permute the nodes of the first graph only.
  std::vector<std::size_t> perm(gs[0].num_nodes);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  auto gs_perm = gs;
  gs_perm[0] = permuted(gs[0], perm);

  auto base = hg::forward_with_history(hg::batch_graphs(gs), store, cfg);
  auto moved = hg::forward_with_history(hg::batch_graphs(gs_perm), store, cfg);
  for (std::size_t l = 0; l < 3; ++l) {
    for (std::size_t v = 0; v < gs[0].num_nodes; ++v) {
      for (std::size_t j = 0; j < 8; ++j) {
        CHECK(moved.slices[l].at(perm[v], j) ==
              doctest::Approx(base.slices[l].at(v, j)).epsilon(1e-12));
      }
    }
  }
}
