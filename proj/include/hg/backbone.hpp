#pragma once

#include <string>
#include <vector>

#include "hg/graph.hpp"
#include "hg/params.hpp"
#include "hg/tensor.hpp"

namespace hg {

enum class BackboneKind { gcn, gin };
enum class Nonlinearity { relu, identity };

/// Backbone shape: `layers` is the history length L; layer 0 is the input
/// embedding and layers 1..L-1 are message-passing steps.
struct BackboneConfig {
  BackboneKind kind = BackboneKind::gcn;
  std::size_t layers = 3;  // L, history slices including the embedding
  std::size_t hidden = 32;
  Nonlinearity nonlinearity = Nonlinearity::relu;
};

/// Per-layer node activations recorded during one backbone forward pass.
template <typename T>
struct ActivationHistory {
  std::vector<Tensor<T>> slices;  // L tensors of shape [N x D]
  std::vector<std::size_t> node_graph_id;
  std::size_t num_graphs = 0;

  std::size_t layers() const { return slices.size(); }
  std::size_t num_nodes() const {
    return slices.empty() ? 0 : slices[0].shape[0];
  }
  std::size_t width() const {
    return slices.empty() ? 0 : slices[0].shape[1];
  }
};

template <typename T>
Tensor<T> apply_nonlinearity(const Tensor<T>& x, Nonlinearity nl) {
  return nl == Nonlinearity::relu ? relu(x) : x;
}

/// Affine input embedding; becomes history layer 0.
template <typename T>
Tensor<T> input_embed(const Tensor<T>& features, const Tensor<T>& w,
                      const Tensor<T>& b) {
  return add_rowvec(matmul(features, w), b);
}

/// One GCN step: nonlinearity(Ahat * X * W).
template <typename T>
Tensor<T> gcn_layer(const Tensor<T>& x, const Sparse<T>& ahat,
                    const Tensor<T>& w,
                    Nonlinearity nl = Nonlinearity::relu) {
  return apply_nonlinearity(matmul(spmm(ahat, x), w), nl);
}

/// One GIN step: MLP((1 + eps) * x_v + sum of neighbor rows); the MLP is
/// two affine layers with the nonlinearity between them.
template <typename T>
Tensor<T> gin_layer(const Tensor<T>& x, const Sparse<T>& neighbor_sum,
                    const Tensor<T>& eps, const Tensor<T>& mlp_w0,
                    const Tensor<T>& mlp_b0, const Tensor<T>& mlp_w1,
                    const Tensor<T>& mlp_b1,
                    Nonlinearity nl = Nonlinearity::relu) {
  Tensor<T> self = scale_by_scalar(x, add_const(eps, T(1)));
  Tensor<T> agg = add(self, spmm(neighbor_sum, x));
  Tensor<T> hidden =
      apply_nonlinearity(add_rowvec(matmul(agg, mlp_w0), mlp_b0), nl);
  return add_rowvec(matmul(hidden, mlp_w1), mlp_b1);
}

namespace backbone_names {
inline std::string embed_w() { return "backbone.embed.w"; }
inline std::string embed_b() { return "backbone.embed.b"; }
inline std::string layer(std::size_t l, const std::string& leaf) {
  return "backbone.l" + std::to_string(l) + "." + leaf;
}
}  // namespace backbone_names

/// Registers backbone parameters (Glorot weights, zero biases, GIN eps 0).
template <typename T>
void init_backbone_params(ParamStore<T>& store, const BackboneConfig& cfg,
                          std::size_t feat_dim, Rng& rng) {
  if (cfg.layers < 1) {
    throw ConfigError("backbone: layer count must be >= 1");
  }
  using namespace backbone_names;
  store.add(embed_w(), glorot<T>(feat_dim, cfg.hidden, rng));
  store.add(embed_b(), Tensor<T>::zeros({cfg.hidden}));
  for (std::size_t l = 1; l < cfg.layers; ++l) {
    if (cfg.kind == BackboneKind::gcn) {
      store.add(layer(l, "w"), glorot<T>(cfg.hidden, cfg.hidden, rng));
    } else {
      store.add(layer(l, "eps"), Tensor<T>::zeros({1}));
      store.add(layer(l, "mlp0.w"), glorot<T>(cfg.hidden, cfg.hidden, rng));
      store.add(layer(l, "mlp0.b"), Tensor<T>::zeros({cfg.hidden}));
      store.add(layer(l, "mlp1.w"), glorot<T>(cfg.hidden, cfg.hidden, rng));
      store.add(layer(l, "mlp1.b"), Tensor<T>::zeros({cfg.hidden}));
    }
  }
}

/// Runs the backbone over a batch, recording all L activation slices.
template <typename T>
ActivationHistory<T> forward_with_history(const GraphBatch& batch,
                                          const ParamStore<T>& store,
                                          const BackboneConfig& cfg) {
  if (cfg.layers < 1) {
    throw ConfigError("backbone: layer count must be >= 1");
  }
  using namespace backbone_names;
  ActivationHistory<T> hist;
  hist.node_graph_id = batch.node_graph_id;
  hist.num_graphs = batch.num_graphs;

  Tensor<T> features = batch.feature_tensor<T>();
  Tensor<T> x =
      input_embed(features, store.at(embed_w()), store.at(embed_b()));
  hist.slices.push_back(x);

  if (cfg.layers == 1) return hist;
  if (cfg.kind == BackboneKind::gcn) {
    const Sparse<T> ahat =
        sparse_cast<T>(normalized_adjacency(batch.num_nodes, batch.edges));
    for (std::size_t l = 1; l < cfg.layers; ++l) {
      x = gcn_layer(x, ahat, store.at(layer(l, "w")), cfg.nonlinearity);
      hist.slices.push_back(x);
    }
  } else {
    const Sparse<T> adj =
        sparse_cast<T>(neighbor_sum_adjacency(batch.num_nodes, batch.edges));
    for (std::size_t l = 1; l < cfg.layers; ++l) {
      x = gin_layer(x, adj, store.at(layer(l, "eps")),
                    store.at(layer(l, "mlp0.w")), store.at(layer(l, "mlp0.b")),
                    store.at(layer(l, "mlp1.w")), store.at(layer(l, "mlp1.b")),
                    cfg.nonlinearity);
      hist.slices.push_back(x);
    }
  }
  return hist;
}

}  // namespace hg
