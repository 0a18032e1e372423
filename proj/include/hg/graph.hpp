#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "hg/tensor.hpp"

namespace hg {

/// One undirected graph. Edges are stored once with u < v; propagation
/// expands both directions. Self-loops are never stored; the normalized
/// adjacency adds them on the fly.
struct Graph {
  std::size_t num_nodes = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<double> features;  // row-major [num_nodes x feat_dim]
  std::size_t feat_dim = 0;
  std::optional<int> label;
  std::optional<std::vector<int>> node_labels;
  std::optional<std::vector<double>> node_targets;  // [num_nodes]

  /// Validates index ranges, duplicate edges, and buffer sizes.
  void validate() const;

  std::size_t degree(std::size_t v) const;
};

/// Several graphs concatenated into one node space.
struct GraphBatch {
  std::size_t num_graphs = 0;
  std::size_t num_nodes = 0;
  std::size_t feat_dim = 0;
  std::vector<std::size_t> node_graph_id;    // nondecreasing
  std::vector<std::size_t> graph_offsets;    // size num_graphs + 1
  std::vector<double> features;              // stacked rows
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // remapped
  std::vector<std::optional<int>> labels;
  std::vector<std::optional<std::vector<int>>> node_labels;
  std::vector<std::optional<std::vector<double>>> node_targets;

  /// Node features as a tensor in the requested precision.
  template <typename T>
  Tensor<T> feature_tensor() const {
    std::vector<T> vals(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
      vals[i] = static_cast<T>(features[i]);
    }
    return Tensor<T>::from({num_nodes, feat_dim}, std::move(vals));
  }
};

GraphBatch batch_graphs(const std::vector<Graph>& graphs);
std::vector<Graph> unbatch_graphs(const GraphBatch& batch);

/// D^{-1/2} (A + I) D^{-1/2} over the given edge list; weight(i, j) =
/// 1/sqrt(d_i * d_j) with d the degree in A + I.
Sparse<double> normalized_adjacency(
    std::size_t num_nodes,
    const std::vector<std::pair<std::size_t, std::size_t>>& edges);

inline Sparse<double> normalized_adjacency(const Graph& g) {
  return normalized_adjacency(g.num_nodes, g.edges);
}

inline Sparse<double> normalized_adjacency(const GraphBatch& b) {
  return normalized_adjacency(b.num_nodes, b.edges);
}

/// Plain neighbor-sum operator (A expanded to both directions, no loops).
Sparse<double> neighbor_sum_adjacency(
    std::size_t num_nodes,
    const std::vector<std::pair<std::size_t, std::size_t>>& edges);

}  // namespace hg
