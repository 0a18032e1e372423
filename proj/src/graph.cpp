#include "hg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "hg/error.hpp"

namespace hg {

void Graph::validate() const {
  if (num_nodes == 0) {
    throw IngestError("graph: num_nodes must be >= 1");
  }
  if (features.size() != num_nodes * feat_dim) {
    throw IngestError("graph: feature buffer holds " +
                      std::to_string(features.size()) + " values, expected " +
                      std::to_string(num_nodes * feat_dim));
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes) {
      throw IngestError("graph: edge (" + std::to_string(u) + ", " +
                        std::to_string(v) + ") out of range for " +
                        std::to_string(num_nodes) + " nodes");
    }
    if (u == v) {
      throw IngestError("graph: self-loop at node " + std::to_string(u));
    }
    auto key = std::minmax(u, v);
    if (!seen.insert(key).second) {
      throw IngestError("graph: duplicate edge (" + std::to_string(u) + ", " +
                        std::to_string(v) + ")");
    }
  }
  if (node_labels && node_labels->size() != num_nodes) {
    throw IngestError("graph: node_labels size mismatch");
  }
  if (node_targets && node_targets->size() != num_nodes) {
    throw IngestError("graph: node_targets size mismatch");
  }
}

std::size_t Graph::degree(std::size_t v) const {
  std::size_t d = 0;
  for (const auto& [a, b] : edges) {
    if (a == v || b == v) ++d;
  }
  return d;
}

GraphBatch batch_graphs(const std::vector<Graph>& graphs) {
  if (graphs.empty()) {
    throw ContractError("batch_graphs: empty graph list");
  }
  GraphBatch batch;
  batch.num_graphs = graphs.size();
  batch.feat_dim = graphs[0].feat_dim;
  batch.graph_offsets.push_back(0);
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    const Graph& gr = graphs[g];
    gr.validate();
    if (gr.feat_dim != batch.feat_dim) {
      throw ShapeError("batch_graphs: feature width " +
                       std::to_string(gr.feat_dim) + " of graph " +
                       std::to_string(g) + " differs from " +
                       std::to_string(batch.feat_dim));
    }
    const std::size_t offset = batch.num_nodes;
    for (const auto& [u, v] : gr.edges) {
      batch.edges.emplace_back(u + offset, v + offset);
    }
    for (std::size_t v = 0; v < gr.num_nodes; ++v) {
      batch.node_graph_id.push_back(g);
    }
    batch.features.insert(batch.features.end(), gr.features.begin(),
                          gr.features.end());
    batch.labels.push_back(gr.label);
    batch.node_labels.push_back(gr.node_labels);
    batch.node_targets.push_back(gr.node_targets);
    batch.num_nodes += gr.num_nodes;
    batch.graph_offsets.push_back(batch.num_nodes);
  }
  return batch;
}

std::vector<Graph> unbatch_graphs(const GraphBatch& batch) {
  std::vector<Graph> graphs(batch.num_graphs);
  for (std::size_t g = 0; g < batch.num_graphs; ++g) {
    Graph& gr = graphs[g];
    const std::size_t begin = batch.graph_offsets[g];
    const std::size_t end = batch.graph_offsets[g + 1];
    gr.num_nodes = end - begin;
    gr.feat_dim = batch.feat_dim;
    gr.features.assign(batch.features.begin() + begin * batch.feat_dim,
                       batch.features.begin() + end * batch.feat_dim);
    gr.label = batch.labels[g];
    gr.node_labels = batch.node_labels[g];
    gr.node_targets = batch.node_targets[g];
  }
  for (const auto& [u, v] : batch.edges) {
    const std::size_t g = batch.node_graph_id[u];
    const std::size_t offset = batch.graph_offsets[g];
    graphs[g].edges.emplace_back(u - offset, v - offset);
  }
  return graphs;
}

Sparse<double> normalized_adjacency(
    std::size_t num_nodes,
    const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  if (num_nodes == 0) {
    throw ContractError("normalized_adjacency: empty graph");
  }
  std::vector<double> degree(num_nodes, 1.0);  // self-loop contributes 1
  for (const auto& [u, v] : edges) {
    degree[u] += 1.0;
    degree[v] += 1.0;
  }
  Sparse<double> adj;
  adj.rows = adj.cols = num_nodes;
  for (std::size_t v = 0; v < num_nodes; ++v) {
    adj.entries.push_back({v, v, 1.0 / degree[v]});
  }
  for (const auto& [u, v] : edges) {
    const double w = 1.0 / std::sqrt(degree[u] * degree[v]);
    adj.entries.push_back({u, v, w});
    adj.entries.push_back({v, u, w});
  }
  return adj;
}

Sparse<double> neighbor_sum_adjacency(
    std::size_t num_nodes,
    const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  Sparse<double> adj;
  adj.rows = adj.cols = num_nodes;
  for (const auto& [u, v] : edges) {
    adj.entries.push_back({u, v, 1.0});
    adj.entries.push_back({v, u, 1.0});
  }
  return adj;
}

}  // namespace hg
