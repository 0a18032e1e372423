#include "hg/synthetic.hpp"

#include <cmath>
#include <string>

#include "hg/error.hpp"
#include "hg/rng.hpp"

namespace hg {

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "barbell") return SyntheticKind::barbell_gradient;
  if (name == "barbell_gradient") return SyntheticKind::barbell_gradient;
  if (name == "bridge") return SyntheticKind::bridge_singleton;
  if (name == "bridge_singleton") return SyntheticKind::bridge_singleton;
  if (name == "community") return SyntheticKind::community_classes;
  if (name == "community_classes") return SyntheticKind::community_classes;
  throw ParamError("unknown synthetic kind '" + name + "'");
}

namespace {

void fill_barbell_targets(Graph& g) {
  g.node_targets = std::vector<double>(g.num_nodes, 0.0);
  std::vector<double> acc(g.num_nodes, 0.0);
  std::vector<std::size_t> deg(g.num_nodes, 0);
  for (const auto& [u, v] : g.edges) {
    acc[u] += g.features[v] - g.features[u];
    acc[v] += g.features[u] - g.features[v];
    ++deg[u];
    ++deg[v];
  }
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    (*g.node_targets)[v] = deg[v] ? acc[v] / static_cast<double>(deg[v]) : 0.0;
  }
}

Graph make_barbell(std::size_t n, Rng& rng) {
  Graph g;
  g.num_nodes = 2 * n;
  g.feat_dim = 1;
  g.features.resize(g.num_nodes);
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    g.features[v] = static_cast<double>(rng.uniform_index(3)) - 1.0;
  }
  for (std::size_t side = 0; side < 2; ++side) {
    const std::size_t base = side * n;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        g.edges.emplace_back(base + i, base + j);
      }
    }
  }
  g.edges.emplace_back(n - 1, n);  // the bridge
  fill_barbell_targets(g);
  return g;
}

Graph make_bridge_singleton(std::size_t n, double p, int label, Rng& rng) {
  Graph g;
  g.num_nodes = n + 1;
  g.feat_dim = 2;
  g.features.assign(g.num_nodes * 2, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    g.features[v * 2] = rng.normal();
  }
  const std::size_t singleton = n;
  g.features[singleton * 2] = rng.normal();
  g.features[singleton * 2 + 1] = label == 1 ? 1.0 : -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.bernoulli(p)) g.edges.emplace_back(i, j);
    }
  }
  g.edges.emplace_back(0, singleton);  // the bridge
  g.label = label;
  return g;
}

Graph make_community(std::size_t n, double p_in, double p_out, double noise,
                     int label, Rng& rng) {
  Graph g;
  g.num_nodes = 2 * n;
  g.feat_dim = 2;
  g.features.assign(g.num_nodes * 2, 0.0);
  g.node_labels = std::vector<int>(g.num_nodes, 0);
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    const std::size_t community = v < n ? 0 : 1;
    (*g.node_labels)[v] = static_cast<int>(community);
    g.features[v * 2 + community] = 1.0 + noise * rng.normal();
    g.features[v * 2 + (1 - community)] = noise * rng.normal();
  }
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    for (std::size_t j = i + 1; j < g.num_nodes; ++j) {
      const bool same = (i < n) == (j < n);
      if (rng.bernoulli(same ? p_in : p_out)) g.edges.emplace_back(i, j);
    }
  }
  g.label = label;
  return g;
}

}  // namespace

std::vector<Graph> generate_synthetic(SyntheticKind kind,
                                      const SyntheticParams& params,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Graph> out;
  switch (kind) {
    case SyntheticKind::barbell_gradient: {
      if (params.n < 3) {
        throw ParamError("barbell_gradient: clique size " +
                         std::to_string(params.n) + " < 3");
      }
      for (std::size_t i = 0; i < params.count; ++i) {
        out.push_back(make_barbell(params.n, rng));
      }
      break;
    }
    case SyntheticKind::bridge_singleton: {
      if (params.n < 2) {
        throw ParamError("bridge_singleton: subgraph size " +
                         std::to_string(params.n) + " < 2");
      }
      if (!(params.p > 0.0) || !(params.p < 1.0)) {
        throw ParamError("bridge_singleton: p " + std::to_string(params.p) +
                         " outside (0, 1)");
      }
      for (std::size_t i = 0; i < params.count; ++i) {
        out.push_back(make_bridge_singleton(params.n, params.p,
                                            static_cast<int>(i % 2), rng));
      }
      break;
    }
    case SyntheticKind::community_classes: {
      if (params.n < 2) {
        throw ParamError("community_classes: community size " +
                         std::to_string(params.n) + " < 2");
      }
      for (std::size_t i = 0; i < params.count; ++i) {
        const int label = static_cast<int>(i % 2);
        out.push_back(label == 0 ? make_community(params.n, 0.6, 0.06,
                                                  params.noise, 0, rng)
                                 : make_community(params.n, 0.3, 0.03,
                                                  params.noise, 1, rng));
      }
      break;
    }
  }
  for (const Graph& g : out) g.validate();
  return out;
}

}  // namespace hg
