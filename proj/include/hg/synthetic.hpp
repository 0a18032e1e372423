#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hg/graph.hpp"

namespace hg {

enum class SyntheticKind { barbell_gradient, bridge_singleton, community_classes };

SyntheticKind parse_synthetic_kind(const std::string& name);

struct SyntheticParams {
  std::size_t count = 1;  // graphs to generate
  std::size_t n = 8;      // clique size / ER size / community size
  double p = 0.3;         // ER edge probability (bridge_singleton)
  double noise = 0.8;     // feature noise sigma (community_classes)
};

/// Seeded synthetic task generators.
///
///  - barbell_gradient: two n-cliques joined by one edge; 1-d node features
///    drawn from {-1, 0, 1}; per-node regression target is the discrete
///    neighbor-averaged feature gradient (1/deg) * sum_u (x_u - x_v).
///  - bridge_singleton: an Erdos-Renyi G(n, p) subgraph joined by a single
///    edge to one extra node whose second feature channel carries the
///    graph label (+1 -> class 1, -1 -> class 0).
///  - community_classes: balanced two-class set; each graph has two planted
///    communities of n nodes, class 0 dense (p_in 0.6 / p_out 0.06) and
///    class 1 sparse (p_in 0.3 / p_out 0.03); node features are a noisy
///    community indicator and node labels are the community ids.
std::vector<Graph> generate_synthetic(SyntheticKind kind,
                                      const SyntheticParams& params,
                                      std::uint64_t seed);

}  // namespace hg
