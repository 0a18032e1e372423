#pragma once

#include <string>
#include <vector>

#include "hg/graph.hpp"

namespace hg {

/// One JSON object per line: num_nodes, edges (pairs), features (N x D_in),
/// optional label / node_labels / node_targets. Errors carry line numbers.
std::vector<Graph> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<Graph>& graphs, const std::string& path);

/// TU-style directory: <prefix>_A.txt (comma separated, 1-indexed edges),
/// <prefix>_graph_indicator.txt, <prefix>_graph_labels.txt, and optionally
/// <prefix>_node_labels.txt (one-hot encoded into features when present,
/// constant-1 features otherwise).
std::vector<Graph> load_tu_format(const std::string& dir_path);

/// Loads a JSONL file or a TU directory, decided by what the path is.
std::vector<Graph> load_dataset(const std::string& path);

}  // namespace hg
