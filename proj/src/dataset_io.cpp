#include "hg/dataset_io.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hg/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hg {

namespace {

Graph graph_from_json(const json& j, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no) + ": ";
  try {
    Graph g;
    g.num_nodes = j.at("num_nodes").get<std::size_t>();
    if (g.num_nodes == 0) {
      throw IngestError(where + "num_nodes must be >= 1");
    }
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) {
        throw IngestError(where + "edge is not a pair");
      }
      const std::size_t u = e[0].get<std::size_t>();
      const std::size_t v = e[1].get<std::size_t>();
      if (u >= g.num_nodes || v >= g.num_nodes) {
        throw IngestError(where + "edge [" + std::to_string(u) + ", " +
                          std::to_string(v) + "] out of range for " +
                          std::to_string(g.num_nodes) + " nodes");
      }
      g.edges.emplace_back(u, v);
    }
    const auto& feats = j.at("features");
    if (feats.size() != g.num_nodes) {
      throw IngestError(where + "features has " +
                        std::to_string(feats.size()) + " rows for " +
                        std::to_string(g.num_nodes) + " nodes");
    }
    g.feat_dim = feats.empty() ? 0 : feats[0].size();
    for (const auto& row : feats) {
      if (row.size() != g.feat_dim) {
        throw IngestError(where + "ragged feature rows");
      }
      for (const auto& v : row) g.features.push_back(v.get<double>());
    }
    if (j.contains("label")) g.label = j["label"].get<int>();
    if (j.contains("node_labels")) {
      g.node_labels = j["node_labels"].get<std::vector<int>>();
    }
    if (j.contains("node_targets")) {
      g.node_targets = j["node_targets"].get<std::vector<double>>();
    }
    g.validate();
    return g;
  } catch (const json::exception& e) {
    throw IngestError(where + e.what());
  }
}

}  // namespace

std::vector<Graph> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IngestError("cannot open " + path);
  }
  std::vector<Graph> graphs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IngestError("line " + std::to_string(line_no) + ": " + e.what());
    }
    graphs.push_back(graph_from_json(j, line_no));
  }
  return graphs;
}

void save_jsonl(const std::vector<Graph>& graphs, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IngestError("cannot write " + path);
  }
  for (const Graph& g : graphs) {
    json j;
    j["num_nodes"] = g.num_nodes;
    j["edges"] = json::array();
    for (const auto& [u, v] : g.edges) j["edges"].push_back({u, v});
    j["features"] = json::array();
    for (std::size_t v = 0; v < g.num_nodes; ++v) {
      json row = json::array();
      for (std::size_t k = 0; k < g.feat_dim; ++k) {
        row.push_back(g.features[v * g.feat_dim + k]);
      }
      j["features"].push_back(row);
    }
    if (g.label) j["label"] = *g.label;
    if (g.node_labels) j["node_labels"] = *g.node_labels;
    if (g.node_targets) j["node_targets"] = *g.node_targets;
    out << j.dump() << "\n";
  }
}

namespace {

std::string find_tu_prefix(const fs::path& dir) {
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = "_A.txt";
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      return name.substr(0, name.size() - suffix.size());
    }
  }
  throw IngestError("no *_A.txt edge file found in " + dir.string());
}

std::vector<std::string> read_lines(const fs::path& file) {
  std::ifstream in(file);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
      line.pop_back();
    }
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::vector<Graph> load_tu_format(const std::string& dir_path) {
  const fs::path dir(dir_path);
  if (!fs::is_directory(dir)) {
    throw IngestError(dir_path + " is not a directory");
  }
  const std::string prefix = find_tu_prefix(dir);
  const fs::path edges_file = dir / (prefix + "_A.txt");
  const fs::path indicator_file = dir / (prefix + "_graph_indicator.txt");
  const fs::path labels_file = dir / (prefix + "_graph_labels.txt");
  const fs::path node_labels_file = dir / (prefix + "_node_labels.txt");
  if (!fs::exists(indicator_file)) {
    throw IngestError(indicator_file.filename().string() +
                      ": graph indicator file absent");
  }
  if (!fs::exists(labels_file)) {
    throw IngestError(labels_file.filename().string() +
                      ": graph labels file absent");
  }

  // Graph membership, 1-indexed in the file.
  std::vector<std::size_t> node_graph;
  for (const std::string& line : read_lines(indicator_file)) {
    node_graph.push_back(std::stoull(line));
  }
  const std::size_t num_nodes = node_graph.size();
  std::size_t num_graphs = 0;
  for (std::size_t g : node_graph) num_graphs = std::max(num_graphs, g);
  for (std::size_t i = 0; i < num_nodes; ++i) {
    if (node_graph[i] == 0 || node_graph[i] > num_graphs) {
      throw IngestError("node " + std::to_string(i + 1) +
                        " references nonexistent graph id " +
                        std::to_string(node_graph[i]));
    }
  }

  // Graph labels remapped to a contiguous 0-based range.
  std::vector<int> raw_labels;
  for (const std::string& line : read_lines(labels_file)) {
    raw_labels.push_back(std::stoi(line));
  }
  if (raw_labels.size() != num_graphs) {
    throw IngestError("graph labels file has " +
                      std::to_string(raw_labels.size()) + " entries for " +
                      std::to_string(num_graphs) + " graphs");
  }
  std::set<int> label_values(raw_labels.begin(), raw_labels.end());
  std::map<int, int> label_map;
  int next = 0;
  for (int v : label_values) label_map[v] = next++;

  // Optional node labels drive a global one-hot feature encoding.
  std::vector<int> node_label_ids;
  std::map<int, std::size_t> node_label_map;
  const bool have_node_labels = fs::exists(node_labels_file);
  if (have_node_labels) {
    std::vector<int> raw;
    for (const std::string& line : read_lines(node_labels_file)) {
      raw.push_back(std::stoi(line));
    }
    if (raw.size() != num_nodes) {
      throw IngestError("node labels file has " + std::to_string(raw.size()) +
                        " entries for " + std::to_string(num_nodes) +
                        " nodes");
    }
    std::set<int> values(raw.begin(), raw.end());
    std::size_t idx = 0;
    for (int v : values) node_label_map[v] = idx++;
    node_label_ids = std::move(raw);
  }
  const std::size_t feat_dim =
      have_node_labels ? node_label_map.size() : std::size_t{1};

  std::vector<Graph> graphs(num_graphs);
  std::vector<std::size_t> local_index(num_nodes);
  for (std::size_t i = 0; i < num_nodes; ++i) {
    Graph& g = graphs[node_graph[i] - 1];
    local_index[i] = g.num_nodes++;
  }
  for (std::size_t gi = 0; gi < num_graphs; ++gi) {
    Graph& g = graphs[gi];
    if (g.num_nodes == 0) {
      throw IngestError("graph " + std::to_string(gi + 1) + " has no nodes");
    }
    g.feat_dim = feat_dim;
    g.features.assign(g.num_nodes * feat_dim, 0.0);
    g.label = label_map.at(raw_labels[gi]);
    if (have_node_labels) g.node_labels = std::vector<int>(g.num_nodes, 0);
  }
  for (std::size_t i = 0; i < num_nodes; ++i) {
    Graph& g = graphs[node_graph[i] - 1];
    if (have_node_labels) {
      const std::size_t one = node_label_map.at(node_label_ids[i]);
      g.features[local_index[i] * feat_dim + one] = 1.0;
      (*g.node_labels)[local_index[i]] = node_label_ids[i];
    } else {
      g.features[local_index[i]] = 1.0;
    }
  }

  // Edges: 1-indexed "i, j" lines, typically listed in both directions.
  std::size_t line_no = 0;
  std::vector<std::set<std::pair<std::size_t, std::size_t>>> seen(num_graphs);
  for (const std::string& line : read_lines(edges_file)) {
    ++line_no;
    std::istringstream is(line);
    std::size_t u = 0, v = 0;
    char comma = 0;
    if (!(is >> u >> comma >> v) || comma != ',') {
      throw IngestError(edges_file.filename().string() + " line " +
                        std::to_string(line_no) + ": expected 'i, j'");
    }
    if (u == 0 || v == 0 || u > num_nodes || v > num_nodes) {
      throw IngestError(edges_file.filename().string() + " line " +
                        std::to_string(line_no) + ": node index out of range");
    }
    --u;
    --v;
    if (node_graph[u] != node_graph[v]) {
      throw IngestError(edges_file.filename().string() + " line " +
                        std::to_string(line_no) +
                        ": edge crosses graph boundary");
    }
    if (u == v) continue;
    const std::size_t gi = node_graph[u] - 1;
    const auto key = std::minmax(local_index[u], local_index[v]);
    if (seen[gi].insert(key).second) {
      graphs[gi].edges.emplace_back(key.first, key.second);
    }
  }
  for (const Graph& g : graphs) g.validate();
  return graphs;
}

std::vector<Graph> load_dataset(const std::string& path) {
  if (fs::is_directory(path)) return load_tu_format(path);
  return load_jsonl(path);
}

}  // namespace hg
