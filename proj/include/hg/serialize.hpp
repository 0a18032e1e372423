#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hg/backbone.hpp"
#include "hg/error.hpp"
#include "hg/params.hpp"

namespace hg {

namespace binio {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw IngestError(std::string("truncated file while reading ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

inline float read_f32(std::istream& in, const char* what) {
  const std::uint32_t bits = read_u32(in, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void write_bytes(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_bytes(std::istream& in, const char* what) {
  const std::uint32_t n = read_u32(in, what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) {
    throw IngestError(std::string("truncated file while reading ") + what);
  }
  return s;
}

}  // namespace binio

// ---------------------------------------------------------------------------
// Activation cache: magic "HGAC", version u32, graph count u32; per graph
// N, L, D (u32 each), a label payload (length-prefixed JSON bytes), then
// N*L*D float32 values in (node, layer, feature) row-major order.
// ---------------------------------------------------------------------------

template <typename T>
struct CachedGraph {
  ActivationHistory<T> hist;  // single-graph history
  std::optional<int> label;
  std::optional<std::vector<int>> node_labels;
  std::optional<std::vector<double>> node_targets;
};

template <typename T>
void write_activation_cache(const std::vector<CachedGraph<T>>& graphs,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IngestError("cannot write cache file " + path);
  }
  out.write("HGAC", 4);
  binio::write_u32(out, 1);
  binio::write_u32(out, static_cast<std::uint32_t>(graphs.size()));
  for (const auto& g : graphs) {
    const std::uint32_t n = static_cast<std::uint32_t>(g.hist.num_nodes());
    const std::uint32_t layers = static_cast<std::uint32_t>(g.hist.layers());
    const std::uint32_t width = static_cast<std::uint32_t>(g.hist.width());
    binio::write_u32(out, n);
    binio::write_u32(out, layers);
    binio::write_u32(out, width);
    nlohmann::json meta;
    if (g.label) meta["label"] = *g.label;
    if (g.node_labels) meta["node_labels"] = *g.node_labels;
    if (g.node_targets) meta["node_targets"] = *g.node_targets;
    binio::write_bytes(out, meta.dump());
    for (std::uint32_t v = 0; v < n; ++v) {
      for (std::uint32_t l = 0; l < layers; ++l) {
        for (std::uint32_t j = 0; j < width; ++j) {
          binio::write_f32(out, static_cast<float>(g.hist.slices[l].at(v, j)));
        }
      }
    }
  }
  if (!out) {
    throw IngestError("write failure on cache file " + path);
  }
}

template <typename T>
std::vector<CachedGraph<T>> read_activation_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IngestError("cannot open cache file " + path);
  }
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "HGAC", 4) != 0) {
    throw IngestError("cache file " + path + ": bad magic bytes");
  }
  const std::uint32_t version = binio::read_u32(in, "cache version");
  if (version != 1) {
    throw IngestError("cache file " + path + ": unsupported version " +
                      std::to_string(version));
  }
  const std::uint32_t count = binio::read_u32(in, "cache graph count");
  std::vector<CachedGraph<T>> graphs;
  graphs.reserve(count);
  for (std::uint32_t gi = 0; gi < count; ++gi) {
    CachedGraph<T> g;
    const std::uint32_t n = binio::read_u32(in, "cache N");
    const std::uint32_t layers = binio::read_u32(in, "cache L");
    const std::uint32_t width = binio::read_u32(in, "cache D");
    const std::string meta_text = binio::read_bytes(in, "cache label payload");
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(meta_text);
    } catch (const nlohmann::json::exception& e) {
      throw IngestError("cache file " + path + ": label payload: " + e.what());
    }
    if (meta.contains("label")) g.label = meta["label"].get<int>();
    if (meta.contains("node_labels")) {
      g.node_labels = meta["node_labels"].get<std::vector<int>>();
    }
    if (meta.contains("node_targets")) {
      g.node_targets = meta["node_targets"].get<std::vector<double>>();
    }
    g.hist.num_graphs = 1;
    g.hist.node_graph_id.assign(n, 0);
    for (std::uint32_t l = 0; l < layers; ++l) {
      g.hist.slices.push_back(Tensor<T>::zeros({n, width}));
    }
    for (std::uint32_t v = 0; v < n; ++v) {
      for (std::uint32_t l = 0; l < layers; ++l) {
        for (std::uint32_t j = 0; j < width; ++j) {
          g.hist.slices[l].at(v, j) =
              static_cast<T>(binio::read_f32(in, "cache payload"));
        }
      }
    }
    graphs.push_back(std::move(g));
  }
  return graphs;
}

// ---------------------------------------------------------------------------
// Checkpoint: magic "HGCK", version u32, config JSON, epoch u32, metric
// history JSON, then the named-tensor table (name length + bytes, rank u32,
// dims u32[], float32 payload).
// ---------------------------------------------------------------------------

template <typename T>
struct Checkpoint {
  std::string config_json;
  std::uint32_t epoch = 0;
  std::string metrics_json = "[]";
  ParamStore<T> params;
};

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IngestError("cannot write checkpoint file " + path);
  }
  out.write("HGCK", 4);
  binio::write_u32(out, 1);
  binio::write_bytes(out, ckpt.config_json);
  binio::write_u32(out, ckpt.epoch);
  binio::write_bytes(out, ckpt.metrics_json);
  binio::write_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, tensor] : ckpt.params) {
    binio::write_bytes(out, name);
    binio::write_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (std::size_t d : tensor.shape) {
      binio::write_u32(out, static_cast<std::uint32_t>(d));
    }
    for (T v : *tensor.data) {
      binio::write_f32(out, static_cast<float>(v));
    }
  }
  if (!out) {
    throw IngestError("write failure on checkpoint file " + path);
  }
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IngestError("cannot open checkpoint file " + path);
  }
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "HGCK", 4) != 0) {
    throw IngestError("checkpoint file " + path + ": bad magic bytes");
  }
  const std::uint32_t version = binio::read_u32(in, "checkpoint version");
  if (version != 1) {
    throw IngestError("checkpoint file " + path + ": unsupported version " +
                      std::to_string(version));
  }
  Checkpoint<T> ckpt;
  ckpt.config_json = binio::read_bytes(in, "checkpoint config");
  ckpt.epoch = binio::read_u32(in, "checkpoint epoch");
  ckpt.metrics_json = binio::read_bytes(in, "checkpoint metrics");
  const std::uint32_t count = binio::read_u32(in, "checkpoint tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = binio::read_bytes(in, "tensor name");
    const std::uint32_t rank = binio::read_u32(in, "tensor rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(binio::read_u32(in, "tensor dim"));
    }
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) {
      v = static_cast<T>(binio::read_f32(in, "tensor payload"));
    }
    ckpt.params.add(name, Tensor<T>::from(shape, std::move(values)));
  }
  return ckpt;
}

}  // namespace hg
