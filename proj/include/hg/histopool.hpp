#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hg/backbone.hpp"
#include "hg/params.hpp"
#include "hg/rng.hpp"
#include "hg/tensor.hpp"

namespace hg {

enum class MixMode { fixed, learnable };
enum class TaskMode { graph, node };

struct PoolConfig {
  std::size_t hidden = 32;  // D
  std::size_t heads = 4;    // H
  bool use_residual = true;
  bool use_layernorm = true;
  double norm_epsilon = 1e-6;  // signed-normalization fallback threshold
  double ln_epsilon = 1e-5;
  MixMode mix_mode = MixMode::learnable;
  double mix_alpha = 0.5;  // value used in fixed mode
  TaskMode task_mode = TaskMode::graph;

  // Ablation toggles and attention knobs.
  bool use_layerwise_attention = true;  // off -> uniform layer weights
  bool use_signed_norm = true;          // off -> raw scores used as weights
  bool use_nodewise_attention = true;   // off -> pooled rows pass through
  std::optional<std::vector<double>> alpha_override;  // pinned layer weights
  double p_mha = 0.0;   // dropout on attention probabilities
  double p_mask = 0.0;  // dropout on admissible attention pairs
  bool zero_attention = false;

  void validate() const {
    if (hidden == 0 || heads == 0 || hidden % heads != 0) {
      throw ConfigError("pool: hidden " + std::to_string(hidden) +
                        " not divisible by heads " + std::to_string(heads));
    }
    if (mix_mode == MixMode::fixed &&
        (mix_alpha < 0.0 || mix_alpha > 1.0)) {
      throw ConfigError("pool: fixed mix weight " +
                        std::to_string(mix_alpha) + " outside [0, 1]");
    }
    if (!(norm_epsilon > 0.0)) {
      throw ConfigError("pool: norm_epsilon must be positive");
    }
  }
};

/// Runtime knobs for a forward pass (dropout only fires when training).
struct ForwardCtx {
  bool training = false;
  Rng* rng = nullptr;
};

/// Per-graph layer weights produced by the layer-wise attention stage.
template <typename T>
struct LayerwiseResult {
  Tensor<T> alpha;   // [num_graphs x L], rows sum to 1 after normalization
  Tensor<T> raw_c;   // [num_graphs x L] pre-normalization scores
  Tensor<T> pooled;  // [N x D] cross-layer pooled node embeddings
};

namespace pool_names {
inline std::string emb_w() { return "pool.emb.w"; }
inline std::string emb_b() { return "pool.emb.b"; }
inline std::string wq() { return "pool.wq"; }
inline std::string wk() { return "pool.wk"; }
inline std::string mhsa_head(std::size_t h, const std::string& leaf) {
  return "pool.mhsa.h" + std::to_string(h) + "." + leaf;
}
inline std::string mhsa_wo() { return "pool.mhsa.wo"; }
inline std::string mhsa_bo() { return "pool.mhsa.bo"; }
inline std::string ln_gamma() { return "pool.ln.gamma"; }
inline std::string ln_beta() { return "pool.ln.beta"; }
inline std::string mix_logit() { return "pool.mix.logit"; }
}  // namespace pool_names

template <typename T>
void init_pool_params(ParamStore<T>& store, const PoolConfig& cfg,
                      std::size_t history_width, Rng& rng) {
  cfg.validate();
  using namespace pool_names;
  const std::size_t d = cfg.hidden;
  store.add(emb_w(), glorot<T>(history_width, d, rng));
  store.add(emb_b(), Tensor<T>::zeros({d}));
  store.add(wq(), glorot<T>(d, d, rng));
  store.add(wk(), glorot<T>(d, d, rng));
  const std::size_t dh = d / cfg.heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    store.add(mhsa_head(h, "wq"), glorot<T>(d, dh, rng));
    store.add(mhsa_head(h, "wk"), glorot<T>(d, dh, rng));
    store.add(mhsa_head(h, "wv"), glorot<T>(d, dh, rng));
  }
  store.add(mhsa_wo(), glorot<T>(d, d, rng));
  store.add(mhsa_bo(), Tensor<T>::zeros({d}));
  store.add(ln_gamma(), Tensor<T>::full({d}, T(1)));
  store.add(ln_beta(), Tensor<T>::zeros({d}));
  if (cfg.mix_mode == MixMode::learnable) {
    store.add(mix_logit(), Tensor<T>::zeros({1}));
  }
}

/// Fixed sinusoidal layer-position table [L x D]:
/// row l holds sin(l / 10000^(2k/D)) at even columns and the matching cos
/// at odd columns.
template <typename T>
Tensor<T> positional_encoding(std::size_t layers, std::size_t width) {
  if (width % 2 != 0) {
    throw ConfigError("positional_encoding: width " + std::to_string(width) +
                      " must be even");
  }
  Tensor<T> pe = Tensor<T>::zeros({layers, width});
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t k = 0; k < width / 2; ++k) {
      const double angle =
          static_cast<double>(l) /
          std::pow(10000.0, 2.0 * static_cast<double>(k) /
                                static_cast<double>(width));
      pe.at(l, 2 * k) = static_cast<T>(std::sin(angle));
      pe.at(l, 2 * k + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

/// Applies the shared history projection to every layer slice and adds the
/// layer's positional-encoding row.
template <typename T>
std::vector<Tensor<T>> project_history(const ActivationHistory<T>& hist,
                                       const ParamStore<T>& store,
                                       const PoolConfig& cfg) {
  using namespace pool_names;
  const std::size_t L = hist.layers();
  Tensor<T> pe = positional_encoding<T>(L, cfg.hidden);
  std::vector<Tensor<T>> projected;
  projected.reserve(L);
  for (std::size_t l = 0; l < L; ++l) {
    Tensor<T> x =
        add_rowvec(matmul(hist.slices[l], store.at(emb_w())), store.at(emb_b()));
    std::vector<T> row(cfg.hidden);
    for (std::size_t j = 0; j < cfg.hidden; ++j) row[j] = pe.at(l, j);
    projected.push_back(add_rowvec(x, Tensor<T>::from({cfg.hidden}, row)));
  }
  return projected;
}

/// Signed normalization of one score vector: alpha_l = c_l / sum(c), with a
/// uniform 1/L fallback when |sum(c)| < eps. The result always sums to 1.
inline std::vector<double> signed_normalize(const std::vector<double>& c,
                                            double eps) {
  if (c.empty()) {
    throw ContractError("signed_normalize: empty score vector");
  }
  double s = 0.0;
  for (double v : c) s += v;
  std::vector<double> alpha(c.size());
  if (std::abs(s) < eps) {
    std::fill(alpha.begin(), alpha.end(), 1.0 / static_cast<double>(c.size()));
  } else {
    for (std::size_t i = 0; i < c.size(); ++i) alpha[i] = c[i] / s;
  }
  return alpha;
}

/// Stage one: scores every history layer against the final-layer query,
/// averages scores across the nodes of each graph, normalizes with signed
/// weights, and mixes the layer slices per node.
template <typename T>
LayerwiseResult<T> layerwise_attention(const std::vector<Tensor<T>>& xt,
                                       const std::vector<std::size_t>& ids,
                                       std::size_t num_graphs,
                                       const ParamStore<T>& store,
                                       const PoolConfig& cfg) {
  using namespace pool_names;
  if (xt.empty()) {
    throw ContractError("layerwise_attention: empty history");
  }
  const std::size_t L = xt.size();
  LayerwiseResult<T> res;

  if (cfg.alpha_override || !cfg.use_layerwise_attention) {
    std::vector<double> weights =
        cfg.alpha_override ? *cfg.alpha_override
                           : std::vector<double>(L, 1.0 / static_cast<double>(L));
    if (weights.size() != L) {
      throw ConfigError("layerwise_attention: pinned weights hold " +
                        std::to_string(weights.size()) + " entries for " +
                        std::to_string(L) + " layers");
    }
    std::vector<T> rows(num_graphs * L);
    for (std::size_t g = 0; g < num_graphs; ++g) {
      for (std::size_t l = 0; l < L; ++l) {
        rows[g * L + l] = static_cast<T>(weights[l]);
      }
    }
    res.alpha = Tensor<T>::from({num_graphs, L}, rows);
    res.raw_c = res.alpha;
  } else {
    Tensor<T> q = matmul(xt[L - 1], store.at(wq()));
    std::vector<Tensor<T>> per_layer;
    per_layer.reserve(L);
    for (std::size_t l = 0; l < L; ++l) {
      per_layer.push_back(rowwise_dot(q, matmul(xt[l], store.at(wk()))));
    }
    Tensor<T> scores =
        scale(concat_cols(per_layer),
              static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.hidden))));
    res.raw_c = segment_mean(scores, ids, num_graphs);
    res.alpha = cfg.use_signed_norm
                    ? signed_normalize_rows(res.raw_c,
                                            static_cast<T>(cfg.norm_epsilon))
                    : res.raw_c;
  }
  res.pooled = weighted_layer_sum(xt, res.alpha, ids);
  return res;
}

/// Stage two: multi-head self-attention across the nodes of each graph,
/// without spatial positional encodings; optional residual and LayerNorm.
template <typename T>
Tensor<T> nodewise_mhsa(const Tensor<T>& h, const std::vector<std::size_t>& ids,
                        const ParamStore<T>& store, const PoolConfig& cfg,
                        const ForwardCtx& ctx = {}) {
  using namespace pool_names;
  cfg.validate();
  const std::size_t d = cfg.hidden;
  if (h.shape.size() != 2 || h.shape[1] != d) {
    throw ShapeError("nodewise_mhsa: input " + shape_str(h.shape) +
                     " does not match hidden width " + std::to_string(d));
  }
  const std::size_t n = h.shape[0];
  const std::size_t dh = d / cfg.heads;
  const bool drop = ctx.training && ctx.rng;

  std::vector<std::uint8_t> keep;
  const std::vector<std::uint8_t>* keep_ptr = nullptr;
  if (drop && cfg.p_mask > 0.0) {
    keep.assign(n * n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j && ctx.rng->bernoulli(cfg.p_mask)) keep[i * n + j] = 0;
      }
    }
    keep_ptr = &keep;
  }

  std::vector<Tensor<T>> head_outputs;
  head_outputs.reserve(cfg.heads);
  for (std::size_t head = 0; head < cfg.heads; ++head) {
    Tensor<T> qh = matmul(h, store.at(mhsa_head(head, "wq")));
    Tensor<T> kh = matmul(h, store.at(mhsa_head(head, "wk")));
    Tensor<T> vh = matmul(h, store.at(mhsa_head(head, "wv")));
    Tensor<T> logits =
        scale(matmul_nt(qh, kh),
              static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    Tensor<T> probs =
        segment_masked_softmax(logits, ids, cfg.zero_attention, keep_ptr);
    if (drop && cfg.p_mha > 0.0) {
      probs = dropout(probs, cfg.p_mha, *ctx.rng);
    }
    head_outputs.push_back(matmul(probs, vh));
  }
  Tensor<T> z = add_rowvec(matmul(concat_cols(head_outputs), store.at(mhsa_wo())),
                           store.at(mhsa_bo()));
  if (cfg.use_residual) {
    z = add(z, h);
  }
  if (cfg.use_layernorm) {
    z = layer_norm(z, store.at(ln_gamma()), store.at(ln_beta()),
                   static_cast<T>(cfg.ln_epsilon));
  }
  return z;
}

/// Per-graph average of node rows.
template <typename T>
Tensor<T> graph_readout(const Tensor<T>& z, const std::vector<std::size_t>& ids,
                        std::size_t num_graphs) {
  return segment_mean(z, ids, num_graphs);
}

/// The full readout: project -> layer-wise attention -> node-wise attention
/// -> (graph mode) per-graph average. Exactly the composition of the
/// stage functions above.
template <typename T>
Tensor<T> histograph_forward(const ActivationHistory<T>& hist,
                             const ParamStore<T>& store, const PoolConfig& cfg,
                             const ForwardCtx& ctx = {},
                             LayerwiseResult<T>* info = nullptr) {
  cfg.validate();
  std::vector<Tensor<T>> xt = project_history(hist, store, cfg);
  LayerwiseResult<T> lw =
      layerwise_attention(xt, hist.node_graph_id, hist.num_graphs, store, cfg);
  Tensor<T> z = cfg.use_nodewise_attention
                    ? nodewise_mhsa(lw.pooled, hist.node_graph_id, store, cfg,
                                    ctx)
                    : lw.pooled;
  if (info) *info = lw;
  if (cfg.task_mode == TaskMode::node) return z;
  return graph_readout(z, hist.node_graph_id, hist.num_graphs);
}

/// Convex combination with the mean-pool branch. In learnable mode the mix
/// weight is the sigmoid of a stored logit, keeping it inside (0, 1).
template <typename T>
Tensor<T> mix_with_mean(const Tensor<T>& y_pool, const Tensor<T>& y_mean,
                        const ParamStore<T>& store, const PoolConfig& cfg) {
  using namespace pool_names;
  Tensor<T> weight = cfg.mix_mode == MixMode::learnable
                         ? sigmoid(store.at(mix_logit()))
                         : Tensor<T>::scalar(static_cast<T>(cfg.mix_alpha));
  return convex_mix(weight, y_pool, y_mean);
}

}  // namespace hg
