#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hg/backbone.hpp"
#include "hg/baselines.hpp"
#include "hg/error.hpp"
#include "hg/graph.hpp"
#include "hg/histopool.hpp"
#include "hg/loss.hpp"
#include "hg/params.hpp"

namespace hg {

enum class TrainMode { end_to_end, ft_frozen, full_ft };

TrainMode parse_train_mode(const std::string& name);
std::string train_mode_name(TrainMode mode);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
  TaskKind task = TaskKind::graph_class;
  ReadoutKind readout = ReadoutKind::histograph;
  TrainMode mode = TrainMode::end_to_end;
  BackboneConfig backbone;
  PoolConfig pool;
  double val_fraction = 0.2;

  // Filled from the dataset when zero; carried in checkpoints.
  std::size_t feat_dim = 0;
  std::size_t num_classes = 0;

  /// Aligns derived fields: the pool shares the backbone width and the
  /// pool task mode follows the training task.
  void canonicalize() {
    pool.hidden = backbone.hidden;
    pool.task_mode =
        task == TaskKind::graph_class ? TaskMode::graph : TaskMode::node;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (backbone.layers < 1) throw ConfigError("train: layers must be >= 1");
    if (readout == ReadoutKind::histograph) pool.validate();
  }
};

namespace head_names {
inline std::string w() { return "head.w"; }
inline std::string b() { return "head.b"; }
}  // namespace head_names

inline std::size_t head_input_width(const TrainConfig& cfg) {
  return cfg.readout == ReadoutKind::jk_concat
             ? cfg.backbone.layers * cfg.backbone.hidden
             : cfg.backbone.hidden;
}

inline std::size_t output_width(const TrainConfig& cfg) {
  return cfg.task == TaskKind::node_regress ? 1 : cfg.num_classes;
}

template <typename T>
void init_model_params(ParamStore<T>& store, const TrainConfig& cfg,
                       Rng& rng) {
  cfg.validate();
  if (cfg.feat_dim == 0 || output_width(cfg) == 0) {
    throw ConfigError("model: feat_dim / output width not resolved");
  }
  init_backbone_params(store, cfg.backbone, cfg.feat_dim, rng);
  if (cfg.readout == ReadoutKind::histograph) {
    init_pool_params(store, cfg.pool, cfg.backbone.hidden, rng);
  }
  store.add(head_names::w(),
            glorot<T>(head_input_width(cfg), output_width(cfg), rng));
  store.add(head_names::b(), Tensor<T>::zeros({output_width(cfg)}));
}

/// Readout + prediction head over an activation history. This is the whole
/// forward pass downstream of the backbone, shared verbatim by end-to-end
/// training and by head-only fine-tuning on cached histories.
template <typename T>
Tensor<T> head_forward_on_history(const ActivationHistory<T>& hist,
                                  const ParamStore<T>& store,
                                  const TrainConfig& cfg,
                                  const ForwardCtx& ctx = {},
                                  LayerwiseResult<T>* info = nullptr) {
  const bool graph_task = cfg.task == TaskKind::graph_class;
  Tensor<T> feature;
  switch (cfg.readout) {
    case ReadoutKind::histograph: {
      Tensor<T> pooled = histograph_forward(hist, store, cfg.pool, ctx, info);
      Tensor<T> mean_branch =
          graph_task ? segment_mean(hist.slices.back(), hist.node_graph_id,
                                    hist.num_graphs)
                     : hist.slices.back();
      feature = mix_with_mean(pooled, mean_branch, store, cfg.pool);
      break;
    }
    case ReadoutKind::mean:
    case ReadoutKind::sum:
    case ReadoutKind::max:
      feature = graph_task ? pool_last_layer(cfg.readout, hist)
                           : hist.slices.back();
      break;
    case ReadoutKind::jk_concat:
      feature = graph_task ? jk_concat(hist) : concat_cols(hist.slices);
      break;
  }
  return add_rowvec(matmul(feature, store.at(head_names::w())),
                    store.at(head_names::b()));
}

/// Full forward pass: backbone history, readout, prediction head.
template <typename T>
Tensor<T> model_forward(const GraphBatch& batch, const ParamStore<T>& store,
                        const TrainConfig& cfg, const ForwardCtx& ctx = {},
                        LayerwiseResult<T>* info = nullptr,
                        ActivationHistory<T>* hist_out = nullptr) {
  ActivationHistory<T> hist = forward_with_history(batch, store, cfg.backbone);
  Tensor<T> out = head_forward_on_history(hist, store, cfg, ctx, info);
  if (hist_out) *hist_out = hist;
  return out;
}

/// Which parameters an optimizer step may touch in the given mode.
inline bool trainable_in_mode(TrainMode mode, const std::string& name) {
  if (mode != TrainMode::ft_frozen) return true;
  return name.rfind("pool.", 0) == 0 || name.rfind("head.", 0) == 0;
}

}  // namespace hg
