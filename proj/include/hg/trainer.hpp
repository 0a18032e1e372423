#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "hg/config.hpp"
#include "hg/dataset_io.hpp"
#include "hg/metrics.hpp"
#include "hg/model.hpp"
#include "hg/serialize.hpp"

namespace hg {

template <typename T>
struct TrainOutput {
  Checkpoint<T> checkpoint;
  std::vector<EpochMetrics> history;
  std::size_t skipped_steps = 0;
};

namespace detail {

/// Supervision targets for one batch, by task.
template <typename T>
struct BatchTargets {
  std::vector<std::size_t> class_labels;
  Tensor<T> regression;
};

template <typename T>
BatchTargets<T> targets_from_batch(const GraphBatch& batch, TaskKind task) {
  BatchTargets<T> t;
  switch (task) {
    case TaskKind::graph_class:
      for (std::size_t g = 0; g < batch.num_graphs; ++g) {
        if (!batch.labels[g]) {
          throw ContractError("train: graph " + std::to_string(g) +
                              " has no label");
        }
        t.class_labels.push_back(static_cast<std::size_t>(*batch.labels[g]));
      }
      break;
    case TaskKind::node_class:
      for (std::size_t g = 0; g < batch.num_graphs; ++g) {
        if (!batch.node_labels[g]) {
          throw ContractError("train: graph " + std::to_string(g) +
                              " has no node labels");
        }
        for (int y : *batch.node_labels[g]) {
          t.class_labels.push_back(static_cast<std::size_t>(y));
        }
      }
      break;
    case TaskKind::node_regress: {
      std::vector<T> vals;
      for (std::size_t g = 0; g < batch.num_graphs; ++g) {
        if (!batch.node_targets[g]) {
          throw ContractError("train: graph " + std::to_string(g) +
                              " has no node targets");
        }
        for (double y : *batch.node_targets[g]) {
          vals.push_back(static_cast<T>(y));
        }
      }
      const std::size_t rows = vals.size();
      t.regression = Tensor<T>::from({rows, 1}, std::move(vals));
      break;
    }
  }
  return t;
}

template <typename T>
Tensor<T> compute_loss(const Tensor<T>& outputs, const BatchTargets<T>& t,
                       TaskKind task) {
  return loss_fn(task, outputs, t.class_labels, t.regression);
}

/// Accuracy / MSE over one batch worth of outputs; no tape involved.
template <typename T>
void accumulate_metric(const Tensor<T>& outputs, const BatchTargets<T>& t,
                       TaskKind task, double& metric_sum,
                       std::size_t& metric_count) {
  if (task == TaskKind::node_regress) {
    for (std::size_t i = 0; i < outputs.numel(); ++i) {
      const double d = static_cast<double>((*outputs.data)[i]) -
                       static_cast<double>((*t.regression.data)[i]);
      metric_sum += d * d;
      ++metric_count;
    }
    return;
  }
  const std::size_t k = outputs.cols();
  for (std::size_t i = 0; i < outputs.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (outputs.at(i, j) > outputs.at(i, best)) best = j;
    }
    metric_sum += best == t.class_labels[i] ? 1.0 : 0.0;
    ++metric_count;
  }
}

inline std::size_t loss_weight_rows(TaskKind task, const GraphBatch& batch) {
  return task == TaskKind::graph_class ? batch.num_graphs : batch.num_nodes;
}

}  // namespace detail

/// Derives feat_dim / num_classes from the dataset when unset.
inline void resolve_data_dims(const std::vector<Graph>& dataset,
                              TrainConfig& cfg) {
  if (dataset.empty()) {
    throw ContractError("train: dataset is empty");
  }
  if (cfg.feat_dim == 0) cfg.feat_dim = dataset[0].feat_dim;
  if (cfg.num_classes == 0) {
    if (cfg.task == TaskKind::node_regress) {
      cfg.num_classes = 1;
    } else {
      int max_label = 0;
      for (const Graph& g : dataset) {
        if (cfg.task == TaskKind::graph_class && g.label) {
          max_label = std::max(max_label, *g.label);
        }
        if (cfg.task == TaskKind::node_class && g.node_labels) {
          for (int y : *g.node_labels) max_label = std::max(max_label, y);
        }
      }
      cfg.num_classes = static_cast<std::size_t>(max_label) + 1;
    }
  }
}

/// Forward evaluation over a graph list in deterministic chunks.
template <typename T>
Metrics evaluate_graphs(const std::vector<Graph>& graphs,
                        const ParamStore<T>& store, const TrainConfig& cfg,
                        std::vector<double>* mean_alpha = nullptr,
                        std::vector<double>* mean_scores = nullptr) {
  Metrics result;
  if (graphs.empty()) return result;
  double loss_sum = 0.0;
  std::size_t loss_rows = 0;
  double metric_sum = 0.0;
  std::size_t metric_count = 0;
  std::vector<double> scores;
  std::vector<int> auc_labels;
  std::vector<double> alpha_sum, score_sum;
  std::size_t graph_total = 0;

  for (std::size_t begin = 0; begin < graphs.size();
       begin += cfg.batch_size) {
    const std::size_t end = std::min(graphs.size(), begin + cfg.batch_size);
    std::vector<Graph> chunk(graphs.begin() + begin, graphs.begin() + end);
    GraphBatch batch = batch_graphs(chunk);
    auto targets = detail::targets_from_batch<T>(batch, cfg.task);
    LayerwiseResult<T> info;
    const bool want_info =
        (mean_alpha || mean_scores) && cfg.readout == ReadoutKind::histograph;
    Tensor<T> out =
        model_forward(batch, store, cfg, {}, want_info ? &info : nullptr);
    Tensor<T> loss = detail::compute_loss(out, targets, cfg.task);
    const std::size_t rows = detail::loss_weight_rows(cfg.task, batch);
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(rows);
    loss_rows += rows;
    detail::accumulate_metric(out, targets, cfg.task, metric_sum,
                              metric_count);
    if (cfg.task == TaskKind::graph_class && cfg.num_classes == 2) {
      for (std::size_t g = 0; g < batch.num_graphs; ++g) {
        scores.push_back(static_cast<double>(out.at(g, 1)) -
                         static_cast<double>(out.at(g, 0)));
        auc_labels.push_back(static_cast<int>(targets.class_labels[g]));
      }
    }
    if (want_info && info.alpha.numel() > 0) {
      const std::size_t L = info.alpha.cols();
      if (alpha_sum.empty()) {
        alpha_sum.assign(L, 0.0);
        score_sum.assign(L, 0.0);
      }
      for (std::size_t g = 0; g < info.alpha.rows(); ++g) {
        for (std::size_t l = 0; l < L; ++l) {
          alpha_sum[l] += static_cast<double>(info.alpha.at(g, l));
          score_sum[l] += static_cast<double>(info.raw_c.at(g, l));
        }
      }
      graph_total += info.alpha.rows();
    }
  }
  result.loss = loss_rows ? loss_sum / static_cast<double>(loss_rows) : 0.0;
  if (cfg.task == TaskKind::node_regress) {
    result.mse = metric_count ? metric_sum / metric_count : 0.0;
  } else {
    result.accuracy = metric_count ? metric_sum / metric_count : 0.0;
  }
  if (!scores.empty()) result.auc = roc_auc(scores, auc_labels);
  if (graph_total > 0) {
    for (auto& v : alpha_sum) v /= static_cast<double>(graph_total);
    for (auto& v : score_sum) v /= static_cast<double>(graph_total);
    if (mean_alpha) *mean_alpha = alpha_sum;
    if (mean_scores) *mean_scores = score_sum;
  }
  return result;
}

template <typename T>
double task_metric(const Metrics& m, TaskKind task) {
  return task == TaskKind::node_regress ? m.mse : m.accuracy;
}

/// Deterministic training loop: seeded init, seeded shuffles, sequential
/// reductions. Aborts with a diagnostic when the loss leaves the finite
/// range; steps with non-finite gradients are skipped instead. When
/// `init_params` is given (full-ft), matching names overwrite the fresh
/// initialization; anything the new model adds keeps its fresh values.
template <typename T>
TrainOutput<T> train(const std::vector<Graph>& dataset, TrainConfig cfg,
                     const ParamStore<T>* init_params = nullptr) {
  cfg.canonicalize();
  cfg.validate();
  resolve_data_dims(dataset, cfg);
  Rng rng(cfg.seed);

  ParamStore<T> store;
  init_model_params(store, cfg, rng);
  if (init_params) {
    for (const auto& name : store.names()) {
      if (!init_params->contains(name)) continue;
      const Tensor<T>& src = init_params->at(name);
      Tensor<T>& dst = store.at(name);
      if (src.shape != dst.shape) {
        throw ContractError("train: checkpoint tensor '" + name + "' is " +
                            shape_str(src.shape) + ", model expects " +
                            shape_str(dst.shape));
      }
      *dst.data = *src.data;
    }
  }
  if (cfg.mode == TrainMode::ft_frozen) {
    throw ConfigError("train: ft mode trains from an activation cache");
  }

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t val_count = static_cast<std::size_t>(
      cfg.val_fraction * static_cast<double>(dataset.size()));
  std::vector<Graph> train_set, val_set;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i + val_count < order.size() ? train_set : val_set)
        .push_back(dataset[order[i]]);
  }
  if (train_set.empty()) {
    throw ContractError("train: no training graphs after split");
  }

  Adam<T> adam({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  auto trainable = [&cfg](const std::string& name) {
    return trainable_in_mode(cfg.mode, name);
  };

  TrainOutput<T> out;
  std::vector<std::size_t> train_order(train_set.size());
  for (std::size_t i = 0; i < train_order.size(); ++i) train_order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train_order);
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t begin = 0; begin < train_order.size();
         begin += cfg.batch_size) {
      const std::size_t end =
          std::min(train_order.size(), begin + cfg.batch_size);
      std::vector<Graph> chunk;
      chunk.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        chunk.push_back(train_set[train_order[i]]);
      }
      GraphBatch batch = batch_graphs(chunk);
      auto targets = detail::targets_from_batch<T>(batch, cfg.task);

      store.zero_grads();
      Tape<T> tape;
      TapeScope<T> scope(tape);
      ForwardCtx ctx{true, &rng};
      Tensor<T> outputs = model_forward(batch, store, cfg, ctx);
      Tensor<T> loss = detail::compute_loss(outputs, targets, cfg.task);
      if (!std::isfinite(static_cast<double>(loss.item()))) {
        throw DivergenceError(
            "train: loss diverged at epoch " + std::to_string(epoch) +
            "; last finite epoch " +
            (epoch == 0 ? std::string("none")
                        : std::to_string(epoch - 1)));
      }
      backward(loss);
      adam.step(store, trainable);
    }
    const auto t1 = std::chrono::steady_clock::now();

    EpochMetrics em;
    em.epoch = epoch;
    em.seconds = std::chrono::duration<double>(t1 - t0).count();
    Metrics train_m =
        evaluate_graphs(train_set, store, cfg, &em.alpha, &em.raw_scores);
    Metrics val_m = val_set.empty()
                        ? train_m
                        : evaluate_graphs(val_set, store, cfg);
    em.train_loss = train_m.loss;
    em.train_metric = task_metric<T>(train_m, cfg.task);
    em.val_loss = val_m.loss;
    em.val_metric = task_metric<T>(val_m, cfg.task);
    out.history.push_back(std::move(em));
  }

  out.skipped_steps = adam.skipped_steps();
  out.checkpoint.config_json = config_to_json(cfg);
  out.checkpoint.epoch = static_cast<std::uint32_t>(cfg.epochs);
  out.checkpoint.metrics_json = metrics_history_to_json(out.history);
  out.checkpoint.params = std::move(store);
  return out;
}

/// Read-only evaluation of a checkpoint on a dataset.
template <typename T>
Metrics evaluate(const std::vector<Graph>& dataset,
                 const Checkpoint<T>& ckpt) {
  TrainConfig cfg = config_from_json(ckpt.config_json);
  cfg.canonicalize();
  if (cfg.feat_dim != 0 && !dataset.empty() &&
      dataset[0].feat_dim != cfg.feat_dim) {
    throw ContractError("evaluate: dataset feature width " +
                        std::to_string(dataset[0].feat_dim) +
                        " does not match checkpoint " +
                        std::to_string(cfg.feat_dim));
  }
  return evaluate_graphs(dataset, ckpt.params, cfg);
}

/// One forward pass per graph; histories recorded for head-only training.
template <typename T>
std::vector<CachedGraph<T>> collect_activations(
    const std::vector<Graph>& dataset, const ParamStore<T>& store,
    const TrainConfig& cfg) {
  if (!dataset.empty() && dataset[0].feat_dim != cfg.feat_dim) {
    throw ContractError("cache: dataset feature width " +
                        std::to_string(dataset[0].feat_dim) +
                        " does not match checkpoint " +
                        std::to_string(cfg.feat_dim));
  }
  std::vector<CachedGraph<T>> cached;
  cached.reserve(dataset.size());
  for (const Graph& g : dataset) {
    GraphBatch single = batch_graphs({g});
    CachedGraph<T> cg;
    cg.hist = forward_with_history(single, store, cfg.backbone);
    cg.label = g.label;
    cg.node_labels = g.node_labels;
    cg.node_targets = g.node_targets;
    cached.push_back(std::move(cg));
  }
  return cached;
}

template <typename T>
void cache_activations(const std::vector<Graph>& dataset,
                       const Checkpoint<T>& ckpt, const std::string& path) {
  TrainConfig cfg = config_from_json(ckpt.config_json);
  cfg.canonicalize();
  write_activation_cache(collect_activations(dataset, ckpt.params, cfg), path);
}

namespace detail {

/// Stitches cached single-graph histories into one batch-shaped history.
template <typename T>
ActivationHistory<T> concat_cached(
    const std::vector<const CachedGraph<T>*>& graphs) {
  if (graphs.empty()) {
    throw ContractError("ft: empty cached batch");
  }
  const std::size_t L = graphs[0]->hist.layers();
  const std::size_t d = graphs[0]->hist.width();
  std::size_t total = 0;
  for (const auto* g : graphs) {
    if (g->hist.layers() != L || g->hist.width() != d) {
      throw ContractError("ft: cached histories have mismatched shapes");
    }
    total += g->hist.num_nodes();
  }
  ActivationHistory<T> hist;
  hist.num_graphs = graphs.size();
  for (std::size_t l = 0; l < L; ++l) {
    Tensor<T> slice = Tensor<T>::zeros({total, d});
    std::size_t row = 0;
    for (const auto* g : graphs) {
      const Tensor<T>& src = g->hist.slices[l];
      for (std::size_t v = 0; v < src.rows(); ++v, ++row) {
        for (std::size_t j = 0; j < d; ++j) {
          slice.at(row, j) = src.at(v, j);
        }
      }
    }
    hist.slices.push_back(std::move(slice));
  }
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    for (std::size_t v = 0; v < graphs[gi]->hist.num_nodes(); ++v) {
      hist.node_graph_id.push_back(gi);
    }
  }
  return hist;
}

template <typename T>
BatchTargets<T> targets_from_cached(
    const std::vector<const CachedGraph<T>*>& graphs, TaskKind task) {
  BatchTargets<T> t;
  switch (task) {
    case TaskKind::graph_class:
      for (const auto* g : graphs) {
        if (!g->label) {
          throw ContractError("ft: cached graph has no label");
        }
        t.class_labels.push_back(static_cast<std::size_t>(*g->label));
      }
      break;
    case TaskKind::node_class:
      for (const auto* g : graphs) {
        if (!g->node_labels) {
          throw ContractError("ft: cached graph has no node labels");
        }
        for (int y : *g->node_labels) {
          t.class_labels.push_back(static_cast<std::size_t>(y));
        }
      }
      break;
    case TaskKind::node_regress: {
      std::vector<T> vals;
      for (const auto* g : graphs) {
        if (!g->node_targets) {
          throw ContractError("ft: cached graph has no node targets");
        }
        for (double y : *g->node_targets) vals.push_back(static_cast<T>(y));
      }
      const std::size_t rows = vals.size();
      t.regression = Tensor<T>::from({rows, 1}, std::move(vals));
      break;
    }
  }
  return t;
}

template <typename T>
Metrics evaluate_cached(const std::vector<const CachedGraph<T>*>& graphs,
                        const ParamStore<T>& store, const TrainConfig& cfg,
                        std::vector<double>* mean_alpha = nullptr,
                        std::vector<double>* mean_scores = nullptr) {
  Metrics result;
  if (graphs.empty()) return result;
  double loss_sum = 0.0;
  std::size_t loss_rows = 0;
  double metric_sum = 0.0;
  std::size_t metric_count = 0;
  std::vector<double> alpha_sum, score_sum;
  std::size_t graph_total = 0;
  for (std::size_t begin = 0; begin < graphs.size();
       begin += cfg.batch_size) {
    const std::size_t end = std::min(graphs.size(), begin + cfg.batch_size);
    std::vector<const CachedGraph<T>*> chunk(graphs.begin() + begin,
                                             graphs.begin() + end);
    ActivationHistory<T> hist = concat_cached(chunk);
    auto targets = targets_from_cached(chunk, cfg.task);
    LayerwiseResult<T> info;
    const bool want_info =
        (mean_alpha || mean_scores) && cfg.readout == ReadoutKind::histograph;
    Tensor<T> out = head_forward_on_history(hist, store, cfg, {},
                                            want_info ? &info : nullptr);
    Tensor<T> loss = compute_loss(out, targets, cfg.task);
    const std::size_t rows = cfg.task == TaskKind::graph_class
                                 ? hist.num_graphs
                                 : hist.num_nodes();
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(rows);
    loss_rows += rows;
    accumulate_metric(out, targets, cfg.task, metric_sum, metric_count);
    if (want_info && info.alpha.numel() > 0) {
      const std::size_t L = info.alpha.cols();
      if (alpha_sum.empty()) {
        alpha_sum.assign(L, 0.0);
        score_sum.assign(L, 0.0);
      }
      for (std::size_t g = 0; g < info.alpha.rows(); ++g) {
        for (std::size_t l = 0; l < L; ++l) {
          alpha_sum[l] += static_cast<double>(info.alpha.at(g, l));
          score_sum[l] += static_cast<double>(info.raw_c.at(g, l));
        }
      }
      graph_total += info.alpha.rows();
    }
  }
  result.loss = loss_rows ? loss_sum / static_cast<double>(loss_rows) : 0.0;
  if (cfg.task == TaskKind::node_regress) {
    result.mse = metric_count ? metric_sum / metric_count : 0.0;
  } else {
    result.accuracy = metric_count ? metric_sum / metric_count : 0.0;
  }
  if (graph_total > 0) {
    for (auto& v : alpha_sum) v /= static_cast<double>(graph_total);
    for (auto& v : score_sum) v /= static_cast<double>(graph_total);
    if (mean_alpha) *mean_alpha = alpha_sum;
    if (mean_scores) *mean_scores = score_sum;
  }
  return result;
}

}  // namespace detail

/// Head-only training on cached histories. Backbone parameters are never
/// touched; only pool and head parameters receive updates.
template <typename T>
TrainOutput<T> finetune_head(const std::vector<CachedGraph<T>>& cache,
                             TrainConfig cfg) {
  if (cache.empty()) {
    throw ContractError("ft: activation cache is empty");
  }
  cfg.mode = TrainMode::ft_frozen;
  cfg.backbone.hidden = cache[0].hist.width();
  cfg.backbone.layers = cache[0].hist.layers();
  cfg.canonicalize();
  cfg.validate();
  if (cfg.feat_dim == 0) cfg.feat_dim = cache[0].hist.width();
  if (cfg.num_classes == 0) {
    if (cfg.task == TaskKind::node_regress) {
      cfg.num_classes = 1;
    } else {
      int max_label = 0;
      for (const auto& g : cache) {
        if (cfg.task == TaskKind::graph_class && g.label) {
          max_label = std::max(max_label, *g.label);
        }
        if (cfg.task == TaskKind::node_class && g.node_labels) {
          for (int y : *g.node_labels) max_label = std::max(max_label, y);
        }
      }
      cfg.num_classes = static_cast<std::size_t>(max_label) + 1;
    }
  }

  Rng rng(cfg.seed);
  ParamStore<T> store;
  if (cfg.readout == ReadoutKind::histograph) {
    init_pool_params(store, cfg.pool, cfg.backbone.hidden, rng);
  }
  store.add(head_names::w(),
            glorot<T>(head_input_width(cfg), output_width(cfg), rng));
  store.add(head_names::b(), Tensor<T>::zeros({output_width(cfg)}));

  std::vector<std::size_t> order(cache.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t val_count = static_cast<std::size_t>(
      cfg.val_fraction * static_cast<double>(cache.size()));
  std::vector<const CachedGraph<T>*> train_set, val_set;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i + val_count < order.size() ? train_set : val_set)
        .push_back(&cache[order[i]]);
  }
  if (train_set.empty()) {
    throw ContractError("ft: no training graphs after split");
  }

  Adam<T> adam({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  TrainOutput<T> out;
  std::vector<std::size_t> train_order(train_set.size());
  for (std::size_t i = 0; i < train_order.size(); ++i) train_order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train_order);
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t begin = 0; begin < train_order.size();
         begin += cfg.batch_size) {
      const std::size_t end =
          std::min(train_order.size(), begin + cfg.batch_size);
      std::vector<const CachedGraph<T>*> chunk;
      for (std::size_t i = begin; i < end; ++i) {
        chunk.push_back(train_set[train_order[i]]);
      }
      ActivationHistory<T> hist = detail::concat_cached(chunk);
      auto targets = detail::targets_from_cached(chunk, cfg.task);

      store.zero_grads();
      Tape<T> tape;
      TapeScope<T> scope(tape);
      ForwardCtx ctx{true, &rng};
      Tensor<T> outputs = head_forward_on_history(hist, store, cfg, ctx);
      Tensor<T> loss = detail::compute_loss(outputs, targets, cfg.task);
      if (!std::isfinite(static_cast<double>(loss.item()))) {
        throw DivergenceError(
            "ft: loss diverged at epoch " + std::to_string(epoch) +
            "; last finite epoch " +
            (epoch == 0 ? std::string("none")
                        : std::to_string(epoch - 1)));
      }
      backward(loss);
      adam.step(store);
    }
    const auto t1 = std::chrono::steady_clock::now();

    EpochMetrics em;
    em.epoch = epoch;
    em.seconds = std::chrono::duration<double>(t1 - t0).count();
    Metrics train_m = detail::evaluate_cached(train_set, store, cfg,
                                              &em.alpha, &em.raw_scores);
    Metrics val_m = val_set.empty()
                        ? train_m
                        : detail::evaluate_cached(val_set, store, cfg);
    em.train_loss = train_m.loss;
    em.train_metric = task_metric<T>(train_m, cfg.task);
    em.val_loss = val_m.loss;
    em.val_metric = task_metric<T>(val_m, cfg.task);
    out.history.push_back(std::move(em));
  }

  out.skipped_steps = adam.skipped_steps();
  out.checkpoint.config_json = config_to_json(cfg);
  out.checkpoint.epoch = static_cast<std::uint32_t>(cfg.epochs);
  out.checkpoint.metrics_json = metrics_history_to_json(out.history);
  out.checkpoint.params = std::move(store);
  return out;
}

}  // namespace hg
