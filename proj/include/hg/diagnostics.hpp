#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <vector>

#include "hg/backbone.hpp"
#include "hg/histopool.hpp"
#include "hg/metrics.hpp"
#include "hg/trainer.hpp"

namespace hg {

/// Mean pairwise distance of rows within each segment, averaged over
/// segments.
template <typename T>
double mean_pairwise_distance(const Tensor<T>& x,
                              const std::vector<std::size_t>& ids,
                              std::size_t num_graphs) {
  const std::size_t d = x.cols();
  double total = 0.0;
  for (std::size_t g = 0; g < num_graphs; ++g) {
    std::vector<std::size_t> members;
    for (std::size_t v = 0; v < ids.size(); ++v) {
      if (ids[v] == g) members.push_back(v);
    }
    if (members.size() < 2) continue;
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        double dist2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = static_cast<double>(x.at(members[a], j)) -
                              static_cast<double>(x.at(members[b], j));
          dist2 += diff * diff;
        }
        acc += std::sqrt(dist2);
        ++pairs;
      }
    }
    total += acc / static_cast<double>(pairs);
  }
  return total / static_cast<double>(num_graphs);
}

/// Mean pairwise Euclidean distance between node rows of one history slice,
/// computed within each graph and averaged over graphs. Single-node graphs
/// contribute 0.
template <typename T>
double feature_distance(const ActivationHistory<T>& hist, std::size_t layer) {
  if (layer >= hist.layers()) {
    throw ContractError("feature_distance: layer " + std::to_string(layer) +
                        " >= " + std::to_string(hist.layers()));
  }
  return mean_pairwise_distance(hist.slices[layer], hist.node_graph_id,
                                hist.num_graphs);
}

/// Entry l: mean over nodes of || x_{L-1} - x_l ||_2.
template <typename T>
std::vector<double> embedding_drift(const ActivationHistory<T>& hist) {
  const std::size_t L = hist.layers();
  if (L == 0) {
    throw ContractError("embedding_drift: empty history");
  }
  const std::size_t n = hist.num_nodes();
  const std::size_t d = hist.width();
  const Tensor<T>& last = hist.slices[L - 1];
  std::vector<double> drift(L, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    double acc = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      double dist2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(last.at(v, j)) -
                            static_cast<double>(hist.slices[l].at(v, j));
        dist2 += diff * diff;
      }
      acc += std::sqrt(dist2);
    }
    drift[l] = n ? acc / static_cast<double>(n) : 0.0;
  }
  return drift;
}

/// Per-epoch layer-weight series of a completed run: post-normalization
/// alpha and raw scores, averaged over graphs, one series per layer.
template <typename T>
std::vector<DiagnosticSeries> attention_trace(const TrainOutput<T>& run,
                                              std::uint64_t seed,
                                              const std::string& cfg_hash) {
  if (run.history.empty() || run.history.front().alpha.empty()) {
    throw ContractError("attention_trace: run has no layer-weight record");
  }
  const std::size_t L = run.history.front().alpha.size();
  std::vector<DiagnosticSeries> series;
  for (std::size_t l = 0; l < L; ++l) {
    DiagnosticSeries alpha{"alpha_l" + std::to_string(l), {}, {}, seed,
                           cfg_hash};
    DiagnosticSeries raw{"c_l" + std::to_string(l), {}, {}, seed, cfg_hash};
    for (const auto& em : run.history) {
      alpha.x.push_back(static_cast<double>(em.epoch));
      alpha.values.push_back(em.alpha[l]);
      raw.x.push_back(static_cast<double>(em.epoch));
      raw.values.push_back(em.raw_scores[l]);
    }
    series.push_back(std::move(alpha));
    series.push_back(std::move(raw));
  }
  return series;
}

/// Median optimization seconds per epoch after a one-epoch warmup.
template <typename T>
double epoch_timer(const TrainOutput<T>& run) {
  if (run.history.size() < 6) {
    throw ContractError("epoch_timer: need >= 6 epochs, got " +
                        std::to_string(run.history.size()));
  }
  std::vector<double> secs;
  for (std::size_t i = 1; i < run.history.size(); ++i) {
    secs.push_back(run.history[i].seconds);
  }
  std::sort(secs.begin(), secs.end());
  return secs[secs.size() / 2];
}

/// Median wall time of the pooling stage alone on a synthetic history.
template <typename T>
double time_pool_forward(std::size_t num_nodes, std::size_t layers,
                         std::size_t width, const PoolConfig& cfg,
                         std::size_t repeats, std::uint64_t seed) {
  Rng rng(seed);
  ActivationHistory<T> hist;
  hist.num_graphs = 1;
  hist.node_graph_id.assign(num_nodes, 0);
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor<T> slice = Tensor<T>::zeros({num_nodes, width});
    for (auto& v : *slice.data) v = static_cast<T>(rng.normal());
    hist.slices.push_back(std::move(slice));
  }
  ParamStore<T> store;
  init_pool_params(store, cfg, width, rng);
  // Warmup pass keeps first-touch costs out of the measurement.
  histograph_forward(hist, store, cfg);
  std::vector<double> times;
  times.reserve(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    histograph_forward(hist, store, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

/// Least-squares slope fit quality of y against x.
inline double linear_fit_r2(const std::vector<double>& x,
                            const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) {
    throw ContractError("linear_fit_r2: need matched series of >= 2 points");
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (syy == 0.0) return 1.0;
  const double slope = sxy / sxx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double fit = my + slope * (x[i] - mx);
    ss_res += (y[i] - fit) * (y[i] - fit);
  }
  return 1.0 - ss_res / syy;
}

}  // namespace hg
