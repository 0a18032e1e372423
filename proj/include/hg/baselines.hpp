#pragma once

#include <string>

#include "hg/backbone.hpp"
#include "hg/tensor.hpp"

namespace hg {

enum class ReadoutKind { mean, sum, max, jk_concat, histograph };

ReadoutKind parse_readout_kind(const std::string& name);
std::string readout_kind_name(ReadoutKind kind);

/// Per-graph max over node rows of one slice; the backward routes each
/// column's gradient to the row that attained the max (first on ties).
template <typename T>
Tensor<T> segment_max(const Tensor<T>& x, const std::vector<std::size_t>& ids,
                      std::size_t num_segments) {
  detail::check_2d(x, "segment_max");
  if (ids.size() != x.shape[0]) {
    throw ShapeError("segment_max: " + std::to_string(ids.size()) +
                     " ids for " + shape_str(x.shape));
  }
  detail::segment_counts(ids, num_segments, "segment_max");
  const std::size_t c = x.shape[1];
  Tensor<T> out = Tensor<T>::zeros({num_segments, c});
  auto argmax = std::make_shared<std::vector<std::size_t>>(
      num_segments * c, std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < x.shape[0]; ++i) {
    const std::size_t g = ids[i];
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t slot = g * c + j;
      if ((*argmax)[slot] == std::numeric_limits<std::size_t>::max() ||
          x.at(i, j) > out.at(g, j)) {
        out.at(g, j) = x.at(i, j);
        (*argmax)[slot] = i;
      }
    }
  }
  if (detail::recording(out, {&x})) {
    detail::mark_output(out, "segment_max", [x, out, argmax, c]() {
      if (!x.grad) return;
      for (std::size_t slot = 0; slot < argmax->size(); ++slot) {
        const std::size_t i = (*argmax)[slot];
        (*x.grad)[i * c + (slot % c)] += (*out.grad)[slot];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> segment_sum(const Tensor<T>& x, const std::vector<std::size_t>& ids,
                      std::size_t num_segments) {
  detail::check_2d(x, "segment_sum");
  if (ids.size() != x.shape[0]) {
    throw ShapeError("segment_sum: " + std::to_string(ids.size()) +
                     " ids for " + shape_str(x.shape));
  }
  detail::segment_counts(ids, num_segments, "segment_sum");
  const std::size_t c = x.shape[1];
  Tensor<T> out = Tensor<T>::zeros({num_segments, c});
  for (std::size_t i = 0; i < x.shape[0]; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      out.at(ids[i], j) += x.at(i, j);
    }
  }
  if (detail::recording(out, {&x})) {
    auto ids_copy = std::make_shared<std::vector<std::size_t>>(ids);
    detail::mark_output(out, "segment_sum", [x, out, ids_copy, c]() {
      if (!x.grad) return;
      for (std::size_t i = 0; i < ids_copy->size(); ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          (*x.grad)[i * c + j] += (*out.grad)[(*ids_copy)[i] * c + j];
        }
      }
    });
  }
  return out;
}

/// mean/sum/max reduction of the final history slice, per graph.
template <typename T>
Tensor<T> pool_last_layer(ReadoutKind kind, const ActivationHistory<T>& hist) {
  if (hist.layers() == 0) {
    throw ContractError("pool_last_layer: empty history");
  }
  const Tensor<T>& last = hist.slices.back();
  switch (kind) {
    case ReadoutKind::mean:
      return segment_mean(last, hist.node_graph_id, hist.num_graphs);
    case ReadoutKind::sum:
      return segment_sum(last, hist.node_graph_id, hist.num_graphs);
    case ReadoutKind::max:
      return segment_max(last, hist.node_graph_id, hist.num_graphs);
    default:
      throw ContractError("pool_last_layer: readout '" +
                          readout_kind_name(kind) +
                          "' is not a last-layer reduction");
  }
}

/// Mean-pools every layer slice per graph and concatenates along the width
/// in layer order -> [num_graphs x (L * D)].
template <typename T>
Tensor<T> jk_concat(const ActivationHistory<T>& hist) {
  if (hist.layers() == 0) {
    throw ContractError("jk_concat: empty history");
  }
  std::vector<Tensor<T>> pooled;
  pooled.reserve(hist.layers());
  for (const auto& slice : hist.slices) {
    pooled.push_back(segment_mean(slice, hist.node_graph_id, hist.num_graphs));
  }
  return concat_cols(pooled);
}

}  // namespace hg
