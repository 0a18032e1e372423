#pragma once

#include <string>
#include <vector>

#include "hg/error.hpp"
#include "hg/tensor.hpp"

namespace hg {

enum class TaskKind { graph_class, node_class, node_regress };

TaskKind parse_task_kind(const std::string& name);
std::string task_kind_name(TaskKind task);

/// Supervised objective per task: classification tasks use mean
/// cross-entropy, regression uses mean squared error.
template <typename T>
Tensor<T> loss_fn(TaskKind task, const Tensor<T>& outputs,
                  const std::vector<std::size_t>& class_labels,
                  const Tensor<T>& regression_targets) {
  switch (task) {
    case TaskKind::graph_class:
    case TaskKind::node_class:
      return cross_entropy_mean(outputs, class_labels);
    case TaskKind::node_regress:
      return mse_mean(outputs, regression_targets);
  }
  throw ContractError("loss_fn: unhandled task");
}

}  // namespace hg
