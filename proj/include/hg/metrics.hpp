#pragma once

#include <optional>
#include <string>
#include <vector>

namespace hg {

/// Evaluation summary; which field is meaningful depends on the task.
struct Metrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double mse = 0.0;
  std::optional<double> auc;
};

/// One row of the per-epoch training record.
struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_metric = 0.0;  // accuracy or mse, by task
  double val_loss = 0.0;
  double val_metric = 0.0;
  double seconds = 0.0;                // optimization phase only
  std::vector<double> alpha;           // mean layer weights (histograph runs)
  std::vector<double> raw_scores;      // mean pre-normalization scores
};

std::string metrics_history_to_json(const std::vector<EpochMetrics>& history);
std::vector<EpochMetrics> metrics_history_from_json(const std::string& text);

/// Deterministic CSV of the metric series (wall-clock columns excluded).
std::string metrics_csv(const std::vector<EpochMetrics>& history);

/// One named series of (x, value) points plus run identification.
struct DiagnosticSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> values;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// CSV with header `name,x,value,seed,config_hash`, one row per point.
std::string diagnostics_csv(const std::vector<DiagnosticSeries>& series);

/// Rank-statistic ROC-AUC with tie averaging; empty when a class is absent.
std::optional<double> roc_auc(const std::vector<double>& scores,
                              const std::vector<int>& labels);

std::string format_double(double v);

}  // namespace hg
