#include "hg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "hg/error.hpp"

using nlohmann::json;

namespace hg {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string metrics_history_to_json(const std::vector<EpochMetrics>& history) {
  json arr = json::array();
  for (const auto& m : history) {
    json j;
    j["epoch"] = m.epoch;
    j["train_loss"] = m.train_loss;
    j["train_metric"] = m.train_metric;
    j["val_loss"] = m.val_loss;
    j["val_metric"] = m.val_metric;
    j["seconds"] = m.seconds;
    if (!m.alpha.empty()) j["alpha"] = m.alpha;
    if (!m.raw_scores.empty()) j["raw_scores"] = m.raw_scores;
    arr.push_back(j);
  }
  return arr.dump();
}

std::vector<EpochMetrics> metrics_history_from_json(const std::string& text) {
  json arr;
  try {
    arr = json::parse(text);
  } catch (const json::exception& e) {
    throw IngestError(std::string("metric history: ") + e.what());
  }
  std::vector<EpochMetrics> out;
  for (const auto& j : arr) {
    EpochMetrics m;
    m.epoch = j.value("epoch", std::size_t{0});
    m.train_loss = j.value("train_loss", 0.0);
    m.train_metric = j.value("train_metric", 0.0);
    m.val_loss = j.value("val_loss", 0.0);
    m.val_metric = j.value("val_metric", 0.0);
    m.seconds = j.value("seconds", 0.0);
    if (j.contains("alpha")) m.alpha = j["alpha"].get<std::vector<double>>();
    if (j.contains("raw_scores")) {
      m.raw_scores = j["raw_scores"].get<std::vector<double>>();
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::ostringstream os;
  os << "epoch,train_loss,train_metric,val_loss,val_metric\n";
  for (const auto& m : history) {
    os << m.epoch << "," << format_double(m.train_loss) << ","
       << format_double(m.train_metric) << "," << format_double(m.val_loss)
       << "," << format_double(m.val_metric) << "\n";
  }
  return os.str();
}

std::string diagnostics_csv(const std::vector<DiagnosticSeries>& series) {
  std::ostringstream os;
  os << "name,x,value,seed,config_hash\n";
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      os << s.name << "," << format_double(s.x[i]) << ","
         << format_double(s.values[i]) << "," << s.seed << ","
         << s.config_hash << "\n";
    }
  }
  return os.str();
}

std::optional<double> roc_auc(const std::vector<double>& scores,
                              const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw ContractError("roc_auc: " + std::to_string(scores.size()) +
                        " scores for " + std::to_string(labels.size()) +
                        " labels");
  }
  const std::size_t n = scores.size();
  std::size_t positives = 0;
  for (int y : labels) positives += y ? 1 : 0;
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Average ranks over tied scores, then the Mann-Whitney statistic.
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[k]) rank_sum += rank[k];
  }
  const double u = rank_sum - 0.5 * static_cast<double>(positives) *
                                  static_cast<double>(positives + 1);
  return u / (static_cast<double>(positives) * static_cast<double>(negatives));
}

}  // namespace hg
