#pragma once

#include <optional>
#include <string>
#include <vector>

namespace soul::eval {

struct PrCurvePoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Average-precision estimator: sum over recall increments of precision,
// samples ranked by descending score with stable index tie-breaking.
double pr_auc(const std::vector<double>& scores, const std::vector<int>& labels,
              int positive_class);

std::vector<PrCurvePoint> pr_curve(const std::vector<double>& scores,
                                   const std::vector<int>& labels,
                                   int positive_class);

// Trapezoidal mean over an ordered metric series (N >= 2).
double aut(const std::vector<double>& values, std::size_t n);

struct TaskMetrics {
  int task_id = 0;
  double pr_auc_attack = 0.0;
  double pr_auc_benign = 0.0;
};

struct LabelingSavings {
  std::size_t model_labels = 0;
  std::size_t analyst_labels = 0;
  double savings_pct() const {
    const std::size_t total = model_labels + analyst_labels;
    return total == 0 ? 0.0
                      : 100.0 * static_cast<double>(model_labels) /
                            static_cast<double>(total);
  }
};

struct EvalReport {
  std::vector<TaskMetrics> per_task;
  std::size_t seen_count = 0;
  std::optional<double> aut_seen_attack, aut_seen_benign;
  std::optional<double> aut_unseen_attack, aut_unseen_benign;
  std::optional<double> aut_overall_attack, aut_overall_benign;
  LabelingSavings savings;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// seen span = tasks 1..c, unseen = c+1..T, overall = 1..T; a span with fewer
// than two tasks leaves its AUT fields absent
EvalReport aggregate(const std::vector<TaskMetrics>& per_task,
                     std::size_t seen_count);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& json_text);
void write_report_csv(const EvalReport& report, const std::string& path);

}  // namespace soul::eval
