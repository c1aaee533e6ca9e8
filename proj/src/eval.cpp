#include "soul/eval.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "soul/errors.hpp"

namespace soul::eval {

namespace {

std::vector<std::size_t> rank_by_score(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  return order;
}

void check_inputs(const std::vector<double>& scores,
                  const std::vector<int>& labels, int positive_class) {
  if (scores.size() != labels.size()) {
    throw DimMismatch("pr_auc: scores/labels length mismatch");
  }
  if (scores.empty()) throw EmptyInput("pr_auc: empty input");
  std::size_t pos = 0;
  for (int l : labels) pos += l == positive_class ? 1 : 0;
  if (pos == 0 || pos == labels.size()) {
    throw DegenerateLabels("pr_auc: need at least one positive and one negative");
  }
}

}  // namespace

double pr_auc(const std::vector<double>& scores, const std::vector<int>& labels,
              int positive_class) {
  check_inputs(scores, labels, positive_class);
  const auto order = rank_by_score(scores);
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l == positive_class ? 1 : 0;
  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == positive_class) {
      ++tp;
      const double precision =
          static_cast<double>(tp) / static_cast<double>(k + 1);
      ap += precision / static_cast<double>(n_pos);
    }
  }
  return ap;
}

std::vector<PrCurvePoint> pr_curve(const std::vector<double>& scores,
                                   const std::vector<int>& labels,
                                   int positive_class) {
  check_inputs(scores, labels, positive_class);
  const auto order = rank_by_score(scores);
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l == positive_class ? 1 : 0;
  std::vector<PrCurvePoint> curve;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == positive_class) ++tp;
    curve.push_back(PrCurvePoint{
        scores[order[k]],
        static_cast<double>(tp) / static_cast<double>(k + 1),
        static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  return curve;
}

double aut(const std::vector<double>& values, std::size_t n) {
  if (n < 2 || values.size() != n) {
    throw InsufficientPoints("aut: need N >= 2 matching values");
  }
  double sum = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    sum += (values[k + 1] + values[k]) / 2.0;
  }
  return sum / static_cast<double>(n - 1);
}

EvalReport aggregate(const std::vector<TaskMetrics>& per_task,
                     std::size_t seen_count) {
  EvalReport report;
  report.per_task = per_task;
  report.seen_count = seen_count;
  auto span_aut = [&](std::size_t begin, std::size_t end, bool attack)
      -> std::optional<double> {
    if (end <= begin || end - begin < 2 || end > per_task.size()) {
      return std::nullopt;
    }
    std::vector<double> series;
    for (std::size_t i = begin; i < end; ++i) {
      series.push_back(attack ? per_task[i].pr_auc_attack
                              : per_task[i].pr_auc_benign);
    }
    return aut(series, series.size());
  };
  const std::size_t total = per_task.size();
  report.aut_seen_attack = span_aut(0, seen_count, true);
  report.aut_seen_benign = span_aut(0, seen_count, false);
  report.aut_unseen_attack = span_aut(seen_count, total, true);
  report.aut_unseen_benign = span_aut(seen_count, total, false);
  report.aut_overall_attack = span_aut(0, total, true);
  report.aut_overall_benign = span_aut(0, total, false);
  return report;
}

namespace {

using nlohmann::json;

void put_opt(json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

std::optional<double> get_opt(const json& j, const char* key) {
  if (j.contains(key)) return j.at(key).get<double>();
  return std::nullopt;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  json j;
  j["version"] = 1;
  j["seed"] = report.seed;
  j["config_hash"] = report.config_hash;
  j["seen_count"] = report.seen_count;
  json tasks = json::array();
  for (const TaskMetrics& t : report.per_task) {
    tasks.push_back({{"task_id", t.task_id},
                     {"pr_auc_attack", t.pr_auc_attack},
                     {"pr_auc_benign", t.pr_auc_benign}});
  }
  j["per_task"] = tasks;
  put_opt(j, "aut_seen_attack", report.aut_seen_attack);
  put_opt(j, "aut_seen_benign", report.aut_seen_benign);
  put_opt(j, "aut_unseen_attack", report.aut_unseen_attack);
  put_opt(j, "aut_unseen_benign", report.aut_unseen_benign);
  put_opt(j, "aut_overall_attack", report.aut_overall_attack);
  put_opt(j, "aut_overall_benign", report.aut_overall_benign);
  j["savings"] = {{"model_labels", report.savings.model_labels},
                  {"analyst_labels", report.savings.analyst_labels},
                  {"savings_pct", report.savings.savings_pct()}};
  return j.dump(2);
}

EvalReport report_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  EvalReport report;
  report.seed = j.at("seed").get<std::uint64_t>();
  report.config_hash = j.at("config_hash").get<std::string>();
  report.seen_count = j.at("seen_count").get<std::size_t>();
  for (const json& t : j.at("per_task")) {
    report.per_task.push_back(TaskMetrics{t.at("task_id").get<int>(),
                                          t.at("pr_auc_attack").get<double>(),
                                          t.at("pr_auc_benign").get<double>()});
  }
  report.aut_seen_attack = get_opt(j, "aut_seen_attack");
  report.aut_seen_benign = get_opt(j, "aut_seen_benign");
  report.aut_unseen_attack = get_opt(j, "aut_unseen_attack");
  report.aut_unseen_benign = get_opt(j, "aut_unseen_benign");
  report.aut_overall_attack = get_opt(j, "aut_overall_attack");
  report.aut_overall_benign = get_opt(j, "aut_overall_benign");
  report.savings.model_labels = j.at("savings").at("model_labels").get<std::size_t>();
  report.savings.analyst_labels =
      j.at("savings").at("analyst_labels").get<std::size_t>();
  return report;
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_report_csv: cannot open " + path);
  out.precision(17);
  out << "task_id,pr_auc_attack,pr_auc_benign\n";
  for (const TaskMetrics& t : report.per_task) {
    out << t.task_id << "," << t.pr_auc_attack << "," << t.pr_auc_benign << "\n";
  }
}

}  // namespace soul::eval
