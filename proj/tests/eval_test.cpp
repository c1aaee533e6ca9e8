#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "soul/errors.hpp"
#include "soul/eval.hpp"
#include "soul/rng.hpp"

namespace eval = soul::eval;

namespace {

// O(n^2) reference: average precision as the mean of precision at each
// positive's rank, descending score, ties broken by original index.
double ap_reference(const std::vector<double>& scores,
                    const std::vector<int>& labels, int positive) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::size_t tp = 0, seen = 0, positives = 0;
  for (int l : labels) positives += l == positive ? 1 : 0;
  double sum = 0.0;
  for (std::size_t i : order) {
    ++seen;
    if (labels[i] == positive) {
      ++tp;
      sum += static_cast<double>(tp) / static_cast<double>(seen);
    }
  }
  return sum / static_cast<double>(positives);
}

}  // namespace

TEST_CASE("average precision endpoints") {
  const std::vector<int> labels = {0, 0, 1, 1};
  CHECK(eval::pr_auc({0.1, 0.2, 0.8, 0.9}, labels, 1) == doctest::Approx(1.0));
  // anti-separated: every negative outranks every positive
  CHECK(eval::pr_auc({0.9, 0.8, 0.2, 0.1}, labels, 1) ==
        doctest::Approx(ap_reference({0.9, 0.8, 0.2, 0.1}, labels, 1)));
  CHECK(eval::pr_auc({0.9, 0.8, 0.2, 0.1}, labels, 1) < 0.5);
  // benign as the positive class flips the ranking
  CHECK(eval::pr_auc({0.9, 0.8, 0.2, 0.1}, labels, 0) == doctest::Approx(1.0));
}

TEST_CASE("average precision matches a quadratic reference on random data") {
  soul::rng::Engine rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 5 + rng.below(60);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      // coarse grid to force score ties
      scores[i] = static_cast<double>(rng.below(8)) / 8.0;
      labels[i] = rng.uniform() < 0.3 ? 1 : 0;
      (labels[i] == 1 ? has_pos : has_neg) = true;
    }
    if (!has_pos) labels[0] = 1;
    if (!has_neg) labels[n - 1] = 0;
    CHECK(eval::pr_auc(scores, labels, 1) ==
          doctest::Approx(ap_reference(scores, labels, 1)).epsilon(1e-9));
  }
}

TEST_CASE("degenerate label sets are rejected") {
  CHECK_THROWS_AS(eval::pr_auc({0.5, 0.6}, {1, 1}, 1), soul::DegenerateLabels);
  CHECK_THROWS_AS(eval::pr_auc({0.5, 0.6}, {0, 0}, 1), soul::DegenerateLabels);
  CHECK_THROWS_AS(eval::pr_auc({}, {}, 1), soul::EmptyInput);
}

TEST_CASE("pr curve endpoints are coherent") {
  const std::vector<double> scores = {0.9, 0.7, 0.4, 0.2};
  const std::vector<int> labels = {1, 0, 1, 0};
  const auto curve = eval::pr_curve(scores, labels, 1);
  REQUIRE(!curve.empty());
  CHECK(curve.front().recall == doctest::Approx(0.5));
  CHECK(curve.front().precision == doctest::Approx(1.0));
  CHECK(curve.back().recall == doctest::Approx(1.0));
}

TEST_CASE("trapezoidal mean over a metric series") {
  CHECK(eval::aut({0.985, 0.506}, 2) == doctest::Approx(0.7455).epsilon(1e-12));
  CHECK(eval::aut({1.0, 0.0, 1.0}, 3) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(eval::aut({0.8, 0.8, 0.8, 0.8}, 4) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK_THROWS_AS(eval::aut({0.5}, 1), soul::InsufficientPoints);
  CHECK_THROWS_AS(eval::aut({}, 0), soul::InsufficientPoints);
  // degradation lowers the mean
  CHECK(eval::aut({1.0, 0.9, 0.5}, 3) < eval::aut({1.0, 0.9, 0.9}, 3));
  // stays inside the value range
  const double a = eval::aut({0.3, 0.7, 0.6}, 3);
  CHECK(a >= 0.3);
  CHECK(a <= 0.7);
}

TEST_CASE("span aggregation") {
  std::vector<eval::TaskMetrics> per_task(5);
  for (int t = 0; t < 5; ++t) {
    per_task[t].task_id = t;
    per_task[t].pr_auc_attack = 0.9 + 0.02 * t;
    per_task[t].pr_auc_benign = 1.0 - 0.01 * t;
  }
  const eval::EvalReport r = eval::aggregate(per_task, 2);
  REQUIRE(r.aut_seen_attack.has_value());
  CHECK(*r.aut_seen_attack == doctest::Approx((0.9 + 0.92) / 2).epsilon(1e-12));
  REQUIRE(r.aut_unseen_attack.has_value());
  CHECK(*r.aut_unseen_attack ==
        doctest::Approx(eval::aut({0.94, 0.96, 0.98}, 3)).epsilon(1e-12));
  REQUIRE(r.aut_overall_benign.has_value());
  CHECK(*r.aut_overall_benign ==
        doctest::Approx(eval::aut({1.0, 0.99, 0.98, 0.97, 0.96}, 5)).epsilon(1e-12));

  // one seen task -> seen span absent, unseen and overall present
  const eval::EvalReport one_seen = eval::aggregate(per_task, 1);
  CHECK(!one_seen.aut_seen_attack.has_value());
  CHECK(one_seen.aut_unseen_attack.has_value());
  CHECK(one_seen.aut_overall_attack.has_value());

  // all tasks seen -> unseen span absent
  const eval::EvalReport all_seen = eval::aggregate(per_task, 5);
  CHECK(all_seen.aut_seen_attack.has_value());
  CHECK(!all_seen.aut_unseen_attack.has_value());
}

TEST_CASE("labeling savings percentage") {
  eval::LabelingSavings s;
  s.model_labels = 62906;
  s.analyst_labels = 72101;
  CHECK(s.savings_pct() ==
        doctest::Approx(100.0 * 62906.0 / (62906.0 + 72101.0)).epsilon(1e-12));
  CHECK(s.savings_pct() == doctest::Approx(46.5).epsilon(0.005));
  const eval::LabelingSavings empty;
  CHECK(empty.savings_pct() == 0.0);
}

TEST_CASE("report JSON round trip") {
  std::vector<eval::TaskMetrics> per_task(3);
  for (int t = 0; t < 3; ++t) {
    per_task[t].task_id = t;
    per_task[t].pr_auc_attack = 0.5 + 0.125 * t;
    per_task[t].pr_auc_benign = 0.875 - 0.0625 * t;
  }
  eval::EvalReport r = eval::aggregate(per_task, 2);
  r.savings.model_labels = 10;
  r.savings.analyst_labels = 4;
  r.seed = 42;
  r.config_hash = "deadbeef";

  const eval::EvalReport back = eval::report_from_json(eval::report_to_json(r));
  REQUIRE(back.per_task.size() == 3);
  for (int t = 0; t < 3; ++t) {
    CHECK(back.per_task[t].pr_auc_attack == r.per_task[t].pr_auc_attack);
    CHECK(back.per_task[t].pr_auc_benign == r.per_task[t].pr_auc_benign);
  }
  CHECK(back.seen_count == 2);
  CHECK(back.aut_seen_attack == r.aut_seen_attack);
  CHECK(back.aut_unseen_attack == r.aut_unseen_attack);
  CHECK(back.aut_overall_benign == r.aut_overall_benign);
  CHECK(back.savings.model_labels == 10);
  CHECK(back.savings.analyst_labels == 4);
  CHECK(back.seed == 42);
  CHECK(back.config_hash == "deadbeef");
}

TEST_CASE("report CSV export writes one row per task") {
  std::vector<eval::TaskMetrics> per_task(4);
  for (int t = 0; t < 4; ++t) per_task[t] = {t, 0.9, 0.95};
  const eval::EvalReport r = eval::aggregate(per_task, 2);
  const std::string path = "eval_test_report.csv";
  eval::write_report_csv(r, path);
  std::ifstream in(path);
  std::size_t lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  in.close();
  std::remove(path.c_str());
  CHECK(lines >= 5);  // header + 4 tasks
}
