#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "soul/data.hpp"
#include "soul/errors.hpp"
#include "soul/eval.hpp"
#include "soul/nn.hpp"
#include "soul/rng.hpp"
#include "soul/sscl.hpp"

namespace sscl = soul::sscl;
namespace data = soul::data;
namespace nn = soul::nn;

namespace {

sscl::TrainerConfig small_config() {
  sscl::TrainerConfig cfg;
  cfg.batch_size = 64;
  cfg.memory_batch = 16;
  cfg.labeled_ratio = 0.2;
  cfg.epoch_cap = 10;
  cfg.learning_rate = 0.05;
  cfg.weight_decay = 1e-4;
  cfg.gpm_exemplars = 200;
  return cfg;
}

sscl::TrainerState make_state(std::uint64_t seed,
                              sscl::TrainerConfig cfg = small_config(),
                              std::size_t dims = 4) {
  soul::rng::Engine init(seed);
  nn::MlpModel model = nn::MlpModel::create(dims, {16, 8, 2}, init);
  return sscl::TrainerState(std::move(model), cfg, 200, seed);
}

data::TaskStream small_stream(std::uint64_t seed, std::size_t tasks = 2,
                              std::size_t seen = 2, double drift = 0.0) {
  data::SyntheticSpec spec;
  spec.tasks = tasks;
  spec.seen_count = seen;
  spec.samples_per_task = 600;
  spec.dims = 4;
  spec.cir_per_task = {0.3};
  spec.drift_angle_deg = drift;
  spec.seed = seed;
  return data::generate_synthetic_stream(spec);
}

nn::MlpModel fixed_model(const std::vector<double>& logit_weights) {
  // single softmax layer over 2 features; row 0 benign, row 1 attack
  nn::MlpModel m;
  nn::Layer l;
  l.weights = soul::linalg::Matrix(2, 2);
  l.weights.at(1, 0) = logit_weights[0];
  l.weights.at(1, 1) = logit_weights[1];
  l.bias = {0.0, 0.0};
  m.layers.push_back(l);
  return m;
}

double attack_accuracy(const nn::MlpModel& model, const data::TaskDataset& task) {
  std::size_t correct = 0, n = 0;
  soul::linalg::Matrix batch(task.test.size(), task.test[0].features.size());
  for (std::size_t i = 0; i < task.test.size(); ++i) {
    for (std::size_t j = 0; j < batch.cols; ++j) {
      batch.at(i, j) = task.test[i].features[j];
    }
  }
  const auto probs = nn::forward(model, batch, nn::Mode::kEval);
  for (std::size_t i = 0; i < task.test.size(); ++i) {
    const int pred = probs.at(i, 1) > probs.at(i, 0) ? 1 : 0;
    correct += pred == task.test[i].true_label ? 1 : 0;
    ++n;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("batch plan composition") {
  const auto plan = sscl::BatchPlan::make(8, 2, 0.5);
  CHECK(plan.b_m == 2);
  CHECK(plan.b_l == 3);
  CHECK(plan.b_u == 3);
  CHECK(plan.b_l + plan.b_u + plan.b_m == plan.b);

  // conservation across a sweep of parameters
  for (std::size_t b : {16u, 64u, 100u, 1024u}) {
    for (std::size_t b_m : {0u, 8u, 16u}) {
      for (double r : {0.1, 0.2, 0.5, 0.9}) {
        const auto p = sscl::BatchPlan::make(b, b_m, r);
        CHECK(p.b_l + p.b_u + p.b_m == b);
        CHECK(p.b_m <= b_m);
      }
    }
  }
}

TEST_CASE("pseudo-labels are the argmax with benign ties") {
  const nn::MlpModel model = fixed_model({6.0, -6.0});
  soul::linalg::Matrix inputs(3, 2);
  inputs.at(0, 0) = 0.9;  // attack side
  inputs.at(0, 1) = 0.1;
  inputs.at(1, 0) = 0.1;  // benign side
  inputs.at(1, 1) = 0.9;
  inputs.at(2, 0) = 0.5;  // exact tie -> benign
  inputs.at(2, 1) = 0.5;
  const auto labels = sscl::pseudo_label(model, inputs);
  CHECK(labels == std::vector<int>{1, 0, 0});

  // invariant under monotone rescaling of the logit margin
  const nn::MlpModel scaled = fixed_model({12.0, -12.0});
  CHECK(sscl::pseudo_label(scaled, inputs) == labels);
}

TEST_CASE("per-class agreement fractions") {
  soul::memory::BufferMemory mem(64, 5);
  std::vector<soul::memory::MemoryEntry> entries;
  for (int i = 0; i < 6; ++i) entries.push_back({{1.0, 0.02 * i}, 1, 0});
  for (int i = 0; i < 6; ++i) entries.push_back({{0.02 * i, 1.0}, 0, 0});
  mem.reorganize(entries, 0);

  soul::owl::OwlConfig cfg;  // gates 0.9, cutoff 0.1, vote 0.98
  const nn::MlpModel model = fixed_model({8.0, -8.0});

  // model, vote, and ground truth all aligned -> (1, 1)
  std::vector<sscl::LabeledExample> aligned = {
      {{0.95, 0.02}, 1}, {{0.9, 0.05}, 1}, {{0.02, 0.95}, 0}, {{0.05, 0.9}, 0}};
  const auto [ra, rb] = sscl::compute_agreement_fraction(model, aligned, mem, cfg);
  CHECK(ra == doctest::Approx(1.0));
  CHECK(rb == doctest::Approx(1.0));

  // ground truth flipped -> the confident predictions all disagree -> (0, 0)
  std::vector<sscl::LabeledExample> flipped = aligned;
  for (auto& e : flipped) e.label = 1 - e.label;
  const auto [fa, fb] = sscl::compute_agreement_fraction(model, flipped, mem, cfg);
  CHECK(fa == doctest::Approx(0.0));
  CHECK(fb == doctest::Approx(0.0));

  // empty class denominators yield zero, not NaN
  const auto [ea, eb] = sscl::compute_agreement_fraction(model, {}, mem, cfg);
  CHECK(ea == 0.0);
  CHECK(eb == 0.0);
}

TEST_CASE("first task trains to a separable optimum and fills memory") {
  const data::TaskStream stream = small_stream(7);
  auto state = make_state(7);
  sscl::train_first_task(state, stream.tasks[0]);

  CHECK(attack_accuracy(state.model, stream.tasks[0]) >= 0.99);
  CHECK(!state.buffer.empty());
  CHECK(state.teacher.has_value());
  CHECK(!state.prev_task_labeled.empty());
  CHECK(state.stats.expected_cir() == doctest::Approx(stream.tasks[0].cir));

  // a task with no visible labels cannot start the stream
  data::TaskDataset unlabeled = stream.tasks[0];
  for (auto& r : unlabeled.train) r.visible_label.reset();
  auto fresh = make_state(7);
  CHECK_THROWS_AS(sscl::train_first_task(fresh, unlabeled), soul::NoLabels);
}

TEST_CASE("semi-supervised continual step keeps both tasks accurate") {
  const data::TaskStream stream = small_stream(11, 2, 2, 20.0);
  auto state = make_state(11);
  sscl::train_first_task(state, stream.tasks[0]);
  sscl::train_task_sscl(state, stream.tasks[1]);

  CHECK(attack_accuracy(state.model, stream.tasks[0]) >= 0.95);
  CHECK(attack_accuracy(state.model, stream.tasks[1]) >= 0.95);
  CHECK(state.projection_events > 0);
  CHECK(state.stats.cir_history.size() == 2);
  CHECK(state.stats.rho_attack.has_value());
}

TEST_CASE("full stream run is bit-deterministic") {
  const data::TaskStream stream = small_stream(13, 3, 2, 15.0);

  auto run_once = [&]() {
    auto state = make_state(13);
    sscl::process_stream(state, stream);
    return sscl::evaluate_stream(state.model, stream);
  };
  const auto a = run_once();
  const auto b = run_once();
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].pr_auc_attack == b[t].pr_auc_attack);  // exact equality
    CHECK(a[t].pr_auc_benign == b[t].pr_auc_benign);
  }
}

TEST_CASE("stream bookkeeping: savings and outcomes only for unseen tasks") {
  const data::TaskStream stream = small_stream(17, 3, 2, 10.0);
  auto state = make_state(17);
  const auto result = sscl::process_stream(state, stream);

  CHECK(result.unseen_outcomes.size() == 1);
  CHECK(result.task_seconds.size() == 3);
  const auto total =
      result.savings.model_labels + result.savings.analyst_labels;
  CHECK(total > 0);
  // expected CIR only accumulates over seen tasks
  CHECK(state.stats.cir_history.size() == 2);

  const auto metrics = sscl::evaluate_stream(state.model, stream);
  REQUIRE(metrics.size() == 3);
  for (const auto& m : metrics) {
    CHECK(m.pr_auc_attack > 0.5);
    CHECK(m.pr_auc_benign > 0.5);
  }
}

TEST_CASE("projection can be disabled") {
  const data::TaskStream stream = small_stream(19, 2, 2, 10.0);
  sscl::TrainerConfig cfg = small_config();
  cfg.use_gpm = false;
  auto state = make_state(19, cfg);
  sscl::process_stream(state, stream);
  CHECK(state.projection_events == 0);
}
