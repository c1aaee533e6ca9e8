#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "soul/data.hpp"
#include "soul/eval.hpp"
#include "soul/gpm.hpp"
#include "soul/memory.hpp"
#include "soul/nn.hpp"
#include "soul/owl.hpp"
#include "soul/rng.hpp"

namespace soul::sscl {

// Batch composition for one training step: b_m memory draws, b_l labeled,
// b_u unlabeled, b_l + b_u + b_m = b.
struct BatchPlan {
  std::size_t b = 0;
  std::size_t b_m = 0;
  std::size_t b_l = 0;
  std::size_t b_u = 0;

  static BatchPlan make(std::size_t b, std::size_t b_m, double labeled_ratio);
};

struct LabeledExample {
  std::vector<double> features;
  int label = 0;
};

struct TrainerConfig {
  std::size_t batch_size = 1024;
  std::size_t memory_batch = 128;
  double labeled_ratio = 0.2;
  std::size_t epoch_cap = 20;
  double distill_weight = 1.0;
  // teacher refreshed after every optimizer step (previous-batch semantics);
  // false = one snapshot per task
  bool teacher_previous_batch = true;
  bool use_memory = true;
  bool use_gpm = true;
  double gpm_threshold = 0.97;
  std::size_t gpm_exemplars = 10000;
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  owl::OwlConfig owl;
};

struct BatchLogRecord {
  int task_id = 0;
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double loss = 0.0;
  double loss_classification = 0.0;
  double loss_distill = 0.0;
  bool projected = false;
};

struct TrainerState {
  nn::MlpModel model;
  std::optional<nn::MlpModel> teacher;  // frozen during its role as teacher
  gpm::GpmMemory gpm_memory;
  memory::BufferMemory buffer;
  owl::SeenTaskStats stats;
  TrainerConfig cfg;
  rng::Engine rng;
  std::vector<LabeledExample> prev_task_labeled;
  std::size_t projection_events = 0;
  std::vector<BatchLogRecord> batch_log;
  std::ostream* log_stream = nullptr;  // optional line-delimited sink

  TrainerState(nn::MlpModel m, TrainerConfig config, std::size_t memory_capacity,
               std::uint64_t seed);
};

// argmax pseudo-labels, ties broken toward benign
std::vector<int> pseudo_label(const nn::MlpModel& teacher,
                              const linalg::Matrix& inputs);

// per-class fraction of gate-passing labeled samples whose pseudo-label,
// memory vote, and ground truth all agree; (attack, benign)
std::pair<double, double> compute_agreement_fraction(
    const nn::MlpModel& model, const std::vector<LabeledExample>& labeled,
    const memory::BufferMemory& mem, const owl::OwlConfig& cfg);

// Algorithm 1 steps 4-9: first task trained fully supervised on its labels.
void train_first_task(TrainerState& state, const data::TaskDataset& task);

// Algorithm 2: GPM update from the previous task's attack exemplars, then the
// per-batch loop with replay, pseudo-labeling, distillation and projection.
// `assigned_labels` overrides the task's own label visibility (open-world
// tasks); pass empty to use the task's visible labels.
void train_task_sscl(TrainerState& state, const data::TaskDataset& task,
                     const std::vector<LabeledExample>& assigned_labeled = {},
                     const std::vector<std::vector<double>>& assigned_unlabeled = {});

struct StreamResult {
  eval::LabelingSavings savings;
  std::vector<owl::LabelingOutcome> unseen_outcomes;
  std::vector<double> task_seconds;  // wall time per task, stream order
};

// Algorithm 1 over the full stream: first task supervised, remaining seen
// tasks via SSCL, unseen tasks labeled open-world first.
StreamResult process_stream(TrainerState& state, const data::TaskStream& stream);

// PR-AUC of the final model on every task's test split.
std::vector<eval::TaskMetrics> evaluate_stream(const nn::MlpModel& model,
                                               const data::TaskStream& stream);

}  // namespace soul::sscl
