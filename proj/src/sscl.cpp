#include "soul/sscl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <utility>

#include "soul/errors.hpp"

namespace soul::sscl {

namespace {

linalg::Matrix rows_to_matrix(const std::vector<const std::vector<double>*>& rows) {
  if (rows.empty()) return {};
  linalg::Matrix m(rows.size(), rows.front()->size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i]->size() != m.cols) throw DimMismatch("ragged batch rows");
    std::copy(rows[i]->begin(), rows[i]->end(), m.data.begin() + i * m.cols);
  }
  return m;
}

std::vector<LabeledExample> visible_labeled(const data::TaskDataset& task) {
  std::vector<LabeledExample> out;
  for (const auto* rec : task.train_labeled()) {
    out.push_back({rec->features, *rec->visible_label});
  }
  return out;
}

std::vector<std::vector<double>> unlabeled_features(const data::TaskDataset& task) {
  std::vector<std::vector<double>> out;
  for (const auto* rec : task.train_unlabeled()) out.push_back(rec->features);
  return out;
}

linalg::Matrix val_inputs(const data::TaskDataset& task) {
  std::vector<const std::vector<double>*> rows;
  rows.reserve(task.val.size());
  for (const auto& rec : task.val) rows.push_back(&rec.features);
  return rows_to_matrix(rows);
}

std::vector<int> val_labels(const data::TaskDataset& task) {
  std::vector<int> out;
  out.reserve(task.val.size());
  for (const auto& rec : task.val) out.push_back(rec.true_label);
  return out;
}

// validation loss; falls back to the training pool when the task has no
// validation split (tiny tasks)
double held_out_loss(const nn::MlpModel& model, const data::TaskDataset& task,
                     const std::vector<LabeledExample>& labeled) {
  if (!task.val.empty()) {
    return nn::evaluate_loss(model, val_inputs(task), val_labels(task));
  }
  std::vector<const std::vector<double>*> rows;
  std::vector<int> labels;
  for (const auto& ex : labeled) {
    rows.push_back(&ex.features);
    labels.push_back(ex.label);
  }
  return nn::evaluate_loss(model, rows_to_matrix(rows), labels);
}

void log_batch(TrainerState& state, BatchLogRecord rec) {
  if (state.log_stream != nullptr) {
    (*state.log_stream) << "task=" << rec.task_id << " epoch=" << rec.epoch
                        << " batch=" << rec.batch << " loss=" << rec.loss
                        << " loss_cls=" << rec.loss_classification
                        << " loss_dist=" << rec.loss_distill
                        << " projected=" << (rec.projected ? 1 : 0) << "\n";
  }
  state.batch_log.push_back(std::move(rec));
}

nn::OptimizerState fresh_optimizer(const TrainerConfig& cfg) {
  nn::OptimizerState opt;
  opt.learning_rate = cfg.learning_rate;
  opt.weight_decay = cfg.weight_decay;
  return opt;
}

// Bookkeeping after a task is trained: replay buffer reorganization,
// agreement statistics, exemplar handoff for the next projection update.
void post_task(TrainerState& state, const data::TaskDataset& task,
               std::vector<LabeledExample> labeled, bool record_cir) {
  if (state.cfg.use_memory) {
    std::vector<memory::MemoryEntry> entries;
    entries.reserve(labeled.size());
    for (const auto& ex : labeled) {
      entries.push_back({ex.features, ex.label, task.task_id});
    }
    state.buffer.reorganize(entries, task.task_id);
  }
  if (record_cir) state.stats.record_cir(task.cir);
  if (!state.buffer.empty()) {
    const auto [rho_a, rho_b] = compute_agreement_fraction(
        state.model, labeled, state.buffer, state.cfg.owl);
    state.stats.update_agreement(rho_a, rho_b);
  }
  state.prev_task_labeled = std::move(labeled);
  state.teacher = state.model;
}

// Cycling draw over a shuffled labeled pool; reshuffles at each wrap so
// repeats across an epoch stay randomized.
class LabeledCycler {
 public:
  LabeledCycler(const std::vector<LabeledExample>& pool, rng::Engine& rng)
      : pool_(pool), rng_(rng), order_(pool.size()) {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::vector<const LabeledExample*> take(std::size_t n) {
    std::vector<const LabeledExample*> out;
    if (pool_.empty()) return out;
    out.reserve(n);
    while (out.size() < n) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(&pool_[order_[pos_++]]);
    }
    return out;
  }

 private:
  const std::vector<LabeledExample>& pool_;
  rng::Engine& rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace

BatchPlan BatchPlan::make(std::size_t b, std::size_t b_m, double labeled_ratio) {
  if (b == 0) throw EmptyBatch("batch size must be positive");
  if (b_m > b) b_m = b;
  BatchPlan plan;
  plan.b = b;
  plan.b_m = b_m;
  const std::size_t rest = b - b_m;
  plan.b_l = static_cast<std::size_t>(
      std::llround(labeled_ratio * static_cast<double>(rest)));
  if (plan.b_l > rest) plan.b_l = rest;
  plan.b_u = rest - plan.b_l;
  return plan;
}

TrainerState::TrainerState(nn::MlpModel m, TrainerConfig config,
                           std::size_t memory_capacity, std::uint64_t seed)
    : model(std::move(m)),
      gpm_memory(gpm::make_gpm(model, config.gpm_threshold,
                               config.gpm_exemplars)),
      buffer(memory_capacity, seed ^ 0xb5297a4dbd2f8b1dULL),
      cfg(std::move(config)),
      rng(seed) {}

std::vector<int> pseudo_label(const nn::MlpModel& teacher,
                              const linalg::Matrix& inputs) {
  const linalg::Matrix probs = nn::forward(teacher, inputs, nn::Mode::kEval);
  std::vector<int> labels(probs.rows, 0);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    labels[i] = probs.at(i, 1) > probs.at(i, 0) ? 1 : 0;  // tie -> benign
  }
  return labels;
}

std::pair<double, double> compute_agreement_fraction(
    const nn::MlpModel& model, const std::vector<LabeledExample>& labeled,
    const memory::BufferMemory& mem, const owl::OwlConfig& cfg) {
  if (labeled.empty()) return {0.0, 0.0};
  std::vector<const std::vector<double>*> rows;
  rows.reserve(labeled.size());
  for (const auto& ex : labeled) rows.push_back(&ex.features);
  const linalg::Matrix probs =
      nn::forward(model, rows_to_matrix(rows), nn::Mode::kEval);

  std::size_t num_a = 0, den_a = 0, num_b = 0, den_b = 0;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const int pseudo = probs.at(i, 1) > probs.at(i, 0) ? 1 : 0;
    const double conf = probs.at(i, pseudo);
    const double gate = pseudo == 1 ? cfg.gamma_attack : cfg.gamma_benign;
    if (conf <= gate) continue;
    const owl::Vote vote =
        owl::majority_vote(labeled[i].features, mem, cfg);
    const bool agrees = (pseudo == 1 && vote == owl::Vote::kAttack) ||
                        (pseudo == 0 && vote == owl::Vote::kBenign);
    if (pseudo == 1) {
      ++den_a;
      if (agrees && labeled[i].label == 1) ++num_a;
    } else {
      ++den_b;
      if (agrees && labeled[i].label == 0) ++num_b;
    }
  }
  const double rho_a =
      den_a == 0 ? 0.0 : static_cast<double>(num_a) / static_cast<double>(den_a);
  const double rho_b =
      den_b == 0 ? 0.0 : static_cast<double>(num_b) / static_cast<double>(den_b);
  return {rho_a, rho_b};
}

void train_first_task(TrainerState& state, const data::TaskDataset& task) {
  std::vector<LabeledExample> labeled = visible_labeled(task);
  if (labeled.empty()) throw NoLabels("first task has no labeled samples");

  nn::OptimizerState opt = fresh_optimizer(state.cfg);
  std::vector<std::size_t> order(labeled.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < state.cfg.epoch_cap; ++epoch) {
    state.rng.shuffle(order);
    std::size_t batch_idx = 0;
    for (std::size_t pos = 0; pos < order.size();
         pos += state.cfg.batch_size, ++batch_idx) {
      const std::size_t end =
          std::min(order.size(), pos + state.cfg.batch_size);
      std::vector<const std::vector<double>*> rows;
      nn::TrainBatch batch;
      for (std::size_t k = pos; k < end; ++k) {
        rows.push_back(&labeled[order[k]].features);
        batch.labels.push_back(labeled[order[k]].label);
      }
      batch.inputs = rows_to_matrix(rows);
      batch.unlabeled_begin = batch.labels.size();

      nn::LossOptions opts;
      opts.distill_weight = state.cfg.distill_weight;
      opts.rng = &state.rng;
      const nn::LossResult res = nn::loss_and_gradients(state.model, batch, opts);
      nn::sgd_step(state.model, res.grads, opt);
      log_batch(state, {task.task_id, epoch, batch_idx, res.loss,
                        res.loss_classification, res.loss_distill, false});
    }
    const double val = held_out_loss(state.model, task, labeled);
    if (nn::epoch_end(opt, val) == nn::EpochDecision::kStop) break;
  }
  post_task(state, task, std::move(labeled), true);
}

void train_task_sscl(TrainerState& state, const data::TaskDataset& task,
                     const std::vector<LabeledExample>& assigned_labeled,
                     const std::vector<std::vector<double>>& assigned_unlabeled) {
  const bool seen = assigned_labeled.empty();
  std::vector<LabeledExample> labeled =
      seen ? visible_labeled(task) : assigned_labeled;
  std::vector<std::vector<double>> unlabeled =
      seen ? unlabeled_features(task) : assigned_unlabeled;
  if (labeled.empty()) throw NoLabels("task has no labeled samples");

  // gradient subspace update from the previous task's attack exemplars, with
  // a replay-buffer fallback when that task carried no attacks
  if (state.cfg.use_gpm) {
    std::vector<std::vector<double>> exemplars;
    for (const auto& ex : state.prev_task_labeled) {
      if (ex.label == 1) exemplars.push_back(ex.features);
    }
    if (exemplars.empty()) {
      for (const auto& entry : state.buffer.entries_with_label(1)) {
        exemplars.push_back(entry.features);
      }
    }
    if (exemplars.size() > state.gpm_memory.exemplar_count) {
      const auto keep = state.rng.sample_indices(
          exemplars.size(), state.gpm_memory.exemplar_count);
      std::vector<std::vector<double>> sampled;
      sampled.reserve(keep.size());
      for (const std::size_t i : keep) sampled.push_back(std::move(exemplars[i]));
      exemplars = std::move(sampled);
    }
    if (!exemplars.empty()) {
      gpm::update_gpm(state.gpm_memory, state.model, exemplars);
    }
  }

  nn::MlpModel teacher = state.teacher.has_value() ? *state.teacher : state.model;

  const std::size_t b_m =
      (state.cfg.use_memory && !state.buffer.empty())
          ? std::min(state.cfg.memory_batch, state.buffer.size())
          : 0;
  const BatchPlan plan =
      BatchPlan::make(state.cfg.batch_size, b_m, state.cfg.labeled_ratio);

  nn::OptimizerState opt = fresh_optimizer(state.cfg);
  const bool unlabeled_driven = !unlabeled.empty() && plan.b_u > 0;
  std::vector<std::size_t> order(unlabeled_driven ? unlabeled.size()
                                                  : labeled.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t stride =
      unlabeled_driven ? plan.b_u : std::max<std::size_t>(1, plan.b - plan.b_m);

  for (std::size_t epoch = 0; epoch < state.cfg.epoch_cap; ++epoch) {
    state.rng.shuffle(order);
    LabeledCycler cycler(labeled, state.rng);
    std::size_t batch_idx = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += stride, ++batch_idx) {
      const std::size_t end = std::min(order.size(), pos + stride);

      std::vector<const std::vector<double>*> rows;
      std::vector<int> labels;

      if (unlabeled_driven) {
        for (const auto* ex : cycler.take(plan.b_l)) {
          rows.push_back(&ex->features);
          labels.push_back(ex->label);
        }
      } else {
        for (std::size_t k = pos; k < end; ++k) {
          rows.push_back(&labeled[order[k]].features);
          labels.push_back(labeled[order[k]].label);
        }
      }

      const std::vector<memory::MemoryEntry> mem_batch =
          plan.b_m > 0 ? state.buffer.sample_batch(plan.b_m, state.rng)
                       : std::vector<memory::MemoryEntry>{};
      for (const auto& entry : mem_batch) {
        rows.push_back(&entry.features);
        labels.push_back(entry.label);
      }

      nn::TrainBatch batch;
      batch.unlabeled_begin = labels.size();
      if (unlabeled_driven) {
        for (std::size_t k = pos; k < end; ++k) {
          rows.push_back(&unlabeled[order[k]]);
        }
      }
      batch.inputs = rows_to_matrix(rows);
      if (unlabeled_driven) {
        // teacher sees the whole batch under the same batch statistics the
        // student trains with; only the unlabeled rows keep its targets
        const linalg::Matrix all_probs =
            nn::forward_batch_stats(teacher, batch.inputs);
        const std::size_t n_u = batch.inputs.rows - batch.unlabeled_begin;
        batch.teacher_probs = linalg::Matrix(n_u, all_probs.cols);
        for (std::size_t u = 0; u < n_u; ++u) {
          const std::size_t i = batch.unlabeled_begin + u;
          for (std::size_t j = 0; j < all_probs.cols; ++j) {
            batch.teacher_probs.at(u, j) = all_probs.at(i, j);
          }
          labels.push_back(batch.teacher_probs.at(u, 1) >
                                   batch.teacher_probs.at(u, 0)
                               ? 1
                               : 0);
        }
      }
      batch.labels = std::move(labels);

      nn::LossOptions opts;
      opts.distill_weight = state.cfg.distill_weight;
      opts.rng = &state.rng;
      const nn::LossResult res = nn::loss_and_gradients(state.model, batch, opts);

      bool projected = false;
      if (state.cfg.use_gpm && state.gpm_memory.total_columns() > 0) {
        const nn::Gradients proj =
            gpm::project_gradients(res.grads, state.gpm_memory);
        nn::sgd_step(state.model, proj, opt);
        projected = true;
        ++state.projection_events;
      } else {
        nn::sgd_step(state.model, res.grads, opt);
      }
      if (state.cfg.teacher_previous_batch) teacher = state.model;

      log_batch(state, {task.task_id, epoch, batch_idx, res.loss,
                        res.loss_classification, res.loss_distill, projected});
    }
    const double val = held_out_loss(state.model, task, labeled);
    if (nn::epoch_end(opt, val) == nn::EpochDecision::kStop) break;
  }
  post_task(state, task, std::move(labeled), seen);
}

StreamResult process_stream(TrainerState& state, const data::TaskStream& stream) {
  if (stream.tasks.empty()) throw EmptyTask("task stream is empty");
  StreamResult result;
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    const auto started = std::chrono::steady_clock::now();
    const data::TaskDataset& task = stream.tasks[t];
    if (t == 0) {
      train_first_task(state, task);
    } else if (t < stream.seen_count) {
      train_task_sscl(state, task);
    } else {
      owl::LabelingOutcome outcome =
          owl::label_unseen_task(state.model, task.train, state.buffer,
                                 state.stats, state.cfg.owl, state.rng);
      result.savings.model_labels += outcome.model_labeled.size();
      result.savings.analyst_labels += outcome.analyst_labeled.size();

      std::vector<LabeledExample> assigned;
      assigned.reserve(outcome.model_labeled.size() +
                       outcome.analyst_labeled.size());
      for (const auto& pick : outcome.model_labeled) {
        assigned.push_back({task.train[pick.index].features, pick.label});
      }
      for (const auto& pick : outcome.analyst_labeled) {
        assigned.push_back({task.train[pick.index].features, pick.label});
      }
      std::vector<std::vector<double>> rest;
      rest.reserve(outcome.remaining_unlabeled.size());
      for (const std::size_t idx : outcome.remaining_unlabeled) {
        rest.push_back(task.train[idx].features);
      }
      train_task_sscl(state, task, assigned, rest);
      result.unseen_outcomes.push_back(std::move(outcome));
    }
    result.task_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      started)
            .count());
  }
  return result;
}

std::vector<eval::TaskMetrics> evaluate_stream(const nn::MlpModel& model,
                                               const data::TaskStream& stream) {
  std::vector<eval::TaskMetrics> out;
  out.reserve(stream.tasks.size());
  for (const data::TaskDataset& task : stream.tasks) {
    std::vector<const std::vector<double>*> rows;
    std::vector<int> labels;
    for (const auto& rec : task.test) {
      rows.push_back(&rec.features);
      labels.push_back(rec.true_label);
    }
    const linalg::Matrix probs =
        nn::forward(model, rows_to_matrix(rows), nn::Mode::kEval);
    std::vector<double> p_attack(probs.rows), p_benign(probs.rows);
    for (std::size_t i = 0; i < probs.rows; ++i) {
      p_attack[i] = probs.at(i, 1);
      p_benign[i] = probs.at(i, 0);
    }
    eval::TaskMetrics tm;
    tm.task_id = task.task_id;
    tm.pr_auc_attack = eval::pr_auc(p_attack, labels, 1);
    tm.pr_auc_benign = eval::pr_auc(p_benign, labels, 0);
    out.push_back(tm);
  }
  return out;
}

}  // namespace soul::sscl
