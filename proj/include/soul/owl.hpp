#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "soul/data.hpp"
#include "soul/memory.hpp"
#include "soul/nn.hpp"
#include "soul/rng.hpp"

namespace soul::owl {

struct OwlConfig {
  double gamma_attack = 0.9;   // classifier confidence gate, attack class
  double gamma_benign = 0.9;
  double cosine_cutoff = 0.1;  // c_d
  double vote_threshold = 0.98;  // majority share among selected neighbors
  double labeled_ratio = 0.2;    // r
};

// Running statistics collected while training seen tasks.
struct SeenTaskStats {
  std::vector<double> cir_history;
  std::optional<double> rho_attack;  // running agreement fractions
  std::optional<double> rho_benign;
  double blend_weight = 0.5;  // weight of the current fraction in the blend

  double expected_cir() const;  // mean of cir_history
  void record_cir(double cir) { cir_history.push_back(cir); }
  // rho <- w * current + (1-w) * prior; first update adopts current as-is
  void update_agreement(double current_attack, double current_benign);
  double rho_a() const { return rho_attack.value_or(0.0); }
  double rho_b() const { return rho_benign.value_or(0.0); }
};

struct ScoredSample {
  std::size_t index = 0;  // position in the task's record list
  int pseudo_label = 0;
  double confidence = 0.0;  // winning-class probability
};

// Routes every record by argmax pseudo-label (ties -> benign), keeps the ones
// whose winning probability exceeds the class gate, sorts non-increasing by
// confidence (stable on index). Returns (X_top_attack, X_top_benign).
std::pair<std::vector<ScoredSample>, std::vector<ScoredSample>>
partition_by_confidence(const nn::MlpModel& model,
                        const std::vector<data::FlowRecord>& records,
                        const OwlConfig& cfg);

// Caps the sets at floor(r*pi*task_size) attacks / floor(r*(1-pi)*task_size)
// benigns, keeping the highest-confidence samples.
void truncate_by_cir(std::vector<ScoredSample>& top_attack,
                     std::vector<ScoredSample>& top_benign, double expected_cir,
                     double labeled_ratio, std::size_t task_size);

enum class Vote { kAttack, kBenign, kUnknown };

// Majority among memory entries at cosine distance < c_d; unknown when the
// neighborhood is empty or no label reaches the vote threshold.
Vote majority_vote(std::span<const double> x, const memory::BufferMemory& mem,
                   const OwlConfig& cfg);

// Keeps samples whose pseudo-label matches the memory vote. Returns (S_a, S_b).
std::pair<std::vector<ScoredSample>, std::vector<ScoredSample>> agreement_filter(
    const std::vector<ScoredSample>& top_attack,
    const std::vector<ScoredSample>& top_benign,
    const std::vector<data::FlowRecord>& records,
    const memory::BufferMemory& mem, const OwlConfig& cfg);

enum class LabelSource { kModel, kAnalyst };

struct LabeledPick {
  std::size_t index = 0;
  int label = 0;
  LabelSource source = LabelSource::kModel;
  double confidence = 0.0;
  double vote_share = 0.0;
};

struct LabelingOutcome {
  std::vector<LabeledPick> model_labeled;
  std::vector<LabeledPick> analyst_labeled;
  std::vector<std::size_t> remaining_unlabeled;
  std::size_t analyst_shortfall_attack = 0;
  std::size_t analyst_shortfall_benign = 0;

  double savings_pct() const;
};

// Analyst label targets per class for a task of `task_size` records.
struct LabelBudget {
  double attack_target = 0.0;  // r * pi * |D|
  double benign_target = 0.0;  // r * (1-pi) * |D|
};
LabelBudget label_budget(std::size_t task_size, double labeled_ratio,
                         double expected_cir);

// Uniform seeded draw of up to need_attack true attacks and need_benign true
// benigns from the pool indices; shortfall allowed.
std::vector<LabeledPick> simulated_analyst(
    const std::vector<data::FlowRecord>& records,
    const std::vector<std::size_t>& pool, std::size_t need_attack,
    std::size_t need_benign, rng::Engine& rng);

// Full open-world labeling pass over a fully unlabeled record list.
LabelingOutcome label_unseen_task(const nn::MlpModel& model,
                                  const std::vector<data::FlowRecord>& records,
                                  const memory::BufferMemory& mem,
                                  const SeenTaskStats& stats,
                                  const OwlConfig& cfg, rng::Engine& rng);

void export_outcome_csv(const LabelingOutcome& outcome, const std::string& path);

}  // namespace soul::owl
