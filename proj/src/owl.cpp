#include "soul/owl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "soul/errors.hpp"

namespace soul::owl {

double SeenTaskStats::expected_cir() const {
  if (cir_history.empty()) return 0.0;
  double sum = 0.0;
  for (double c : cir_history) sum += c;
  return sum / static_cast<double>(cir_history.size());
}

void SeenTaskStats::update_agreement(double current_attack,
                                     double current_benign) {
  const double w = blend_weight;
  rho_attack = rho_attack ? w * current_attack + (1.0 - w) * *rho_attack
                          : current_attack;
  rho_benign = rho_benign ? w * current_benign + (1.0 - w) * *rho_benign
                          : current_benign;
}

std::pair<std::vector<ScoredSample>, std::vector<ScoredSample>>
partition_by_confidence(const nn::MlpModel& model,
                        const std::vector<data::FlowRecord>& records,
                        const OwlConfig& cfg) {
  std::vector<ScoredSample> top_attack, top_benign;
  if (records.empty()) return {top_attack, top_benign};
  linalg::Matrix batch(records.size(), records[0].features.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::copy(records[i].features.begin(), records[i].features.end(),
              batch.data.begin() + static_cast<std::ptrdiff_t>(i * batch.cols));
  }
  const linalg::Matrix probs = nn::forward(model, batch, nn::Mode::kEval);
  for (std::size_t i = 0; i < records.size(); ++i) {
    // ties break toward benign
    const int pseudo = probs.at(i, 1) > probs.at(i, 0) ? 1 : 0;
    const double confidence = probs.at(i, pseudo);
    if (pseudo == 1 && confidence > cfg.gamma_attack) {
      top_attack.push_back(ScoredSample{i, pseudo, confidence});
    } else if (pseudo == 0 && confidence > cfg.gamma_benign) {
      top_benign.push_back(ScoredSample{i, pseudo, confidence});
    }
  }
  auto by_confidence = [](const ScoredSample& a, const ScoredSample& b) {
    return a.confidence > b.confidence;
  };
  std::stable_sort(top_attack.begin(), top_attack.end(), by_confidence);
  std::stable_sort(top_benign.begin(), top_benign.end(), by_confidence);
  return {std::move(top_attack), std::move(top_benign)};
}

void truncate_by_cir(std::vector<ScoredSample>& top_attack,
                     std::vector<ScoredSample>& top_benign, double expected_cir,
                     double labeled_ratio, std::size_t task_size) {
  if (expected_cir < 0.0 || expected_cir >= 1.0) {
    throw SpecError("truncate_by_cir: expected cir must be in [0,1)");
  }
  const auto cap_attack = static_cast<std::size_t>(
      labeled_ratio * expected_cir * static_cast<double>(task_size));
  const auto cap_benign = static_cast<std::size_t>(
      labeled_ratio * (1.0 - expected_cir) * static_cast<double>(task_size));
  if (top_attack.size() > cap_attack) top_attack.resize(cap_attack);
  if (top_benign.size() > cap_benign) top_benign.resize(cap_benign);
}

namespace {

// vote share of the winning label among neighbors; 0 when no neighbors
std::pair<Vote, double> vote_with_share(std::span<const double> x,
                                        const memory::BufferMemory& mem,
                                        const OwlConfig& cfg) {
  const auto neighbors = mem.vote_neighbors(x, cfg.cosine_cutoff);
  if (neighbors.empty()) return {Vote::kUnknown, 0.0};
  std::size_t attack = 0;
  for (const memory::VoteNeighbor& n : neighbors) attack += n.label == 1 ? 1 : 0;
  const double total = static_cast<double>(neighbors.size());
  const double share_attack = static_cast<double>(attack) / total;
  const double share_benign = 1.0 - share_attack;
  if (share_attack >= cfg.vote_threshold) return {Vote::kAttack, share_attack};
  if (share_benign >= cfg.vote_threshold) return {Vote::kBenign, share_benign};
  return {Vote::kUnknown, std::max(share_attack, share_benign)};
}

}  // namespace

Vote majority_vote(std::span<const double> x, const memory::BufferMemory& mem,
                   const OwlConfig& cfg) {
  return vote_with_share(x, mem, cfg).first;
}

std::pair<std::vector<ScoredSample>, std::vector<ScoredSample>> agreement_filter(
    const std::vector<ScoredSample>& top_attack,
    const std::vector<ScoredSample>& top_benign,
    const std::vector<data::FlowRecord>& records,
    const memory::BufferMemory& mem, const OwlConfig& cfg) {
  std::vector<ScoredSample> agreed_attack, agreed_benign;
  for (const ScoredSample& s : top_attack) {
    if (majority_vote(records[s.index].features, mem, cfg) == Vote::kAttack) {
      agreed_attack.push_back(s);
    }
  }
  for (const ScoredSample& s : top_benign) {
    if (majority_vote(records[s.index].features, mem, cfg) == Vote::kBenign) {
      agreed_benign.push_back(s);
    }
  }
  return {std::move(agreed_attack), std::move(agreed_benign)};
}

double LabelingOutcome::savings_pct() const {
  const std::size_t total = model_labeled.size() + analyst_labeled.size();
  if (total == 0) return 0.0;
  return 100.0 * static_cast<double>(model_labeled.size()) /
         static_cast<double>(total);
}

LabelBudget label_budget(std::size_t task_size, double labeled_ratio,
                         double expected_cir) {
  LabelBudget b;
  b.attack_target = labeled_ratio * expected_cir * static_cast<double>(task_size);
  b.benign_target =
      labeled_ratio * (1.0 - expected_cir) * static_cast<double>(task_size);
  return b;
}

std::vector<LabeledPick> simulated_analyst(
    const std::vector<data::FlowRecord>& records,
    const std::vector<std::size_t>& pool, std::size_t need_attack,
    std::size_t need_benign, rng::Engine& rng) {
  std::vector<std::size_t> shuffled = pool;
  rng.shuffle(shuffled);
  std::vector<LabeledPick> picks;
  std::size_t got_attack = 0, got_benign = 0;
  for (std::size_t idx : shuffled) {
    const int label = records[idx].true_label;
    if (label == 1 && got_attack < need_attack) {
      ++got_attack;
      picks.push_back(LabeledPick{idx, 1, LabelSource::kAnalyst, 0.0, 0.0});
    } else if (label == 0 && got_benign < need_benign) {
      ++got_benign;
      picks.push_back(LabeledPick{idx, 0, LabelSource::kAnalyst, 0.0, 0.0});
    }
    if (got_attack == need_attack && got_benign == need_benign) break;
  }
  return picks;
}

LabelingOutcome label_unseen_task(const nn::MlpModel& model,
                                  const std::vector<data::FlowRecord>& records,
                                  const memory::BufferMemory& mem,
                                  const SeenTaskStats& stats,
                                  const OwlConfig& cfg, rng::Engine& rng) {
  if (stats.cir_history.empty()) {
    throw SpecError("label_unseen_task: no seen-task statistics");
  }
  const double pi = stats.expected_cir();
  auto [top_attack, top_benign] = partition_by_confidence(model, records, cfg);
  truncate_by_cir(top_attack, top_benign, pi, cfg.labeled_ratio, records.size());
  auto [agreed_attack, agreed_benign] =
      agreement_filter(top_attack, top_benign, records, mem, cfg);

  LabelingOutcome outcome;
  auto take_self = [&](std::vector<ScoredSample>& agreed, double rho) {
    const auto want = static_cast<std::size_t>(std::llround(
        rho * static_cast<double>(agreed.size())));
    auto idx = rng.sample_indices(agreed.size(), want);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) {
      const ScoredSample& s = agreed[i];
      outcome.model_labeled.push_back(LabeledPick{
          s.index, s.pseudo_label, LabelSource::kModel, s.confidence, 0.0});
    }
  };
  take_self(agreed_attack, stats.rho_a());
  take_self(agreed_benign, stats.rho_b());

  // analyst completes the per-class label budget; negatives clamp to zero
  const LabelBudget budget = label_budget(records.size(), cfg.labeled_ratio, pi);
  std::size_t self_attack = 0, self_benign = 0;
  for (const LabeledPick& p : outcome.model_labeled) {
    (p.label == 1 ? self_attack : self_benign) += 1;
  }
  const auto need_attack = static_cast<std::size_t>(std::max<long long>(
      0, std::llround(budget.attack_target - static_cast<double>(self_attack))));
  const auto need_benign = static_cast<std::size_t>(std::max<long long>(
      0, std::llround(budget.benign_target - static_cast<double>(self_benign))));

  std::unordered_set<std::size_t> taken;
  for (const LabeledPick& p : outcome.model_labeled) taken.insert(p.index);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!taken.count(i)) pool.push_back(i);
  }
  outcome.analyst_labeled =
      simulated_analyst(records, pool, need_attack, need_benign, rng);

  std::size_t got_attack = 0, got_benign = 0;
  for (const LabeledPick& p : outcome.analyst_labeled) {
    taken.insert(p.index);
    (p.label == 1 ? got_attack : got_benign) += 1;
  }
  outcome.analyst_shortfall_attack = need_attack - got_attack;
  outcome.analyst_shortfall_benign = need_benign - got_benign;

  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!taken.count(i)) outcome.remaining_unlabeled.push_back(i);
  }
  return outcome;
}

void export_outcome_csv(const LabelingOutcome& outcome,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("export_outcome_csv: cannot open " + path);
  out.precision(17);
  out << "record_index,label,source,confidence,vote_share\n";
  auto emit = [&](const LabeledPick& p, const char* src) {
    out << p.index << "," << p.label << "," << src << "," << p.confidence << ","
        << p.vote_share << "\n";
  };
  for (const LabeledPick& p : outcome.model_labeled) emit(p, "model");
  for (const LabeledPick& p : outcome.analyst_labeled) emit(p, "analyst");
}

}  // namespace soul::owl
