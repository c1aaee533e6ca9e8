#include "soul/memory.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "soul/errors.hpp"
#include "soul/linalg.hpp"

namespace soul::memory {

BufferMemory::BufferMemory(std::size_t capacity, std::uint64_t seed,
                           double alloc_factor)
    : capacity_(capacity), alloc_factor_(alloc_factor), rng_(seed) {
  if (capacity == 0) throw SpecError("BufferMemory: capacity must be >= 1");
  if (alloc_factor < 0.0 || alloc_factor > 1.0) {
    throw SpecError("BufferMemory: alloc_factor must be in (0,1] or 0");
  }
}

namespace {

using Group = std::vector<MemoryEntry>;          // one (class, task) bucket
using ClassGroups = std::map<int, Group>;        // task_id -> bucket

// fills `quota[task]` for one class: base share per task, leftover slots
// handed out in task order to tasks that still have samples
std::map<int, std::size_t> fill_quotas(const ClassGroups& groups,
                                       std::size_t class_cap,
                                       double alloc_factor) {
  std::map<int, std::size_t> quota;
  if (groups.empty() || class_cap == 0) return quota;
  const double share = alloc_factor > 0.0
                           ? alloc_factor
                           : 1.0 / static_cast<double>(groups.size());
  std::size_t used = 0;
  for (const auto& [task, bucket] : groups) {
    const auto base = static_cast<std::size_t>(
        static_cast<double>(class_cap) * share);
    const std::size_t q = std::min(bucket.size(), base);
    quota[task] = q;
    used += q;
  }
  bool progress = true;
  while (used < class_cap && progress) {
    progress = false;
    for (const auto& [task, bucket] : groups) {
      if (used >= class_cap) break;
      if (quota[task] < bucket.size()) {
        ++quota[task];
        ++used;
        progress = true;
      }
    }
  }
  return quota;
}

std::size_t takeable(const ClassGroups& groups) {
  std::size_t n = 0;
  for (const auto& [task, bucket] : groups) n += bucket.size();
  return n;
}

}  // namespace

void BufferMemory::reorganize(const std::vector<MemoryEntry>& task_labeled,
                              int task_id) {
  if (task_labeled.empty()) return;

  ClassGroups by_task[2];
  for (const MemoryEntry& e : entries_) {
    by_task[e.label == 1 ? 1 : 0][e.task_id].push_back(e);
  }
  for (const MemoryEntry& e : task_labeled) {
    MemoryEntry copy = e;
    copy.task_id = task_id;
    by_task[e.label == 1 ? 1 : 0][task_id].push_back(std::move(copy));
  }

  // class halves; the attack class gets the odd slot, spare capacity from an
  // under-filled class flows to the other one
  std::size_t cap[2];
  cap[1] = capacity_ / 2 + capacity_ % 2;
  cap[0] = capacity_ / 2;
  const std::size_t avail0 = takeable(by_task[0]);
  const std::size_t avail1 = takeable(by_task[1]);
  if (avail1 < cap[1]) {
    cap[0] += cap[1] - avail1;
    cap[1] = avail1;
  }
  if (avail0 < cap[0]) {
    cap[1] = std::min(avail1, cap[1] + (cap[0] - avail0));
    cap[0] = avail0;
  }

  std::vector<MemoryEntry> next;
  next.reserve(capacity_);
  for (int cls = 0; cls < 2; ++cls) {
    auto quota = fill_quotas(by_task[cls], cap[cls], alloc_factor_);
    for (auto& [task, bucket] : by_task[cls]) {
      const std::size_t q = quota.count(task) ? quota[task] : 0;
      if (q == 0) continue;
      auto idx = rng_.sample_indices(bucket.size(), q);
      std::sort(idx.begin(), idx.end());
      for (std::size_t i : idx) next.push_back(std::move(bucket[i]));
    }
  }
  entries_ = std::move(next);
}

std::vector<MemoryEntry> BufferMemory::sample_batch(std::size_t b_m,
                                                    rng::Engine& rng) const {
  if (b_m == 0) return {};
  if (entries_.empty()) throw EmptyMemory("sample_batch: memory is empty");
  auto idx = rng.sample_indices(entries_.size(), std::min(b_m, entries_.size()));
  std::vector<MemoryEntry> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(entries_[i]);
  return out;
}

std::vector<VoteNeighbor> BufferMemory::vote_neighbors(
    std::span<const double> x, double c_d) const {
  if (c_d <= 0.0 || c_d > 2.0) {
    throw SpecError("vote_neighbors: c_d must be in (0, 2]");
  }
  std::vector<VoteNeighbor> out;
  for (const MemoryEntry& e : entries_) {
    double norm = 0.0;
    for (double v : e.features) norm += v * v;
    if (norm == 0.0) continue;  // non-matching by convention
    const double d = linalg::cosine_distance(x, e.features);
    if (d < c_d) out.push_back(VoteNeighbor{e.label, d});
  }
  return out;
}

std::vector<MemoryEntry> BufferMemory::entries_with_label(int label) const {
  std::vector<MemoryEntry> out;
  for (const MemoryEntry& e : entries_) {
    if (e.label == label) out.push_back(e);
  }
  return out;
}

void BufferMemory::dump_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("dump_csv: cannot open " + path);
  const std::size_t width = entries_.empty() ? 0 : entries_[0].features.size();
  for (std::size_t j = 0; j < width; ++j) out << "f" << j << ",";
  out << "label,task_id\n";
  out.precision(17);
  for (const MemoryEntry& e : entries_) {
    for (double v : e.features) out << v << ",";
    out << e.label << "," << e.task_id << "\n";
  }
}

}  // namespace soul::memory
