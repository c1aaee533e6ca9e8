#pragma once

#include <span>
#include <string>
#include <vector>

#include "soul/rng.hpp"

namespace soul::memory {

struct MemoryEntry {
  std::vector<double> features;
  int label = 0;  // 0 benign, 1 attack
  int task_id = 0;
};

struct VoteNeighbor {
  int label = 0;
  double distance = 0.0;
};

// Capacity-bounded, class-balanced exemplar store. Capacity is split evenly
// across the two classes; inside a class, slots are shared across tasks
// (equal share by default) with seeded reservoir-style eviction. A class that
// cannot fill its half cedes the unused slots to the other class.
class BufferMemory {
 public:
  BufferMemory(std::size_t capacity, std::uint64_t seed,
               double alloc_factor = 0.0);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<MemoryEntry>& entries() const { return entries_; }

  // alloc_factor in (0,1]: per-task share of a class's half. 0 = 1/t default.
  void reorganize(const std::vector<MemoryEntry>& task_labeled, int task_id);

  std::vector<MemoryEntry> sample_batch(std::size_t b_m, rng::Engine& rng) const;

  // entries at cosine distance < c_d from x; zero-norm entries skipped
  std::vector<VoteNeighbor> vote_neighbors(std::span<const double> x,
                                           double c_d) const;

  std::vector<MemoryEntry> entries_with_label(int label) const;

  void dump_csv(const std::string& path) const;

 private:
  std::size_t capacity_;
  double alloc_factor_;  // 0 = equal share per seen task
  std::vector<MemoryEntry> entries_;
  rng::Engine rng_;
};

}  // namespace soul::memory
