#pragma once

#include <optional>
#include <string>
#include <vector>

#include "soul/rng.hpp"

namespace soul::data {

enum class Schema { kCicids2017, kCicids2018, kCtu13, kUnswNb15, kGeneric };

Schema schema_from_string(const std::string& name);
std::string schema_to_string(Schema s);

struct FlowRecord {
  std::vector<double> features;  // each in [0,1] after preprocessing
  int true_label = 0;            // 0 benign, 1 attack
  std::optional<int> visible_label;  // equals true_label when present
};

// preprocessed records plus the grouping key used for task formulation
// (day/file identity, or attack family for UNSW)
struct FlowTable {
  std::vector<std::string> feature_names;
  std::vector<FlowRecord> records;
  std::vector<std::string> groups;  // parallel to records
  std::size_t dedup_removed = 0;
};

struct PreprocessOptions {
  // min-max statistics over the full dataset (offline preprocessing); when
  // false, normalization runs per file
  bool global_minmax = true;
  std::string label_column;  // generic schema override; empty = schema default
};

FlowTable preprocess_csv(const std::vector<std::string>& files, Schema schema,
                         const PreprocessOptions& opts = {});

struct TaskDataset {
  int task_id = 0;
  std::vector<FlowRecord> train;  // labeled iff visible_label set
  std::vector<FlowRecord> val;    // ground truth available
  std::vector<FlowRecord> test;
  double cir = 0.0;  // attack / total over the whole task

  std::size_t size() const { return train.size() + val.size() + test.size(); }
  std::vector<const FlowRecord*> train_labeled() const;
  std::vector<const FlowRecord*> train_unlabeled() const;
};

struct TaskStream {
  std::vector<TaskDataset> tasks;
  std::size_t seen_count = 0;
};

// Chronological (or attack-family) task split with per-task 71/4/25
// train/val/test partitions; an r-fraction per class of each seen task's
// train pool is marked visible.
TaskStream split_tasks(const FlowTable& table, Schema schema,
                       std::size_t seen_count, double labeled_ratio,
                       std::uint64_t seed);

struct SyntheticSpec {
  std::size_t tasks = 4;
  std::size_t samples_per_task = 2000;
  std::size_t dims = 8;
  std::vector<double> cir_per_task = {0.1};  // one value, or one per task
  double drift_angle_deg = 30.0;
  std::uint64_t seed = 1;
  std::size_t seen_count = 2;
  double labeled_ratio = 0.2;
  double cluster_sigma = 0.04;
  double cluster_offset = 0.22;
};

// Two Gaussian clusters per task inside [0,1]^dims; successive tasks rotate
// the class-separating direction by drift_angle in the first coordinate plane.
TaskStream generate_synthetic_stream(const SyntheticSpec& spec);

double task_cir(const TaskDataset& task);

// versioned binary cache of a FlowTable, bit-exact round trip
void save_table(const FlowTable& table, const std::string& path);
FlowTable load_table(const std::string& path);

}  // namespace soul::data
