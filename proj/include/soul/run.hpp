#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "soul/data.hpp"
#include "soul/eval.hpp"
#include "soul/sscl.hpp"

namespace soul::run {

// Full description of one experiment; serializable to JSON and back so a run
// is reproducible from its manifest.
struct RunConfig {
  std::string preset = "synthetic-small";

  // dataset: either synthetic, or CSV files / a preprocessed cache
  bool synthetic = true;
  data::SyntheticSpec synthetic_spec;
  std::string schema = "ctu13";
  std::vector<std::string> csv_files;
  std::string cache_path;
  std::size_t max_rows = 0;  // 0 = all; seeded subsample otherwise

  std::size_t seen_count = 2;
  double labeled_ratio = 0.2;

  std::vector<std::size_t> widths = {32, 16, 2};  // layer outputs, last = 2
  double dropout = 0.2;
  std::size_t batch_size = 64;
  std::size_t memory_capacity = 200;
  std::size_t memory_batch = 16;
  double learning_rate = 0.05;
  double weight_decay = 1e-4;
  std::size_t epoch_cap = 20;

  double gpm_threshold = 0.97;
  std::size_t gpm_exemplars = 10000;
  double gamma_attack = 0.9;
  double gamma_benign = 0.9;
  double cosine_cutoff = 0.1;
  double vote_threshold = 0.98;
  double rho_blend = 0.5;

  bool use_memory = true;
  bool use_gpm = true;

  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "runs";
};

// Named hyperparameter bundles: ctu13, unswnb15, cicids2017, cicids2018,
// synthetic-small. Throws SpecError on an unknown name.
RunConfig preset_config(const std::string& name);

std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& text);
RunConfig load_config_file(const std::string& path);

// FNV-1a over the canonical JSON form, hex string
std::string config_hash(const RunConfig& cfg);

// FNV-1a over the concatenated raw bytes of the given files, hex string
std::string hash_files(const std::vector<std::string>& paths);

// One seeded end-to-end pass (Algorithm-1 orchestration); no files written.
struct SingleRunResult {
  eval::EvalReport report;
  sscl::StreamResult stream;
  std::size_t projection_events = 0;
  nn::MlpModel model;  // final model after the full stream
};
SingleRunResult run_single(const RunConfig& cfg, std::uint64_t seed);

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;  // set when !ok
  eval::EvalReport report;
  std::vector<double> task_seconds;
  std::string report_path;
  std::string checkpoint_path;
};

struct RunOutput {
  std::vector<SeedOutcome> seeds;
  std::string manifest_path;
  std::string summary;  // cross-seed mean +/- population std, aligned text
};

// Runs every seed (failures isolated per seed), writes per-seed reports, a
// manifest and a cross-seed summary under the output directory. The
// SOUL_OUTPUT_ROOT environment variable, when set, prefixes relative output
// directories.
RunOutput cmd_run(const RunConfig& cfg);

// Comparison table over saved reports: aligned text plus CSV, one row per
// report group, mean +/- population std per AUT column.
struct TableOutput {
  std::string text;
  std::string csv;
};
TableOutput cmd_table(const std::vector<std::string>& report_paths);

// mean and population standard deviation
std::pair<double, double> mean_and_std(const std::vector<double>& values);

}  // namespace soul::run
