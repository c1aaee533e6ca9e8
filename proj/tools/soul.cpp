// SOUL command line: dataset preprocessing, seeded end-to-end runs, report
// tables and synthetic stream generation.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "soul/data.hpp"
#include "soul/errors.hpp"
#include "soul/run.hpp"

namespace {

using nlohmann::json;

std::filesystem::path resolve_out(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_relative()) {
    if (const char* root = std::getenv("SOUL_OUTPUT_ROOT")) {
      p = std::filesystem::path(root) / p;
    }
  }
  return p;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw soul::IoError("cannot write " + path.string());
  out << text;
}

int cmd_preprocess(const std::vector<std::string>& files,
                   const std::string& schema, const std::string& out_path,
                   const std::string& label_column, std::size_t seen_count,
                   double labeled_ratio, std::uint64_t seed) {
  soul::data::PreprocessOptions opts;
  opts.label_column = label_column;
  const soul::data::Schema sc = soul::data::schema_from_string(schema);
  const soul::data::FlowTable table = soul::data::preprocess_csv(files, sc, opts);

  const std::filesystem::path cache = resolve_out(out_path);
  if (cache.has_parent_path()) std::filesystem::create_directories(cache.parent_path());
  soul::data::save_table(table, cache.string());

  const soul::data::TaskStream stream =
      soul::data::split_tasks(table, sc, seen_count, labeled_ratio, seed);

  json manifest;
  manifest["schema"] = schema;
  manifest["files"] = files;
  manifest["cache"] = cache.string();
  manifest["cache_hash"] = soul::run::hash_files({cache.string()});
  manifest["records"] = table.records.size();
  manifest["features"] = table.feature_names.size();
  manifest["dedup_removed"] = table.dedup_removed;
  manifest["visibility_seed"] = seed;
  manifest["seen_count"] = seen_count;
  manifest["labeled_ratio"] = labeled_ratio;
  json tasks = json::array();
  for (const auto& t : stream.tasks) {
    tasks.push_back({{"task_id", t.task_id},
                     {"train", t.train.size()},
                     {"val", t.val.size()},
                     {"test", t.test.size()},
                     {"labeled", t.train_labeled().size()},
                     {"cir", t.cir}});
  }
  manifest["tasks"] = tasks;

  const std::filesystem::path mpath = cache.string() + ".manifest.json";
  write_text(mpath, manifest.dump(2) + "\n");
  std::cout << manifest.dump(2) << "\n";
  return 0;
}

int cmd_synth(const soul::data::SyntheticSpec& spec, const std::string& out_dir) {
  const soul::data::TaskStream stream = soul::data::generate_synthetic_stream(spec);
  const std::filesystem::path dir = resolve_out(out_dir);
  std::filesystem::create_directories(dir);
  for (const auto& task : stream.tasks) {
    std::ostringstream csv;
    const std::size_t dims = task.train.front().features.size();
    for (std::size_t d = 0; d < dims; ++d) csv << "f" << d << ",";
    csv << "label\n";
    auto dump = [&](const std::vector<soul::data::FlowRecord>& recs) {
      for (const auto& r : recs) {
        for (const double v : r.features) csv << v << ",";
        csv << r.true_label << "\n";
      }
    };
    dump(task.train);
    dump(task.val);
    dump(task.test);
    write_text(dir / ("task" + std::to_string(task.task_id) + ".csv"),
               csv.str());
  }
  std::cout << "wrote " << stream.tasks.size() << " task files to " << dir
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SOUL: semi-supervised open-world continual learning for "
               "network intrusion detection"};
  app.require_subcommand(1);

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "normalize CSVs into a cache");
  std::vector<std::string> pre_files;
  std::string pre_schema = "generic", pre_out = "dataset.cache",
              pre_label_col;
  std::size_t pre_seen = 2;
  double pre_ratio = 0.2;
  std::uint64_t pre_seed = 1;
  pre->add_option("files", pre_files, "input CSV files")->required();
  pre->add_option("--schema", pre_schema,
                  "ctu13|unswnb15|cicids2017|cicids2018|generic");
  pre->add_option("--out", pre_out, "cache output path");
  pre->add_option("--label-column", pre_label_col,
                  "label column override (generic schema)");
  pre->add_option("--seen", pre_seen, "seen task count for the manifest");
  pre->add_option("--ratio", pre_ratio, "labeled ratio r");
  pre->add_option("--seed", pre_seed, "visibility seed");

  // run
  auto* runc = app.add_subcommand("run", "seeded end-to-end experiment");
  std::string run_config_path, run_preset;
  std::vector<std::uint64_t> run_seeds;
  std::vector<std::string> run_files;
  std::string run_cache, run_outdir;
  std::size_t run_seen = 0, run_max_rows = 0;
  double run_ratio = -1.0;
  bool use_gpm = true, use_memory = true;
  runc->add_option("--config", run_config_path, "JSON config file");
  runc->add_option("--preset", run_preset,
                   "ctu13|unswnb15|cicids2017|cicids2018|synthetic-small");
  runc->add_option("--seeds", run_seeds, "seed list override");
  runc->add_option("--csv", run_files, "dataset CSV files");
  runc->add_option("--cache", run_cache, "preprocessed cache path");
  runc->add_option("--out", run_outdir, "output directory");
  runc->add_option("--seen", run_seen, "seen task count");
  runc->add_option("--ratio", run_ratio, "labeled ratio r");
  runc->add_option("--max-rows", run_max_rows, "seeded row subsample cap");
  auto* gpm_flag =
      runc->add_flag("--gpm,!--no-gpm", use_gpm, "gradient projection on/off");
  auto* memory_flag = runc->add_flag("--memory,!--no-memory", use_memory,
                                     "replay buffer on/off");

  // table
  auto* tab = app.add_subcommand("table", "aggregate reports into a table");
  std::vector<std::string> tab_reports;
  std::string tab_csv;
  tab->add_option("reports", tab_reports, "report JSON files")->required();
  tab->add_option("--csv", tab_csv, "also write CSV here");

  // synth
  auto* syn = app.add_subcommand("synth", "generate a synthetic task stream");
  soul::data::SyntheticSpec spec;
  std::string syn_out = "synth";
  syn->add_option("--tasks", spec.tasks, "task count");
  syn->add_option("--samples", spec.samples_per_task, "samples per task");
  syn->add_option("--dims", spec.dims, "feature dimensions");
  syn->add_option("--cir", spec.cir_per_task, "CIR (one value or per task)");
  syn->add_option("--drift", spec.drift_angle_deg, "drift angle, degrees");
  syn->add_option("--seed", spec.seed, "generator seed");
  syn->add_option("--out", syn_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) {
      return cmd_preprocess(pre_files, pre_schema, pre_out, pre_label_col,
                            pre_seen, pre_ratio, pre_seed);
    }
    if (runc->parsed()) {
      soul::run::RunConfig cfg;
      if (!run_config_path.empty()) {
        cfg = soul::run::load_config_file(run_config_path);
      } else {
        cfg = soul::run::preset_config(
            run_preset.empty() ? "synthetic-small" : run_preset);
      }
      if (!run_seeds.empty()) cfg.seeds = run_seeds;
      if (!run_files.empty()) {
        cfg.csv_files = run_files;
        cfg.synthetic = false;
      }
      if (!run_cache.empty()) {
        cfg.cache_path = run_cache;
        cfg.synthetic = false;
      }
      if (!run_outdir.empty()) cfg.output_dir = run_outdir;
      if (run_seen > 0) cfg.seen_count = run_seen;
      if (run_ratio >= 0.0) cfg.labeled_ratio = run_ratio;
      if (run_max_rows > 0) cfg.max_rows = run_max_rows;
      if (gpm_flag->count() > 0) cfg.use_gpm = use_gpm;
      if (memory_flag->count() > 0) cfg.use_memory = use_memory;

      const soul::run::RunOutput out = soul::run::cmd_run(cfg);
      std::cout << out.summary;
      std::cout << "manifest: " << out.manifest_path << "\n";
      bool all_ok = true;
      for (const auto& sd : out.seeds) {
        if (!sd.ok) {
          all_ok = false;
          std::cerr << json{{"error", sd.error}, {"seed", sd.seed}}.dump()
                    << "\n";
        }
      }
      return all_ok ? 0 : 1;
    }
    if (tab->parsed()) {
      const soul::run::TableOutput out = soul::run::cmd_table(tab_reports);
      std::cout << out.text;
      if (!tab_csv.empty()) write_text(resolve_out(tab_csv), out.csv);
      return 0;
    }
    if (syn->parsed()) return cmd_synth(spec, syn_out);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
