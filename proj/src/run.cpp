#include "soul/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "soul/errors.hpp"
#include "soul/gpm.hpp"
#include "soul/nn.hpp"
#include "soul/owl.hpp"
#include "soul/rng.hpp"

namespace soul::run {

namespace {

using nlohmann::json;

json spec_to_json(const data::SyntheticSpec& s) {
  return json{{"tasks", s.tasks},
              {"samples_per_task", s.samples_per_task},
              {"dims", s.dims},
              {"cir_per_task", s.cir_per_task},
              {"drift_angle_deg", s.drift_angle_deg},
              {"seed", s.seed},
              {"seen_count", s.seen_count},
              {"labeled_ratio", s.labeled_ratio},
              {"cluster_sigma", s.cluster_sigma},
              {"cluster_offset", s.cluster_offset}};
}

data::SyntheticSpec spec_from_json(const json& j) {
  data::SyntheticSpec s;
  s.tasks = j.value("tasks", s.tasks);
  s.samples_per_task = j.value("samples_per_task", s.samples_per_task);
  s.dims = j.value("dims", s.dims);
  s.cir_per_task = j.value("cir_per_task", s.cir_per_task);
  s.drift_angle_deg = j.value("drift_angle_deg", s.drift_angle_deg);
  s.seed = j.value("seed", s.seed);
  s.seen_count = j.value("seen_count", s.seen_count);
  s.labeled_ratio = j.value("labeled_ratio", s.labeled_ratio);
  s.cluster_sigma = j.value("cluster_sigma", s.cluster_sigma);
  s.cluster_offset = j.value("cluster_offset", s.cluster_offset);
  return s;
}

json config_to_json_obj(const RunConfig& c) {
  return json{{"preset", c.preset},
              {"synthetic", c.synthetic},
              {"synthetic_spec", spec_to_json(c.synthetic_spec)},
              {"schema", c.schema},
              {"csv_files", c.csv_files},
              {"cache_path", c.cache_path},
              {"max_rows", c.max_rows},
              {"seen_count", c.seen_count},
              {"labeled_ratio", c.labeled_ratio},
              {"widths", c.widths},
              {"dropout", c.dropout},
              {"batch_size", c.batch_size},
              {"memory_capacity", c.memory_capacity},
              {"memory_batch", c.memory_batch},
              {"learning_rate", c.learning_rate},
              {"weight_decay", c.weight_decay},
              {"epoch_cap", c.epoch_cap},
              {"gpm_threshold", c.gpm_threshold},
              {"gpm_exemplars", c.gpm_exemplars},
              {"gamma_attack", c.gamma_attack},
              {"gamma_benign", c.gamma_benign},
              {"cosine_cutoff", c.cosine_cutoff},
              {"vote_threshold", c.vote_threshold},
              {"rho_blend", c.rho_blend},
              {"use_memory", c.use_memory},
              {"use_gpm", c.use_gpm},
              {"seeds", c.seeds},
              {"output_dir", c.output_dir}};
}

void apply_json(RunConfig& c, const json& j) {
  c.synthetic = j.value("synthetic", c.synthetic);
  if (j.contains("synthetic_spec")) {
    c.synthetic_spec = spec_from_json(j.at("synthetic_spec"));
  }
  c.schema = j.value("schema", c.schema);
  c.csv_files = j.value("csv_files", c.csv_files);
  c.cache_path = j.value("cache_path", c.cache_path);
  c.max_rows = j.value("max_rows", c.max_rows);
  c.seen_count = j.value("seen_count", c.seen_count);
  c.labeled_ratio = j.value("labeled_ratio", c.labeled_ratio);
  c.widths = j.value("widths", c.widths);
  c.dropout = j.value("dropout", c.dropout);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.memory_capacity = j.value("memory_capacity", c.memory_capacity);
  c.memory_batch = j.value("memory_batch", c.memory_batch);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.epoch_cap = j.value("epoch_cap", c.epoch_cap);
  c.gpm_threshold = j.value("gpm_threshold", c.gpm_threshold);
  c.gpm_exemplars = j.value("gpm_exemplars", c.gpm_exemplars);
  c.gamma_attack = j.value("gamma_attack", c.gamma_attack);
  c.gamma_benign = j.value("gamma_benign", c.gamma_benign);
  c.cosine_cutoff = j.value("cosine_cutoff", c.cosine_cutoff);
  c.vote_threshold = j.value("vote_threshold", c.vote_threshold);
  c.rho_blend = j.value("rho_blend", c.rho_blend);
  c.use_memory = j.value("use_memory", c.use_memory);
  c.use_gpm = j.value("use_gpm", c.use_gpm);
  c.seeds = j.value("seeds", c.seeds);
  c.output_dir = j.value("output_dir", c.output_dir);
}

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (const unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

data::TaskStream build_stream(const RunConfig& cfg, std::uint64_t seed) {
  if (cfg.synthetic) {
    data::SyntheticSpec spec = cfg.synthetic_spec;
    spec.seed = seed;
    spec.seen_count = cfg.seen_count;
    spec.labeled_ratio = cfg.labeled_ratio;
    return data::generate_synthetic_stream(spec);
  }
  data::FlowTable table;
  if (!cfg.cache_path.empty()) {
    table = data::load_table(cfg.cache_path);
  } else {
    if (cfg.csv_files.empty()) throw SpecError("no dataset files configured");
    table = data::preprocess_csv(cfg.csv_files,
                                 data::schema_from_string(cfg.schema));
  }
  if (cfg.max_rows > 0 && table.records.size() > cfg.max_rows) {
    rng::Engine sampler(seed ^ 0x5851f42d4c957f2dULL);
    auto keep = sampler.sample_indices(table.records.size(), cfg.max_rows);
    std::sort(keep.begin(), keep.end());  // keep chronological order
    data::FlowTable slim;
    slim.feature_names = table.feature_names;
    slim.dedup_removed = table.dedup_removed;
    slim.records.reserve(keep.size());
    slim.groups.reserve(keep.size());
    for (const std::size_t i : keep) {
      slim.records.push_back(std::move(table.records[i]));
      slim.groups.push_back(std::move(table.groups[i]));
    }
    table = std::move(slim);
  }
  return data::split_tasks(table, data::schema_from_string(cfg.schema),
                           cfg.seen_count, cfg.labeled_ratio, seed);
}

sscl::TrainerConfig trainer_config(const RunConfig& cfg) {
  sscl::TrainerConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.memory_batch = cfg.memory_batch;
  tc.labeled_ratio = cfg.labeled_ratio;
  tc.epoch_cap = cfg.epoch_cap;
  tc.use_memory = cfg.use_memory;
  tc.use_gpm = cfg.use_gpm;
  tc.gpm_threshold = cfg.gpm_threshold;
  tc.gpm_exemplars = cfg.gpm_exemplars;
  tc.learning_rate = cfg.learning_rate;
  tc.weight_decay = cfg.weight_decay;
  tc.owl.gamma_attack = cfg.gamma_attack;
  tc.owl.gamma_benign = cfg.gamma_benign;
  tc.owl.cosine_cutoff = cfg.cosine_cutoff;
  tc.owl.vote_threshold = cfg.vote_threshold;
  tc.owl.labeled_ratio = cfg.labeled_ratio;
  return tc;
}

std::filesystem::path resolve_output_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("SOUL_OUTPUT_ROOT")) {
      p = std::filesystem::path(root) / p;
    }
  }
  return p;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

struct AutColumn {
  const char* name;
  const std::optional<double> eval::EvalReport::* field;
};

constexpr AutColumn kAutColumns[] = {
    {"aut_seen_attack", &eval::EvalReport::aut_seen_attack},
    {"aut_seen_benign", &eval::EvalReport::aut_seen_benign},
    {"aut_unseen_attack", &eval::EvalReport::aut_unseen_attack},
    {"aut_unseen_benign", &eval::EvalReport::aut_unseen_benign},
    {"aut_overall_attack", &eval::EvalReport::aut_overall_attack},
    {"aut_overall_benign", &eval::EvalReport::aut_overall_benign},
};

std::string format_mean_std(const std::vector<double>& vals) {
  const auto [m, s] = mean_and_std(vals);
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << m << " +/- " << s;
  return out.str();
}

}  // namespace

std::string hash_files(const std::vector<std::string>& paths) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const std::string& p : paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read input for hashing: " + p);
    std::ostringstream buf;
    buf << in.rdbuf();
    h = fnv1a(buf.str(), h);
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "synthetic-small") {
    return c;  // struct defaults are the synthetic-small preset
  }
  c.synthetic = false;
  c.batch_size = 1024;
  c.memory_batch = 128;
  c.epoch_cap = 20;
  c.gpm_threshold = 0.97;
  c.gpm_exemplars = 10000;
  c.dropout = 0.2;
  if (name == "ctu13") {
    c.schema = "ctu13";
    c.memory_capacity = 1500;
    c.widths = {100, 150, 50, 10, 2};
    c.learning_rate = 1e-3;
    c.weight_decay = 1e-2;
    c.cosine_cutoff = 0.1;
    c.vote_threshold = 0.98;
  } else if (name == "unswnb15") {
    c.schema = "unswnb15";
    c.memory_capacity = 6666;
    c.widths = {100, 250, 500, 150, 50, 2};
    c.learning_rate = 1e-2;
    c.weight_decay = 1e-2;
    c.cosine_cutoff = 0.1;
    c.vote_threshold = 0.98;
  } else if (name == "cicids2017") {
    c.schema = "cicids2017";
    c.memory_capacity = 13334;
    c.widths = {100, 250, 500, 150, 50, 2};
    c.learning_rate = 1e-2;
    c.weight_decay = 1e-3;
    c.cosine_cutoff = 0.3;
    c.vote_threshold = 0.99;
  } else if (name == "cicids2018") {
    c.schema = "cicids2018";
    c.memory_capacity = 13334;
    c.widths = {100, 250, 100, 200, 50, 10, 2};
    c.learning_rate = 1e-2;
    c.weight_decay = 1e-3;
    c.cosine_cutoff = 0.1;
    c.vote_threshold = 0.98;
  } else {
    throw SpecError("unknown preset: " + name);
  }
  return c;
}

std::string config_to_json(const RunConfig& cfg) {
  return config_to_json_obj(cfg).dump(2);
}

RunConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  RunConfig c = preset_config(j.value("preset", std::string("synthetic-small")));
  apply_json(c, j);
  return c;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

std::string config_hash(const RunConfig& cfg) {
  // identifies the experiment itself; where outputs land is irrelevant
  RunConfig canonical = cfg;
  canonical.output_dir.clear();
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0')
      << fnv1a(config_to_json(canonical));
  return out.str();
}

SingleRunResult run_single(const RunConfig& cfg, std::uint64_t seed) {
  if (cfg.widths.empty() || cfg.widths.back() != 2) {
    throw SpecError("layer widths must end in the 2-way softmax head");
  }
  const data::TaskStream stream = build_stream(cfg, seed);
  if (stream.tasks.empty()) throw EmptyTask("dataset produced no tasks");
  const std::size_t input_dim =
      stream.tasks.front().train.front().features.size();

  rng::Engine init_rng(seed);
  nn::MlpModel model =
      nn::MlpModel::create(input_dim, cfg.widths, init_rng, cfg.dropout);
  sscl::TrainerState state(std::move(model), trainer_config(cfg),
                           cfg.memory_capacity, seed);
  state.stats.blend_weight = cfg.rho_blend;

  SingleRunResult out;
  out.stream = sscl::process_stream(state, stream);
  out.projection_events = state.projection_events;

  out.report = eval::aggregate(sscl::evaluate_stream(state.model, stream),
                               stream.seen_count);
  out.report.savings.model_labels = out.stream.savings.model_labels;
  out.report.savings.analyst_labels = out.stream.savings.analyst_labels;
  out.report.seed = seed;
  out.report.config_hash = config_hash(cfg);
  out.model = std::move(state.model);
  return out;
}

RunOutput cmd_run(const RunConfig& cfg) {
  if (cfg.seeds.empty()) throw SpecError("seed list is empty");
  const std::filesystem::path dir = resolve_output_dir(cfg.output_dir);
  std::filesystem::create_directories(dir);

  RunOutput out;
  json manifest;
  manifest["config"] = config_to_json_obj(cfg);
  manifest["config_hash"] = config_hash(cfg);
  if (!cfg.synthetic) {
    std::vector<std::string> inputs = cfg.csv_files;
    if (!cfg.cache_path.empty()) inputs.push_back(cfg.cache_path);
    manifest["input_hash"] = hash_files(inputs);
  } else {
    manifest["input_hash"] = "synthetic";
  }

  json seeds_json = json::array();
  for (const std::uint64_t seed : cfg.seeds) {
    SeedOutcome sd;
    sd.seed = seed;
    try {
      SingleRunResult res = run_single(cfg, seed);
      sd.ok = true;
      sd.report = res.report;
      sd.task_seconds = res.stream.task_seconds;

      const std::string stem = "seed" + std::to_string(seed);
      sd.report_path = (dir / (stem + "_report.json")).string();
      write_text(sd.report_path, eval::report_to_json(res.report));
      eval::write_report_csv(res.report,
                             (dir / (stem + "_report.csv")).string());
      sd.checkpoint_path = (dir / (stem + "_model.bin")).string();
      nn::save_checkpoint(res.model, nn::OptimizerState{}, sd.checkpoint_path);
    } catch (const std::exception& e) {
      sd.ok = false;
      sd.error = e.what();
    }
    json sj{{"seed", sd.seed}, {"ok", sd.ok}};
    if (sd.ok) {
      sj["report"] = sd.report_path;
      sj["checkpoint"] = sd.checkpoint_path;
      sj["task_seconds"] = sd.task_seconds;
    } else {
      sj["error"] = sd.error;
    }
    seeds_json.push_back(sj);
    out.seeds.push_back(std::move(sd));
  }
  manifest["seeds"] = seeds_json;

  // cross-seed aggregation of whichever AUT spans are present everywhere
  std::ostringstream summary;
  summary << "cross-seed aggregation (population std)\n";
  for (const AutColumn& col : kAutColumns) {
    std::vector<double> vals;
    for (const SeedOutcome& sd : out.seeds) {
      if (sd.ok && (sd.report.*col.field).has_value()) {
        vals.push_back(*(sd.report.*col.field));
      }
    }
    if (!vals.empty()) {
      summary << std::left << std::setw(20) << col.name
              << format_mean_std(vals) << "\n";
    }
  }
  {
    std::vector<double> savings;
    for (const SeedOutcome& sd : out.seeds) {
      if (sd.ok) savings.push_back(sd.report.savings.savings_pct());
    }
    if (!savings.empty()) {
      summary << std::left << std::setw(20) << "savings_pct"
              << format_mean_std(savings) << "\n";
    }
  }
  out.summary = summary.str();
  manifest["summary"] = out.summary;

  out.manifest_path = (dir / "manifest.json").string();
  write_text(out.manifest_path, manifest.dump(2) + "\n");
  write_text(dir / "summary.txt", out.summary);
  return out;
}

TableOutput cmd_table(const std::vector<std::string>& report_paths) {
  if (report_paths.empty()) throw SpecError("no reports given");
  std::vector<eval::EvalReport> reports;
  for (const std::string& p : report_paths) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot read report: " + p);
    std::ostringstream buf;
    buf << in.rdbuf();
    reports.push_back(eval::report_from_json(buf.str()));
  }
  // group reports by config hash; within a group the task layout must agree
  std::vector<std::string> order;
  for (const auto& r : reports) {
    if (std::find(order.begin(), order.end(), r.config_hash) == order.end()) {
      order.push_back(r.config_hash);
    }
  }

  std::ostringstream text, csv;
  text << "AUT by configuration, mean +/- population std over seeds\n";
  text << std::left << std::setw(18) << "config";
  csv << "config";
  for (const AutColumn& col : kAutColumns) {
    text << std::setw(26) << col.name;
    csv << "," << col.name << "_mean," << col.name << "_std";
  }
  text << "\n";
  csv << ",seeds\n";

  for (const std::string& hash : order) {
    std::vector<const eval::EvalReport*> group;
    for (const auto& r : reports) {
      if (r.config_hash == hash) group.push_back(&r);
    }
    for (const auto* r : group) {
      if (r->seen_count != group.front()->seen_count ||
          r->per_task.size() != group.front()->per_task.size()) {
        throw SchemaError("reports in group '" + hash +
                          "' disagree on task layout");
      }
    }
    text << std::left << std::setw(18)
         << (hash.empty() ? std::string("(unhashed)") : hash);
    csv << hash;
    for (const AutColumn& col : kAutColumns) {
      std::vector<double> vals;
      for (const auto* r : group) {
        if ((r->*col.field).has_value()) vals.push_back(*(r->*col.field));
      }
      if (vals.empty()) {
        text << std::setw(26) << "-";
        csv << ",,";
      } else {
        const auto [m, s] = mean_and_std(vals);
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(3) << m << " +/- " << s;
        text << std::setw(26) << cell.str();
        csv << "," << std::setprecision(10) << m << "," << s;
      }
    }
    text << "\n";
    csv << "," << group.size() << "\n";
  }
  return {text.str(), csv.str()};
}

std::pair<double, double> mean_and_std(const std::vector<double>& values) {
  if (values.empty()) throw EmptyInput("mean over empty list");
  double mean = 0.0;
  for (const double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (const double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());  // population convention
  return {mean, std::sqrt(var)};
}

}  // namespace soul::run
