#include "soul/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "soul/errors.hpp"

namespace soul::data {

namespace {

std::string to_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string normalize_name(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == ' ' || c == '_' || c == '-' || c == '\r') continue;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

struct SchemaInfo {
  std::set<std::string> drop;          // normalized column names to drop
  std::set<std::string> categorical;   // one-hot encoded
  std::string label_column;            // normalized
  std::string family_column;           // normalized; "" = group by file
};

SchemaInfo schema_info(Schema schema) {
  SchemaInfo info;
  switch (schema) {
    case Schema::kCicids2017:
    case Schema::kCicids2018:
      info.drop = {"flowid", "sourceip", "srcip", "destinationip", "dstip",
                   "sourceport", "srcport", "destinationport", "dstport",
                   "timestamp"};
      info.label_column = "label";
      break;
    case Schema::kCtu13:
      info.drop = {"flowid", "sourceip", "srcip", "destinationip", "dstip",
                   "sourceport", "srcport", "sport", "destinationport",
                   "dstport", "dport", "starttime"};
      info.label_column = "label";
      break;
    case Schema::kUnswNb15:
      info.drop = {"srcip", "sport", "dstip", "dsport", "stime", "ltime"};
      info.categorical = {"proto", "state", "service"};
      info.label_column = "label";
      info.family_column = "attackcat";
      break;
    case Schema::kGeneric:
      info.label_column = "label";
      break;
  }
  return info;
}

int parse_label(const std::string& raw) {
  const std::string v = to_lower(raw);
  if (v.empty()) throw SchemaError("empty label value");
  // "attempted"-suffixed attack labels are treated as benign
  if (v.size() >= 9 && v.substr(v.size() - 9) == "attempted") return 0;
  if (v == "benign" || v == "normal" || v == "background" || v == "0" ||
      v == "0.0") {
    return 0;
  }
  return 1;
}

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

double parse_numeric(const std::string& raw) {
  if (raw.empty()) return kMissing;
  char* end = nullptr;
  const double v = std::strtod(raw.c_str(), &end);
  while (end && *end == ' ') ++end;
  if (end == raw.c_str() || (end && *end != '\0')) return kMissing;
  if (!std::isfinite(v)) return kMissing;
  return v;
}

struct RawRow {
  std::vector<double> numeric;
  std::vector<std::string> categorical;
  int label = 0;
  std::string group;
};

struct RawFile {
  std::vector<std::string> numeric_names;
  std::vector<std::string> categorical_names;
  std::vector<RawRow> rows;
  std::size_t dedup_removed = 0;
};

RawFile parse_file(const std::string& path, const SchemaInfo& info,
                   Schema schema) {
  std::ifstream in(path);
  if (!in) throw IoError("preprocess: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw EmptyInput("preprocess: empty file " + path);
  const auto header = split_csv_line(line);

  enum class Kind { kDrop, kNumeric, kCategorical, kLabel, kFamily };
  std::vector<Kind> kinds(header.size());
  std::vector<std::string> norm_names(header.size());
  int label_idx = -1, family_idx = -1;
  RawFile file;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string n = normalize_name(header[i]);
    norm_names[i] = n;
    if (n == info.label_column) {
      kinds[i] = Kind::kLabel;
      label_idx = static_cast<int>(i);
    } else if (!info.family_column.empty() && n == info.family_column) {
      kinds[i] = Kind::kFamily;
      family_idx = static_cast<int>(i);
    } else if (info.drop.count(n)) {
      kinds[i] = Kind::kDrop;
    } else if (info.categorical.count(n)) {
      kinds[i] = Kind::kCategorical;
      file.categorical_names.push_back(n);
    } else {
      kinds[i] = Kind::kNumeric;
      file.numeric_names.push_back(n);
    }
  }
  if (label_idx < 0) {
    throw SchemaError("preprocess: no label column in " + path);
  }

  const std::string file_group =
      std::filesystem::path(path).stem().string();
  std::unordered_set<std::string> seen;
  std::size_t data_rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) continue;  // malformed row, skip
    ++data_rows;
    RawRow row;
    row.numeric.reserve(file.numeric_names.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      switch (kinds[i]) {
        case Kind::kNumeric:
          row.numeric.push_back(parse_numeric(fields[i]));
          break;
        case Kind::kCategorical:
          row.categorical.push_back(to_lower(fields[i]));
          break;
        case Kind::kLabel:
          row.label = parse_label(fields[i]);
          break;
        default:
          break;
      }
    }
    if (schema == Schema::kUnswNb15) {
      const std::string fam =
          family_idx >= 0 ? to_lower(fields[family_idx]) : "";
      row.group = (row.label == 1 && !fam.empty()) ? fam : "";
    } else {
      row.group = file_group;
    }

    // exact-duplicate removal, per file
    std::string key;
    key.reserve(row.numeric.size() * sizeof(double) + 8);
    for (double v : row.numeric) {
      double canon = std::isnan(v) ? kMissing : v;
      key.append(reinterpret_cast<const char*>(&canon), sizeof(double));
    }
    for (const std::string& c : row.categorical) {
      key += c;
      key += '\x1f';
    }
    key += static_cast<char>('0' + row.label);
    if (!seen.insert(key).second) {
      ++file.dedup_removed;
      continue;
    }
    file.rows.push_back(std::move(row));
  }
  if (data_rows == 0) throw EmptyInput("preprocess: no data rows in " + path);

  // NaN -> per-file column mean, computed before normalization
  const std::size_t w = file.numeric_names.size();
  for (std::size_t j = 0; j < w; ++j) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const RawRow& r : file.rows) {
      if (!std::isnan(r.numeric[j])) {
        sum += r.numeric[j];
        ++n;
      }
    }
    const double mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
    for (RawRow& r : file.rows) {
      if (std::isnan(r.numeric[j])) r.numeric[j] = mean;
    }
  }
  return file;
}

void minmax_normalize(std::vector<FlowRecord>& records, std::size_t begin,
                      std::size_t end) {
  if (begin >= end) return;
  const std::size_t w = records[begin].features.size();
  for (std::size_t j = 0; j < w; ++j) {
    double lo = records[begin].features[j], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = std::min(lo, records[i].features[j]);
      hi = std::max(hi, records[i].features[j]);
    }
    const double span = hi - lo;
    for (std::size_t i = begin; i < end; ++i) {
      records[i].features[j] =
          span > 0.0 ? (records[i].features[j] - lo) / span : 0.0;
    }
  }
}

}  // namespace

Schema schema_from_string(const std::string& name) {
  const std::string n = normalize_name(name);
  if (n == "cicids2017") return Schema::kCicids2017;
  if (n == "cicids2018" || n == "csecicids2018") return Schema::kCicids2018;
  if (n == "ctu13") return Schema::kCtu13;
  if (n == "unswnb15") return Schema::kUnswNb15;
  if (n == "generic") return Schema::kGeneric;
  throw SchemaError("unknown schema: " + name);
}

std::string schema_to_string(Schema s) {
  switch (s) {
    case Schema::kCicids2017: return "cicids2017";
    case Schema::kCicids2018: return "cicids2018";
    case Schema::kCtu13: return "ctu13";
    case Schema::kUnswNb15: return "unswnb15";
    case Schema::kGeneric: return "generic";
  }
  return "generic";
}

FlowTable preprocess_csv(const std::vector<std::string>& files, Schema schema,
                         const PreprocessOptions& opts) {
  if (files.empty()) throw EmptyInput("preprocess: no input files");
  SchemaInfo info = schema_info(schema);
  if (!opts.label_column.empty()) {
    info.label_column = normalize_name(opts.label_column);
  }

  std::vector<RawFile> raw;
  raw.reserve(files.size());
  for (const std::string& path : files) {
    raw.push_back(parse_file(path, info, schema));
  }
  for (std::size_t f = 1; f < raw.size(); ++f) {
    if (raw[f].numeric_names != raw[0].numeric_names ||
        raw[f].categorical_names != raw[0].categorical_names) {
      throw SchemaError("preprocess: column mismatch across files");
    }
  }

  // global category vocabulary for one-hot columns
  const std::size_t n_cat = raw[0].categorical_names.size();
  std::vector<std::vector<std::string>> vocab(n_cat);
  if (n_cat > 0) {
    std::vector<std::set<std::string>> sets(n_cat);
    for (const RawFile& f : raw) {
      for (const RawRow& r : f.rows) {
        for (std::size_t c = 0; c < n_cat; ++c) sets[c].insert(r.categorical[c]);
      }
    }
    for (std::size_t c = 0; c < n_cat; ++c) {
      vocab[c].assign(sets[c].begin(), sets[c].end());
    }
  }

  FlowTable table;
  table.feature_names = raw[0].numeric_names;
  for (std::size_t c = 0; c < n_cat; ++c) {
    for (const std::string& v : vocab[c]) {
      table.feature_names.push_back(raw[0].categorical_names[c] + "=" + v);
    }
  }

  std::vector<std::size_t> file_bounds{0};
  for (const RawFile& f : raw) {
    table.dedup_removed += f.dedup_removed;
    for (const RawRow& r : f.rows) {
      FlowRecord rec;
      rec.features = r.numeric;
      for (std::size_t c = 0; c < n_cat; ++c) {
        for (const std::string& v : vocab[c]) {
          rec.features.push_back(r.categorical[c] == v ? 1.0 : 0.0);
        }
      }
      rec.true_label = r.label;
      table.records.push_back(std::move(rec));
      table.groups.push_back(r.group);
    }
    file_bounds.push_back(table.records.size());
  }

  if (opts.global_minmax) {
    minmax_normalize(table.records, 0, table.records.size());
  } else {
    for (std::size_t f = 0; f + 1 < file_bounds.size(); ++f) {
      minmax_normalize(table.records, file_bounds[f], file_bounds[f + 1]);
    }
  }
  return table;
}

std::vector<const FlowRecord*> TaskDataset::train_labeled() const {
  std::vector<const FlowRecord*> out;
  for (const FlowRecord& r : train) {
    if (r.visible_label) out.push_back(&r);
  }
  return out;
}

std::vector<const FlowRecord*> TaskDataset::train_unlabeled() const {
  std::vector<const FlowRecord*> out;
  for (const FlowRecord& r : train) {
    if (!r.visible_label) out.push_back(&r);
  }
  return out;
}

double task_cir(const TaskDataset& task) {
  std::size_t attacks = 0, total = 0;
  for (const auto* part : {&task.train, &task.val, &task.test}) {
    for (const FlowRecord& r : *part) {
      ++total;
      attacks += r.true_label == 1 ? 1 : 0;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(attacks) / static_cast<double>(total);
}

namespace {

// class-stratified 71/4/25 split plus r-fraction visibility for seen tasks
TaskDataset finalize_task(std::vector<FlowRecord> records, int task_id,
                          bool seen, double labeled_ratio, rng::Engine& rng) {
  TaskDataset task;
  task.task_id = task_id;
  std::size_t attacks = 0;
  for (const FlowRecord& r : records) attacks += r.true_label == 1 ? 1 : 0;
  task.cir = records.empty()
                 ? 0.0
                 : static_cast<double>(attacks) / static_cast<double>(records.size());

  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].true_label == cls) idx.push_back(i);
    }
    rng.shuffle(idx);
    const std::size_t n = idx.size();
    const auto n_test = static_cast<std::size_t>(0.25 * static_cast<double>(n));
    const auto n_val = static_cast<std::size_t>(0.04 * static_cast<double>(n));
    const std::size_t n_train = n - n_test - n_val;
    const auto n_visible = seen ? static_cast<std::size_t>(std::llround(
                                      labeled_ratio * static_cast<double>(n_train)))
                                : 0;
    for (std::size_t k = 0; k < n; ++k) {
      FlowRecord rec = records[idx[k]];
      if (k < n_train) {
        rec.visible_label =
            k < n_visible ? std::optional<int>(rec.true_label) : std::nullopt;
        task.train.push_back(std::move(rec));
      } else if (k < n_train + n_val) {
        rec.visible_label = rec.true_label;
        task.val.push_back(std::move(rec));
      } else {
        rec.visible_label = std::nullopt;
        task.test.push_back(std::move(rec));
      }
    }
  }
  return task;
}

}  // namespace

TaskStream split_tasks(const FlowTable& table, Schema schema,
                       std::size_t seen_count, double labeled_ratio,
                       std::uint64_t seed) {
  if (labeled_ratio <= 0.0 || labeled_ratio >= 1.0) {
    throw SpecError("split_tasks: labeled ratio must be in (0,1)");
  }
  rng::Engine rng(seed);

  std::map<std::string, std::vector<std::size_t>> buckets;
  if (schema == Schema::kUnswNb15) {
    // attack rows grouped by family; benign shared across all family tasks
    std::vector<std::size_t> benign;
    for (std::size_t i = 0; i < table.records.size(); ++i) {
      if (table.records[i].true_label == 1 && !table.groups[i].empty()) {
        buckets[table.groups[i]].push_back(i);
      } else {
        benign.push_back(i);
      }
    }
    if (buckets.size() < 2) throw TaskError("split_tasks: fewer than 2 tasks");
    rng.shuffle(benign);
    std::size_t t = 0;
    std::vector<std::vector<std::size_t>*> slots;
    for (auto& [fam, idx] : buckets) slots.push_back(&idx);
    for (std::size_t i = 0; i < benign.size(); ++i) {
      slots[t]->push_back(benign[i]);
      t = (t + 1) % slots.size();
    }
  } else {
    for (std::size_t i = 0; i < table.records.size(); ++i) {
      buckets[table.groups[i]].push_back(i);
    }
    if (buckets.size() < 2) throw TaskError("split_tasks: fewer than 2 tasks");
  }
  if (seen_count < 1 || seen_count >= buckets.size()) {
    throw TaskError("split_tasks: need 1 <= seen_count < task count");
  }

  TaskStream stream;
  stream.seen_count = seen_count;
  int task_id = 1;
  for (const auto& [key, idx] : buckets) {
    std::vector<FlowRecord> records;
    records.reserve(idx.size());
    for (std::size_t i : idx) records.push_back(table.records[i]);
    rng::Engine task_rng = rng.fork();
    stream.tasks.push_back(
        finalize_task(std::move(records), task_id,
                      static_cast<std::size_t>(task_id) <= seen_count,
                      labeled_ratio, task_rng));
    ++task_id;
  }
  return stream;
}

TaskStream generate_synthetic_stream(const SyntheticSpec& spec) {
  if (spec.dims < 2) throw SpecError("synthetic: dims must be >= 2");
  if (spec.tasks < 2) throw SpecError("synthetic: need at least 2 tasks");
  if (spec.seen_count < 1 || spec.seen_count > spec.tasks) {
    throw SpecError("synthetic: need 1 <= seen_count <= tasks");
  }
  if (spec.cir_per_task.empty()) {
    throw SpecError("synthetic: cir_per_task must not be empty");
  }
  for (double c : spec.cir_per_task) {
    if (c <= 0.0 || c > 0.5) throw SpecError("synthetic: cir must be in (0, 0.5]");
  }
  if (spec.labeled_ratio <= 0.0 || spec.labeled_ratio >= 1.0) {
    throw SpecError("synthetic: labeled_ratio must be in (0,1)");
  }

  rng::Engine rng(spec.seed);
  TaskStream stream;
  stream.seen_count = spec.seen_count;
  const double angle_step = spec.drift_angle_deg * 3.14159265358979323846 / 180.0;
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    const double cir =
        spec.cir_per_task[std::min(t, spec.cir_per_task.size() - 1)];
    const auto n_attack = static_cast<std::size_t>(std::llround(
        cir * static_cast<double>(spec.samples_per_task)));
    const std::size_t n_benign = spec.samples_per_task - n_attack;

    const double theta = angle_step * static_cast<double>(t);
    // Each class rotates inside its own coordinate plane so the two clusters
    // stay directionally separated (cosine-distinguishable) under drift.
    // With fewer than four dimensions the classes share a plane, a quarter
    // turn apart.
    constexpr double kOffPlane = 0.05;
    auto cluster_center = [&](int label) {
      std::vector<double> c(spec.dims, kOffPlane);
      std::size_t p0 = 0, p1 = 1;
      double angle = theta;
      if (label == 1) {
        if (spec.dims >= 4) {
          p0 = 2;
          p1 = 3;
        } else {
          angle += 3.14159265358979323846 / 2.0;
        }
      }
      c[p0] = 0.5 + spec.cluster_offset * std::cos(angle);
      c[p1] = 0.5 + spec.cluster_offset * std::sin(angle);
      return c;
    };
    const std::vector<double> benign_center = cluster_center(0);
    const std::vector<double> attack_center = cluster_center(1);

    std::vector<FlowRecord> records;
    records.reserve(spec.samples_per_task);
    for (std::size_t i = 0; i < spec.samples_per_task; ++i) {
      const int label = i < n_benign ? 0 : 1;
      const std::vector<double>& center =
          label == 0 ? benign_center : attack_center;
      FlowRecord rec;
      rec.true_label = label;
      rec.features.resize(spec.dims);
      for (std::size_t d = 0; d < spec.dims; ++d) {
        rec.features[d] =
            std::clamp(center[d] + spec.cluster_sigma * rng.normal(), 0.0, 1.0);
      }
      records.push_back(std::move(rec));
    }
    rng::Engine task_rng = rng.fork();
    stream.tasks.push_back(finalize_task(std::move(records),
                                         static_cast<int>(t) + 1,
                                         t < spec.seen_count,
                                         spec.labeled_ratio, task_rng));
  }
  return stream;
}

namespace {
constexpr std::uint32_t kTableMagic = 0x54424c31u;  // "TBL1"
}

void save_table(const FlowTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_table: cannot open " + path);
  out.write(reinterpret_cast<const char*>(&kTableMagic), sizeof(kTableMagic));
  auto write_str = [&](const std::string& s) {
    const std::uint64_t n = s.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(s.data(), static_cast<std::streamsize>(n));
  };
  const std::uint64_t nf = table.feature_names.size();
  out.write(reinterpret_cast<const char*>(&nf), sizeof(nf));
  for (const std::string& s : table.feature_names) write_str(s);
  const std::uint64_t dedup = table.dedup_removed;
  out.write(reinterpret_cast<const char*>(&dedup), sizeof(dedup));
  const std::uint64_t nr = table.records.size();
  out.write(reinterpret_cast<const char*>(&nr), sizeof(nr));
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const FlowRecord& r = table.records[i];
    out.write(reinterpret_cast<const char*>(r.features.data()),
              static_cast<std::streamsize>(r.features.size() * sizeof(double)));
    const std::int8_t label = static_cast<std::int8_t>(r.true_label);
    out.write(reinterpret_cast<const char*>(&label), sizeof(label));
    write_str(table.groups[i]);
  }
}

FlowTable load_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_table: cannot open " + path);
  std::uint32_t magic = 0;
  in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
  if (!in || magic != kTableMagic) throw IoError("load_table: bad magic");
  auto read_str = [&]() {
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw IoError("load_table: truncated file");
    return s;
  };
  FlowTable table;
  std::uint64_t nf = 0;
  in.read(reinterpret_cast<char*>(&nf), sizeof(nf));
  for (std::uint64_t i = 0; i < nf; ++i) table.feature_names.push_back(read_str());
  std::uint64_t dedup = 0;
  in.read(reinterpret_cast<char*>(&dedup), sizeof(dedup));
  table.dedup_removed = dedup;
  std::uint64_t nr = 0;
  in.read(reinterpret_cast<char*>(&nr), sizeof(nr));
  for (std::uint64_t i = 0; i < nr; ++i) {
    FlowRecord r;
    r.features.resize(nf);
    in.read(reinterpret_cast<char*>(r.features.data()),
            static_cast<std::streamsize>(nf * sizeof(double)));
    std::int8_t label = 0;
    in.read(reinterpret_cast<char*>(&label), sizeof(label));
    if (!in) throw IoError("load_table: truncated file");
    r.true_label = label;
    table.records.push_back(std::move(r));
    table.groups.push_back(read_str());
  }
  return table;
}

}  // namespace soul::data
