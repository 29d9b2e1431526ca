#pragma once

// Experiment driver behind the acsl_lab CLI: a JSON config describes the
// dataset, the two-stage schedule and either a single loss with an optional
// sweep axis (xi values or group-partition dividing lines) or a list of
// losses to compare on the same data. Every run writes a per-run report and
// training log; a combined table links back to those files.
//
// Output directory layout:
//   config.json               resolved config, every default filled in
//   reports/<label>.tsv|json  per-run GroupReport
//   logs/<label>.tsv          per-run training log
//   summary.tsv               run: one row per sweep point, sorted by value
//   comparison.tsv            compare: one row per loss, deltas vs the first

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acsl/metrics.hpp"
#include "acsl/synth_data.hpp"
#include "acsl/trainer.hpp"

namespace acsl {

using json = nlohmann::ordered_json;

enum class TrainMode { kTwoStage, kEndToEnd };
enum class SweepAxis { kNone, kXi, kPartition };

/// One training job: a loss and whether it fine-tunes a softmax stage-1
/// model (two_stage) or trains everything with that loss (end_to_end).
struct RunSpec {
  std::string name;
  LossSpec loss{LossFamily::kAcsl, {}, {}, {}};
  TrainMode mode = TrainMode::kTwoStage;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  TwoStageSchedule schedule;
  RunSpec run{"acsl", {LossFamily::kAcsl, {}, {}, {}}, TrainMode::kTwoStage};
  SweepAxis axis = SweepAxis::kNone;
  std::vector<double> xi_values;
  std::vector<std::vector<std::size_t>> partition_values;
  std::vector<RunSpec> compare;
  std::uint64_t seed = 1;
  std::string output_dir = "acsl_out";
  std::size_t jobs = 1;

  /// Propagates the experiment seed to dataset and both stages.
  void apply_seed() {
    dataset.seed = seed;
    schedule.stage1.seed = seed;
    schedule.stage2.seed = seed;
  }

  void validate() const {
    dataset.validate();
    schedule.validate();
    if (jobs == 0) throw ConfigError("jobs must be positive");
    if (axis == SweepAxis::kXi) {
      if (xi_values.empty()) throw ConfigError("sweep.values must be non-empty for the xi axis");
      if (run.loss.family != LossFamily::kAcsl) throw ConfigError("sweep.axis xi requires loss.family acsl");
      for (double xi : xi_values) AcslConfig{xi}.validate();
    }
    if (axis == SweepAxis::kPartition) {
      if (partition_values.empty()) throw ConfigError("sweep.values must be non-empty for the partition axis");
      if (run.loss.family != LossFamily::kGroupSoftmax) {
        throw ConfigError("sweep.axis partition requires loss.family group_softmax");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

inline const char* to_string(TrainMode m) { return m == TrainMode::kTwoStage ? "two_stage" : "end_to_end"; }

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kNone: return "none";
    case SweepAxis::kXi: return "xi";
    case SweepAxis::kPartition: return "partition";
  }
  return "?";
}

/// Reads optional fields out of a JSON object, naming the offending path on
/// type errors and rejecting unknown keys.
class FieldReader {
 public:
  FieldReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("");
      }
      out = it->template get<T>();
    } catch (const std::exception&) {
      throw ConfigError(field(key) + ": wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.push_back(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
        throw ConfigError(field(key.c_str()) + ": unknown field");
      }
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string> seen_;
};

inline void read_dataset_spec(const json& j, DatasetSpec& s, const std::string& path) {
  FieldReader r(j, path);
  r.get("num_classes", s.num_classes);
  r.get("feature_dim", s.feature_dim);
  r.get("zipf_exponent", s.zipf_exponent);
  r.get("max_count", s.max_count);
  r.get("min_count", s.min_count);
  r.get("background_fraction", s.background_fraction);
  r.get("cluster_spread", s.cluster_spread);
  r.get("separation_radius", s.separation_radius);
  r.get("background_spread", s.background_spread);
  r.get("confusable_pairs", s.confusable_pairs);
  r.get("confusable_distance", s.confusable_distance);
  r.get("test_per_class", s.test_per_class);
  r.get("rare_max", s.groups.rare_max);
  r.get("common_max", s.groups.common_max);
  r.finish();
}

inline json write_dataset_spec(const DatasetSpec& s) {
  return {{"num_classes", s.num_classes},
          {"feature_dim", s.feature_dim},
          {"zipf_exponent", s.zipf_exponent},
          {"max_count", s.max_count},
          {"min_count", s.min_count},
          {"background_fraction", s.background_fraction},
          {"cluster_spread", s.cluster_spread},
          {"separation_radius", s.separation_radius},
          {"background_spread", s.background_spread},
          {"confusable_pairs", s.confusable_pairs},
          {"confusable_distance", s.confusable_distance},
          {"test_per_class", s.test_per_class},
          {"rare_max", s.groups.rare_max},
          {"common_max", s.groups.common_max}};
}

inline void read_train_config(const json& j, TrainConfig& c, const std::string& path) {
  FieldReader r(j, path);
  r.get("base_lr", c.base_lr);
  r.get("momentum", c.momentum);
  r.get("weight_decay", c.weight_decay);
  r.get("warmup_iters", c.warmup_iters);
  r.get("warmup_ratio", c.warmup_ratio);
  r.get("decay_milestones", c.decay_milestones);
  r.get("decay_factor", c.decay_factor);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.finish();
}

inline json write_train_config(const TrainConfig& c) {
  return {{"base_lr", c.base_lr},         {"momentum", c.momentum},
          {"weight_decay", c.weight_decay}, {"warmup_iters", c.warmup_iters},
          {"warmup_ratio", c.warmup_ratio}, {"decay_milestones", c.decay_milestones},
          {"decay_factor", c.decay_factor}, {"epochs", c.epochs},
          {"batch_size", c.batch_size}};
}

inline void read_run_spec(const json& j, RunSpec& run, const std::string& path) {
  FieldReader r(j, path);
  std::string family = to_string(run.loss.family);
  std::string mode = to_string(run.mode);
  r.get("name", run.name);
  r.get("family", family);
  r.get("mode", mode);
  r.get("xi", run.loss.acsl.xi);
  r.get("eql_tail_threshold", run.loss.eql.tail_threshold);
  r.get("group_thresholds", run.loss.group_thresholds);
  r.finish();
  try {
    run.loss.family = parse_loss_family(family);
  } catch (const ConfigError& e) {
    throw ConfigError(r.field("family") + ": " + e.what());
  }
  if (mode == "two_stage") {
    run.mode = TrainMode::kTwoStage;
  } else if (mode == "end_to_end") {
    run.mode = TrainMode::kEndToEnd;
  } else {
    throw ConfigError(r.field("mode") + ": expected two_stage or end_to_end");
  }
  try {
    run.loss.acsl.validate();
  } catch (const std::exception& e) {
    throw ConfigError(r.field("xi") + ": " + e.what());
  }
  try {
    run.loss.eql.validate();
  } catch (const std::exception& e) {
    throw ConfigError(r.field("eql_tail_threshold") + ": " + e.what());
  }
  if (run.name.empty()) run.name = family;
}

inline json write_run_spec(const RunSpec& run) {
  return {{"name", run.name},
          {"family", ::acsl::to_string(run.loss.family)},
          {"mode", to_string(run.mode)},
          {"xi", run.loss.acsl.xi},
          {"eql_tail_threshold", run.loss.eql.tail_threshold},
          {"group_thresholds", run.loss.group_thresholds}};
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const json& j) {
  ExperimentConfig cfg;
  detail::FieldReader r(j, "");
  r.get("seed", cfg.seed);
  r.get("output_dir", cfg.output_dir);
  r.get("jobs", cfg.jobs);
  if (const json* d = r.child("dataset")) detail::read_dataset_spec(*d, cfg.dataset, "dataset");
  if (const json* s = r.child("schedule")) {
    detail::FieldReader sr(*s, "schedule");
    sr.get("hidden_dim", cfg.schedule.hidden_dim);
    sr.get("stage2_lr_scale", cfg.schedule.stage2_lr_scale);
    sr.get("background_retention", cfg.schedule.background_retention);
    if (const json* s1 = sr.child("stage1")) detail::read_train_config(*s1, cfg.schedule.stage1, "schedule.stage1");
    if (const json* s2 = sr.child("stage2")) detail::read_train_config(*s2, cfg.schedule.stage2, "schedule.stage2");
    sr.finish();
  }
  if (const json* l = r.child("loss")) detail::read_run_spec(*l, cfg.run, "loss");
  if (const json* sw = r.child("sweep")) {
    detail::FieldReader wr(*sw, "sweep");
    std::string axis = "none";
    wr.get("axis", axis);
    const json* values = wr.child("values");
    wr.finish();
    if (axis == "none") {
      cfg.axis = SweepAxis::kNone;
    } else if (axis == "xi") {
      cfg.axis = SweepAxis::kXi;
      if (values == nullptr || !values->is_array()) throw ConfigError("sweep.values: expected an array of numbers");
      for (const json& v : *values) {
        if (!v.is_number()) throw ConfigError("sweep.values: expected an array of numbers");
        cfg.xi_values.push_back(v.get<double>());
      }
    } else if (axis == "partition") {
      cfg.axis = SweepAxis::kPartition;
      if (values == nullptr || !values->is_array()) throw ConfigError("sweep.values: expected an array");
      for (const json& v : *values) {
        if (v.is_number_unsigned()) {
          cfg.partition_values.push_back({v.get<std::size_t>()});
        } else if (v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number_unsigned(); })) {
          cfg.partition_values.push_back(v.get<std::vector<std::size_t>>());
        } else {
          throw ConfigError("sweep.values: partition points are counts or arrays of counts");
        }
      }
    } else {
      throw ConfigError("sweep.axis: expected none, xi or partition");
    }
  }
  if (const json* c = r.child("compare")) {
    if (!c->is_array()) throw ConfigError("compare: expected an array");
    for (std::size_t i = 0; i < c->size(); ++i) {
      RunSpec run;
      detail::read_run_spec((*c)[i], run, "compare[" + std::to_string(i) + "]");
      cfg.compare.push_back(std::move(run));
    }
  }
  r.finish();
  cfg.apply_seed();
  try {
    cfg.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline json to_json(const ExperimentConfig& cfg) {
  json sweep{{"axis", detail::to_string(cfg.axis)}};
  if (cfg.axis == SweepAxis::kXi) sweep["values"] = cfg.xi_values;
  if (cfg.axis == SweepAxis::kPartition) sweep["values"] = cfg.partition_values;
  json compare = json::array();
  for (const RunSpec& r : cfg.compare) compare.push_back(detail::write_run_spec(r));
  return {{"seed", cfg.seed},
          {"output_dir", cfg.output_dir},
          {"jobs", cfg.jobs},
          {"dataset", detail::write_dataset_spec(cfg.dataset)},
          {"schedule",
           {{"hidden_dim", cfg.schedule.hidden_dim},
            {"stage2_lr_scale", cfg.schedule.stage2_lr_scale},
            {"background_retention", cfg.schedule.background_retention},
            {"stage1", detail::write_train_config(cfg.schedule.stage1)},
            {"stage2", detail::write_train_config(cfg.schedule.stage2)}}},
          {"loss", detail::write_run_spec(cfg.run)},
          {"sweep", sweep},
          {"compare", compare}};
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

// ---------------------------------------------------------------------------
// Running

struct RunOutcome {
  std::string label;
  RunSpec spec;
  GroupReport report;
  TrainingLog log;
  std::string score_semantics;
};

/// Trains and evaluates one run. `stage1` is the shared softmax stage-1
/// result for two-stage runs.
inline RunOutcome execute_run(const LongTailDataset& data, const TwoStageSchedule& sched, const RunSpec& spec,
                              const std::string& label, const std::optional<TrainResult>& stage1) {
  TrainResult result;
  if (spec.mode == TrainMode::kEndToEnd) {
    TwoStageSchedule s = sched;
    s.stage1_loss = spec.loss;
    result = train_stage1(data, s);
  } else {
    TwoStageSchedule s = sched;
    s.stage2_loss = spec.loss;
    result = train_stage2(data, s, stage1 ? *stage1 : train_stage1(data, s));
  }
  const LossHead head(spec.loss, data.class_counts);
  return {label, spec, evaluate(result.model, head, data), std::move(result.log), head.score_semantics()};
}

namespace detail {

/// Shortest decimal that round-trips, for labels and sweep values.
inline std::string short_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os << content;
    if (!os.flush()) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string delta(const std::optional<double>& v, const std::optional<double>& base) {
  return (v && base) ? format_double(*v - *base) : std::string("absent");
}

}  // namespace detail

inline json report_json(const RunOutcome& run, std::span<const std::size_t> class_counts) {
  json per_class = json::array();
  for (std::size_t c = 0; c < run.report.per_class.size(); ++c) {
    per_class.push_back({{"class", c},
                         {"group", to_string(run.report.group_of[c])},
                         {"train_count", class_counts[c]},
                         {"ap", detail::optional_json(run.report.per_class[c])}});
  }
  return {{"label", run.label},
          {"run", detail::write_run_spec(run.spec)},
          {"score_semantics", run.score_semantics},
          {"per_class", per_class},
          {"excluded", run.report.excluded},
          {"summary",
           {{"m_ap", run.report.m_ap},
            {"ap_r", detail::optional_json(run.report.ap_r)},
            {"ap_c", detail::optional_json(run.report.ap_c)},
            {"ap_f", detail::optional_json(run.report.ap_f)}}}};
}

/// Writes reports/<label>.{tsv,json} and logs/<label>.tsv.
inline void persist_run(const std::filesystem::path& out, const RunOutcome& run,
                        std::span<const std::size_t> class_counts) {
  std::ostringstream tsv;
  write_report_tsv(tsv, run.report, class_counts, run.score_semantics);
  detail::write_atomic(out / "reports" / (run.label + ".tsv"), tsv.str());
  detail::write_atomic(out / "reports" / (run.label + ".json"), report_json(run, class_counts).dump(2) + "\n");
  std::ostringstream log;
  write_training_log(log, run.log);
  detail::write_atomic(out / "logs" / (run.label + ".tsv"), log.str());
}

namespace detail {

/// Runs jobs with at most `parallelism` in flight; results in job order.
template <typename Job>
std::vector<RunOutcome> run_all(const std::vector<Job>& jobs, std::size_t parallelism) {
  std::vector<RunOutcome> out;
  out.reserve(jobs.size());
  for (std::size_t start = 0; start < jobs.size(); start += parallelism) {
    const std::size_t stop = std::min(jobs.size(), start + parallelism);
    std::vector<std::future<RunOutcome>> pending;
    for (std::size_t i = start; i < stop; ++i) {
      pending.push_back(std::async(parallelism > 1 ? std::launch::async : std::launch::deferred, jobs[i]));
    }
    for (auto& f : pending) out.push_back(f.get());
  }
  return out;
}

inline std::string sanitize_label(const std::string& s) {
  std::string out;
  for (char ch : s) out.push_back(std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' ? ch : '_');
  return out.empty() ? std::string("run") : out;
}

inline bool needs_stage1(const std::vector<RunSpec>& runs) {
  return std::any_of(runs.begin(), runs.end(), [](const RunSpec& r) { return r.mode == TrainMode::kTwoStage; });
}

}  // namespace detail

/// Sweep (or single) run. Returns the outcomes sorted by sweep value.
inline std::vector<RunOutcome> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const LongTailDataset data = sample_dataset(cfg.dataset);
  const std::filesystem::path out(cfg.output_dir);

  std::vector<RunSpec> points;
  std::vector<std::string> labels;
  if (cfg.axis == SweepAxis::kXi) {
    std::vector<double> values = cfg.xi_values;
    std::sort(values.begin(), values.end());
    for (double xi : values) {
      RunSpec r = cfg.run;
      r.loss.acsl.xi = xi;
      points.push_back(r);
      labels.push_back("xi_" + detail::short_number(xi));
    }
  } else if (cfg.axis == SweepAxis::kPartition) {
    auto values = cfg.partition_values;
    std::sort(values.begin(), values.end());
    for (const auto& thresholds : values) {
      RunSpec r = cfg.run;
      r.loss.group_thresholds = thresholds;
      points.push_back(r);
      std::string label = "partition";
      for (std::size_t t : thresholds) label += "_" + std::to_string(t);
      labels.push_back(label);
    }
  } else {
    points.push_back(cfg.run);
    labels.push_back(detail::sanitize_label(cfg.run.name));
  }

  std::optional<TrainResult> stage1;
  if (detail::needs_stage1(points)) stage1 = train_stage1(data, cfg.schedule);

  std::vector<std::function<RunOutcome()>> jobs;
  for (std::size_t i = 0; i < points.size(); ++i) {
    jobs.push_back([&, i] { return execute_run(data, cfg.schedule, points[i], labels[i], stage1); });
  }
  std::vector<RunOutcome> outcomes = detail::run_all(jobs, cfg.jobs);

  detail::write_atomic(out / "config.json", to_json(cfg).dump(2) + "\n");
  std::ostringstream summary;
  summary << "point\tsweep_value\tloss\tmode\tm_ap\tap_r\tap_c\tap_f\treport\n";
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const RunOutcome& o = outcomes[i];
    persist_run(out, o, data.class_counts);
    std::string value = "-";
    if (cfg.axis == SweepAxis::kXi) value = detail::short_number(o.spec.loss.acsl.xi);
    if (cfg.axis == SweepAxis::kPartition) {
      value.clear();
      for (std::size_t t : o.spec.loss.group_thresholds) value += (value.empty() ? "" : ",") + std::to_string(t);
    }
    summary << o.label << '\t' << value << '\t' << to_string(o.spec.loss.family) << '\t'
            << detail::to_string(o.spec.mode) << '\t' << detail::format_double(o.report.m_ap) << '\t'
            << detail::optional_number(o.report.ap_r) << '\t' << detail::optional_number(o.report.ap_c) << '\t'
            << detail::optional_number(o.report.ap_f) << "\treports/" << o.label << ".tsv\n";
  }
  detail::write_atomic(out / "summary.tsv", summary.str());
  return outcomes;
}

/// Trains every listed loss on the same dataset and seed; deltas are
/// relative to the first entry.
inline std::vector<RunOutcome> compare_losses(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.compare.size() < 2) throw ConfigError("compare: at least two losses are required");
  const LongTailDataset data = sample_dataset(cfg.dataset);
  const std::filesystem::path out(cfg.output_dir);

  std::vector<std::string> labels;
  for (std::size_t i = 0; i < cfg.compare.size(); ++i) {
    labels.push_back(std::to_string(i) + "_" + detail::sanitize_label(cfg.compare[i].name));
  }
  std::optional<TrainResult> stage1;
  if (detail::needs_stage1(cfg.compare)) stage1 = train_stage1(data, cfg.schedule);

  std::vector<std::function<RunOutcome()>> jobs;
  for (std::size_t i = 0; i < cfg.compare.size(); ++i) {
    jobs.push_back([&, i] { return execute_run(data, cfg.schedule, cfg.compare[i], labels[i], stage1); });
  }
  std::vector<RunOutcome> outcomes = detail::run_all(jobs, cfg.jobs);

  detail::write_atomic(out / "config.json", to_json(cfg).dump(2) + "\n");
  const GroupReport& base = outcomes.front().report;
  std::ostringstream table;
  table << "name\tloss\tmode\tm_ap\tap_r\tap_c\tap_f\tdelta_m_ap\tdelta_ap_r\tdelta_ap_c\tdelta_ap_f\treport\n";
  for (const RunOutcome& o : outcomes) {
    persist_run(out, o, data.class_counts);
    const GroupReport& r = o.report;
    table << o.spec.name << '\t' << to_string(o.spec.loss.family) << '\t' << detail::to_string(o.spec.mode) << '\t'
          << detail::format_double(r.m_ap) << '\t' << detail::optional_number(r.ap_r) << '\t'
          << detail::optional_number(r.ap_c) << '\t' << detail::optional_number(r.ap_f) << '\t'
          << detail::format_double(r.m_ap - base.m_ap) << '\t' << detail::delta(r.ap_r, base.ap_r) << '\t'
          << detail::delta(r.ap_c, base.ap_c) << '\t' << detail::delta(r.ap_f, base.ap_f) << "\treports/" << o.label
          << ".tsv\n";
  }
  detail::write_atomic(out / "comparison.tsv", table.str());
  return outcomes;
}

}  // namespace acsl
