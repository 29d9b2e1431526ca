#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "acsl/experiment.hpp"
#include "test_support.hpp"

using namespace acsl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("acsl_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string config_error(const std::string& text) {
  try {
    parse_experiment_config(json::parse(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsWhenEmpty) {
  const ExperimentConfig cfg = parse_experiment_config(json::object());
  EXPECT_EQ(cfg.dataset.num_classes, 30u);
  EXPECT_EQ(cfg.run.loss.family, LossFamily::kAcsl);
  EXPECT_DOUBLE_EQ(cfg.run.loss.acsl.xi, 0.7);
  EXPECT_EQ(cfg.axis, SweepAxis::kNone);
}

TEST(Config, SeedPropagates) {
  const ExperimentConfig cfg = parse_experiment_config(json::parse(R"({"seed": 42})"));
  EXPECT_EQ(cfg.dataset.seed, 42u);
  EXPECT_EQ(cfg.schedule.stage1.seed, 42u);
  EXPECT_EQ(cfg.schedule.stage2.seed, 42u);
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_NE(config_error(R"({"dataset": {"num_clases": 3}})").find("dataset.num_clases"), std::string::npos);
  EXPECT_NE(config_error(R"({"loss": {"xi": 1.5}})").find("loss.xi"), std::string::npos);
  EXPECT_NE(config_error(R"({"loss": {"family": "focal"}})").find("loss.family"), std::string::npos);
  EXPECT_NE(config_error(R"({"schedule": {"stage1": {"epochs": "ten"}}})").find("schedule.stage1.epochs"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"sweep": {"axis": "xi", "values": []}})").find("sweep.values"), std::string::npos);
  EXPECT_NE(config_error(R"({"sweep": {"axis": "xi", "values": [0.5]}, "loss": {"family": "bce"}})")
                .find("sweep.axis"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"compare": [{"mode": "sideways"}]})").find("compare[0].mode"), std::string::npos);
}

TEST(Config, ResolvedConfigRoundTrips) {
  const ExperimentConfig cfg = parse_experiment_config(
      json::parse(R"({"seed": 3, "sweep": {"axis": "xi", "values": [0.1, 0.5]}, "dataset": {"feature_dim": 8}})"));
  const ExperimentConfig again = parse_experiment_config(to_json(cfg));
  EXPECT_EQ(to_json(again).dump(), to_json(cfg).dump());
}

TEST(Run, SinglePointWritesOneReport) {
  const fs::path out = scratch_dir("single");
  auto cfg = fixtures::tiny_experiment(out.string());
  const auto runs = run_experiment(cfg);
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_TRUE(fs::exists(out / "reports" / "acsl.tsv"));
  EXPECT_TRUE(fs::exists(out / "reports" / "acsl.json"));
  EXPECT_TRUE(fs::exists(out / "logs" / "acsl.tsv"));
  EXPECT_TRUE(fs::exists(out / "config.json"));
  const json report = json::parse(slurp(out / "reports" / "acsl.json"));
  EXPECT_EQ(report["per_class"].size(), 6u);
  EXPECT_EQ(report["score_semantics"], "sigmoid confidence");
}

TEST(Run, XiSweepSortedWithLinkedReports) {
  const fs::path out = scratch_dir("sweep");
  auto cfg = fixtures::tiny_experiment(out.string());
  cfg.axis = SweepAxis::kXi;
  cfg.xi_values = {0.7, 0.01, 0.3};
  cfg.jobs = 2;
  run_experiment(cfg);
  std::istringstream summary(slurp(out / "summary.tsv"));
  std::string line;
  std::getline(summary, line);
  std::vector<std::string> labels;
  while (std::getline(summary, line)) {
    const std::string label = line.substr(0, line.find('\t'));
    labels.push_back(label);
    EXPECT_NE(line.find("reports/" + label + ".tsv"), std::string::npos);
    EXPECT_TRUE(fs::exists(out / "reports" / (label + ".tsv")));
  }
  EXPECT_EQ(labels, (std::vector<std::string>{"xi_0.01", "xi_0.3", "xi_0.7"}));
}

TEST(Run, RerunIsByteIdentical) {
  const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
  auto cfg = fixtures::tiny_experiment(a.string());
  cfg.axis = SweepAxis::kXi;
  cfg.xi_values = {0.2, 0.6};
  run_experiment(cfg);
  cfg.output_dir = b.string();
  cfg.jobs = 2;
  run_experiment(cfg);
  for (const char* f : {"reports/xi_0.2.tsv", "reports/xi_0.6.json", "logs/xi_0.6.tsv", "summary.tsv"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST(Compare, SelfComparisonHasZeroDeltas) {
  const fs::path out = scratch_dir("compare");
  auto cfg = fixtures::tiny_experiment(out.string());
  RunSpec acsl{"acsl", {LossFamily::kAcsl, {0.5}, {}, {}}, TrainMode::kTwoStage};
  cfg.compare = {acsl, acsl};
  const auto runs = compare_losses(cfg);
  ASSERT_EQ(runs.size(), 2u);
  std::istringstream table(slurp(out / "comparison.tsv"));
  std::string header, first, second;
  std::getline(table, header);
  std::getline(table, first);
  std::getline(table, second);
  EXPECT_NE(second.find("\t0\t0\t0\t0\treports/1_acsl.tsv"), std::string::npos) << second;
}

TEST(Compare, NeedsTwoLosses) {
  auto cfg = fixtures::tiny_experiment(scratch_dir("compare_one").string());
  cfg.compare = {RunSpec{}};
  EXPECT_THROW(compare_losses(cfg), ConfigError);
}

TEST(Compare, MixedFamiliesAndModes) {
  const fs::path out = scratch_dir("compare_mixed");
  auto cfg = fixtures::tiny_experiment(out.string());
  cfg.compare = {{"bce", {LossFamily::kBce, {}, {}, {}}, TrainMode::kEndToEnd},
                 {"eql", {LossFamily::kEql, {}, {30.0}, {}}, TrainMode::kTwoStage},
                 {"gs", {LossFamily::kGroupSoftmax, {}, {}, {20}}, TrainMode::kTwoStage},
                 {"acsl", {LossFamily::kAcsl, {0.7}, {}, {}}, TrainMode::kTwoStage}};
  const auto runs = compare_losses(cfg);
  ASSERT_EQ(runs.size(), 4u);
  EXPECT_EQ(runs[2].score_semantics, "within-group softmax probability");
  for (const auto& r : runs) {
    EXPECT_GE(r.report.m_ap, 0.0);
    EXPECT_LE(r.report.m_ap, 1.0);
  }
}

TEST(Run, UnwritableOutputIsIoError) {
  auto cfg = fixtures::tiny_experiment("/proc/acsl_cannot_write_here");
  EXPECT_THROW(run_experiment(cfg), IoError);
}
