// acsl_lab: command-line driver for runs, sweeps, loss comparisons, dataset
// export and the finite-difference gradient suite.
//
//   acsl_lab run        --config exp.json [--out DIR] [--seed N] [--jobs N]
//   acsl_lab compare    --config exp.json [--out DIR] [--seed N] [--jobs N]
//   acsl_lab gen-data   [--config exp.json] [--out DIR] [--seed N]
//   acsl_lab check-grad [--trials N] [--seed N]
//
// Exit codes: 0 ok, 1 gradient check failed, 2 config or usage error,
// 3 training diverged, 4 I/O failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "acsl/experiment.hpp"
#include "acsl/gradcheck.hpp"

namespace {

enum ExitCode { kOk = 0, kCheckFailed = 1, kConfigError = 2, kDiverged = 3, kIoError = 4 };

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::size_t trials = 1000;
  double tolerance = 1e-5;
};

acsl::ExperimentConfig resolve(const Options& opt) {
  acsl::ExperimentConfig cfg = opt.config.empty() ? acsl::ExperimentConfig{} : acsl::load_experiment_config(opt.config);
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.jobs) cfg.jobs = *opt.jobs;
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  cfg.apply_seed();
  cfg.validate();
  return cfg;
}

void print_summary(const std::vector<acsl::RunOutcome>& runs) {
  for (const auto& r : runs) {
    std::printf("%-28s m_ap=%.4f ap_r=%s ap_c=%s ap_f=%s\n", r.label.c_str(), r.report.m_ap,
                acsl::detail::optional_number(r.report.ap_r).c_str(),
                acsl::detail::optional_number(r.report.ap_c).c_str(),
                acsl::detail::optional_number(r.report.ap_f).c_str());
  }
}

int check_grad(const Options& opt) {
  const std::uint64_t seed = opt.seed.value_or(1);
  bool ok = true;
  auto show = [&](const std::vector<acsl::GradCheckResult>& results) {
    for (const auto& r : results) {
      const bool pass = r.max_rel_error <= opt.tolerance;
      ok = ok && pass;
      std::printf("%-22s cases=%-6zu max_rel_error=%.3e %s\n", r.name.c_str(), r.cases, r.max_rel_error,
                  pass ? "ok" : "FAIL");
    }
  };
  show(acsl::check_loss_gradients(opt.trials, seed));
  show(acsl::check_model_gradients(std::max<std::size_t>(1, opt.trials / 50), seed));
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tail loss experiments on synthetic data"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("-c,--config", opt.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    if (needs_config) c->required();
    sub->add_option("-o,--out", opt.out, "output directory (overrides output_dir)");
    sub->add_option("-s,--seed", opt.seed, "seed override for dataset and training");
  };
  auto* run = app.add_subcommand("run", "train and evaluate one run or a sweep");
  add_common(run, true);
  run->add_option("-j,--jobs", opt.jobs, "sweep points trained concurrently")->check(CLI::PositiveNumber);
  auto* compare = app.add_subcommand("compare", "train every listed loss on the same data");
  add_common(compare, true);
  compare->add_option("-j,--jobs", opt.jobs, "losses trained concurrently")->check(CLI::PositiveNumber);
  auto* gen = app.add_subcommand("gen-data", "write the sampled dataset to <out>/dataset.tsv");
  add_common(gen, false);
  auto* grad = app.add_subcommand("check-grad", "finite-difference check of every analytic gradient");
  grad->add_option("-s,--seed", opt.seed, "random seed");
  grad->add_option("-n,--trials", opt.trials, "random triples per loss")->check(CLI::PositiveNumber);
  grad->add_option("--tolerance", opt.tolerance, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (grad->parsed()) return check_grad(opt);
    const acsl::ExperimentConfig cfg = resolve(opt);
    if (gen->parsed()) {
      const auto path = std::filesystem::path(cfg.output_dir) / "dataset.tsv";
      std::filesystem::create_directories(path.parent_path());
      acsl::save_dataset(path.string(), acsl::sample_dataset(cfg.dataset));
      std::printf("wrote %s\n", path.string().c_str());
    } else if (run->parsed()) {
      print_summary(acsl::run_experiment(cfg));
    } else {
      print_summary(acsl::compare_losses(cfg));
    }
    return kOk;
  } catch (const acsl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const acsl::TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const acsl::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIoError;
  } catch (const acsl::InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kConfigError;
  }
}
