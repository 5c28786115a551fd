#include <cstdio>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpsolve/experiment.hpp"
#include "dpsolve/snapshot.hpp"
#include "dpsolve/verify.hpp"

namespace {

using namespace dpsolve;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfig = 2;

void print_table(const std::vector<ComparisonRow>& rows) {
  std::printf("%-28s %10s %8s %12s %14s %10s\n", "run", "eps", "reached", "projections",
              "gradients", "stages");
  for (const auto& r : rows) {
    std::printf("%-28s %10.3g %8s %12lld %14lld %10lld\n", r.label.c_str(), r.eps,
                r.reached ? "yes" : "no", static_cast<long long>(r.projections_to_eps),
                static_cast<long long>(r.gradients_to_eps), static_cast<long long>(r.stages_to_eps));
  }
}

int cmd_generate(const std::string& config_path, std::string out) {
  const ExperimentConfig cfg = load_config(config_path);
  const ProblemSnapshot snap = build_problem(cfg);
  if (out.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    out = (std::filesystem::path(cfg.output_dir) / "problem.dpsnap").string();
  }
  save_snapshot_file(out, snap);
  std::printf("wrote %s\n", out.c_str());
  std::printf("name %s  p %lld  N %lld\n", snap.problem.name.c_str(),
              static_cast<long long>(snap.problem.dimension()),
              static_cast<long long>(snap.problem.n_atoms()));
  std::printf("L %.17g  mu %.17g  kappa %.17g  f_star %.17g\n", snap.problem.smoothness_L,
              snap.problem.strong_convexity_mu, snap.problem.kappa(), *snap.f_star);
  return kOk;
}

int cmd_run(const std::string& config_path, std::string out, std::uint64_t seed_offset,
            const std::vector<double>& eps) {
  ExperimentConfig cfg = load_config(config_path);
  if (!eps.empty()) cfg.eps = eps;
  if (out.empty()) out = cfg.output_dir;
  const ProblemSnapshot snap = build_problem(cfg);
  std::filesystem::create_directories(out);
  save_snapshot_file((std::filesystem::path(out) / "problem.dpsnap").string(), snap);
  const RunSummary summary = run_experiment(cfg, snap, out, seed_offset, threads_from_env());
  std::vector<ComparisonRow> rows;
  for (const auto& e : summary.entries) {
    if (!e.ok) {
      std::fprintf(stderr, "entry %s rep %lld failed: %s\n", e.label.c_str(),
                   static_cast<long long>(e.repetition), e.error.c_str());
      continue;
    }
    for (auto r : e.to_eps) {
      r.label = e.label + "/rep" + std::to_string(e.repetition);
      rows.push_back(r);
    }
  }
  print_table(rows);
  std::printf("outputs in %s\n", out.c_str());
  return summary.all_ok() ? kOk : kFailure;
}

int cmd_verify(const std::string& level, bool inject) {
  VerifyOptions opts;
  opts.level = level == "full" ? VerifyLevel::kFull : VerifyLevel::kQuick;
  opts.inject_null_sign_flip = inject;
  opts.on_result = [](const CriterionResult& r) {
    std::printf("%s\n", format_result(r).c_str());
    std::fflush(stdout);
  };
  bool ok = true;
  for (const auto& r : run_verification(opts)) ok = ok && r.pass;
  std::printf("%s\n", ok ? "verification passed" : "verification FAILED");
  return ok ? kOk : kFailure;
}

int cmd_compare(const std::vector<std::string>& inputs, const std::vector<double>& eps,
                const std::string& out) {
  std::vector<std::string> files;
  for (const auto& in : inputs) {
    if (std::filesystem::is_directory(in)) {
      for (const auto& entry : std::filesystem::directory_iterator(in)) {
        if (entry.path().extension() == ".csv") files.push_back(entry.path().string());
      }
    } else {
      files.push_back(in);
    }
  }
  std::sort(files.begin(), files.end());
  const auto rows = compare_csv(files, eps.empty() ? std::vector<double>{1e-6} : eps);
  print_table(rows);
  if (!out.empty()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
      j.push_back({{"label", r.label},
                   {"eps", r.eps},
                   {"reached", r.reached},
                   {"projections", r.projections_to_eps},
                   {"gradients", r.gradients_to_eps},
                   {"iterations", r.iterations_to_eps},
                   {"stages", r.stages_to_eps}});
    }
    std::ofstream(out) << j.dump(2) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delayed-projection stochastic solvers: experiments and verification"};
  app.require_subcommand(1);

  std::string config, out, level = "quick";
  std::uint64_t seed_offset = 0;
  std::vector<double> eps;
  std::vector<std::string> inputs;
  bool inject = false;

  auto* gen = app.add_subcommand("generate", "Generate a problem snapshot from a config");
  gen->add_option("--config", config, "Experiment config (JSON)")->required();
  gen->add_option("--out", out, "Snapshot path (default <output_dir>/problem.dpsnap)");

  auto* run = app.add_subcommand("run", "Run the solver sweep of a config");
  run->add_option("--config", config, "Experiment config (JSON)")->required();
  run->add_option("--out", out, "Output directory (default: config output_dir)");
  run->add_option("--seed-offset", seed_offset, "Base seed offset for repetitions");
  run->add_option("--eps", eps, "Targets for the projections-to-eps table");

  auto* ver = app.add_subcommand("verify", "Run the built-in verification suites");
  ver->add_option("--level", level, "quick or full")->check(CLI::IsMember({"quick", "full"}));
  ver->add_flag("--inject-null-sign-flip", inject,
                "Negate every null-space projection (negative control; must fail)");

  auto* cmp = app.add_subcommand("compare", "Projections-to-eps table from trace CSVs");
  cmp->add_option("inputs", inputs, "CSV files or directories")->required();
  cmp->add_option("--eps", eps, "Targets (default 1e-6)");
  cmp->add_option("--out", out, "Also write the table as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_generate(config, out);
    if (*run) return cmd_run(config, out, seed_offset, eps);
    if (*ver) return cmd_verify(level, inject);
    if (*cmp) return cmd_compare(inputs, eps, out);
  } catch (const std::exception& e) {
    // Failures outside a sweep entry mean the config or its problem is unusable.
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfig;
  }
  return kOk;
}
