#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dpsolve/metrics.hpp"
#include "dpsolve/snapshot.hpp"
#include "dpsolve/solvers.hpp"

namespace dpsolve {

struct ProblemSpec {
  /// lcqp | lcqp_kappa | logreg | network_flow | federated_quadratics
  std::string generator;
  std::uint64_t seed = 0;
  /// Validated generator parameters, as JSON text.
  std::string params_json = "{}";
  /// Load this snapshot instead of generating.
  std::optional<std::string> snapshot;
};

enum class RunMode { kDelayedProjection, kLocal };

struct SweepEntry {
  std::string label;
  RunMode mode = RunMode::kDelayedProjection;
  SolverConfig solver;
  /// Run restart_asvrg with this target instead of a single dp_asvrg call.
  std::optional<double> restart_eps;
};

struct ExperimentConfig {
  int schema_version = 1;
  ProblemSpec problem;
  std::vector<SweepEntry> sweep;
  std::string output_dir = "dpsolve_out";
  double reference_tol = 1e-10;
  Index repetitions = 1;
  std::vector<double> eps = {1e-6};
};

/// Strict parse: unknown keys, wrong types and invalid solver settings raise
/// kConfigError naming the offending field; an empty sweep raises kEmptySweep.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::string& path);

/// Generates (or loads) the problem and solves for the reference optimum.
ProblemSnapshot build_problem(const ExperimentConfig& config);

struct EntryOutcome {
  std::string label;
  std::string variant;
  Index repetition = 0;
  std::uint64_t seed_offset = 0;
  std::string csv_file;
  bool ok = false;
  std::string error;
  ComplexityCounters counters;
  double final_suboptimality = 0.0;
  double final_feasibility = 0.0;
  std::vector<ComparisonRow> to_eps;
};

struct RunSummary {
  std::vector<EntryOutcome> entries;
  bool all_ok() const;
};

/// Runs every sweep entry × repetition, writing one CSV per run plus
/// README.md and summary.json into out_dir. Repetition r uses seed offset
/// base_seed_offset + r. Failed entries are recorded, not thrown.
RunSummary run_experiment(const ExperimentConfig& config, const ProblemSnapshot& problem,
                          const std::string& out_dir, std::uint64_t base_seed_offset = 0,
                          unsigned threads = 1);

/// projections-to-eps rows for every trace in the given CSV files.
std::vector<ComparisonRow> compare_csv(const std::vector<std::string>& files,
                                       const std::vector<double>& eps);

/// Worker count from DP_THREADS (default 1, minimum 1).
unsigned threads_from_env();

}  // namespace dpsolve
