#pragma once

#include <cstdint>

#include "dpsolve/linalg.hpp"
#include "dpsolve/metrics.hpp"
#include "dpsolve/problems.hpp"
#include "dpsolve/solvers.hpp"

namespace dpsolve {

struct CommLog {
  Index rounds = 0;
  Index vectors_transferred = 0;
  Index bytes_equivalent = 0;
};

struct FederatedResult {
  /// Output point (length d).
  Vector x_hat;
  /// Last synchronized average.
  Vector last_average;
  RunTrace trace;
  ComplexityCounters counters;
  CommLog comm;
  std::vector<Vector> snapshots;
  double eta = 0.0;
};

// Workers run sequentially in id order; synchronization is block_mean over
// workers. Traces report f(x̄) − f(x*) for f = (1/n)Σfₖ. config.x0 is a
// length-d start point (default 0); config.x_star / f_star are ignored.
// StepInfo::x carries the worker-major stack of all worker states.

FederatedResult local_sgd(const FederatedInstance& fed, const SolverConfig& config);
FederatedResult local_svrg(const FederatedInstance& fed, const SolverConfig& config);
FederatedResult local_asvrg(const FederatedInstance& fed, const SolverConfig& config);
FederatedResult run_local(const FederatedInstance& fed, const SolverConfig& config);

struct EquivalenceReport {
  double max_iterate_gap = 0.0;
  double max_norm = 0.0;
  Index steps = 0;
  bool counts_match = false;
  bool pass = false;
};

/// Runs the local variant and the DP variant on lift_consensus(fed) with the
/// same seed and compares the stacked worker states with the lifted iterate
/// after every step. seed_offset ≠ 0 decouples the local RNG streams.
EquivalenceReport equivalence_harness(const FederatedInstance& fed, Variant variant,
                                      const SolverConfig& config, std::uint64_t seed_offset = 0);

}  // namespace dpsolve
