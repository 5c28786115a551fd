#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include "dpsolve/problems.hpp"

namespace dpsolve {

/// A problem plus the metadata needed to rerun experiments on it.
struct ProblemSnapshot {
  LcpProblem problem;
  std::optional<Vector> x_star;
  std::optional<double> f_star;
  /// Free-form provenance (generator name, parameters).
  std::map<std::string, std::string> tags;
};

// Text container, line oriented:
//
//   DPSNAP 1
//   text <key> <value to end of line>
//   scalar <key> <hexfloat>
//   matrix <key> <rows> <cols>
//   <row 0: cols hexfloats>
//   ...
//   end
//
// Matrices are row-major float64 in C99 hexfloat form, so a save/load cycle
// is bit-exact. Objectives are stored as data, not as generator calls;
// callback edge costs cannot be stored.

void save_snapshot(std::ostream& out, const ProblemSnapshot& snapshot);
ProblemSnapshot load_snapshot(std::istream& in);

void save_snapshot_file(const std::string& path, const ProblemSnapshot& snapshot);
ProblemSnapshot load_snapshot_file(const std::string& path);

/// Rebuilds the federated view of a lifted problem.
std::optional<FederatedInstance> federated_view(const LcpProblem& problem);

}  // namespace dpsolve
