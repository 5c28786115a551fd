#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dpsolve/linalg.hpp"

namespace dpsolve {

struct ComplexityCounters {
  Index iterations = 0;
  Index stages = 0;
  Index projections = 0;
  Index gradients = 0;
  Index comm_rounds = 0;

  bool operator==(const ComplexityCounters&) const = default;
};

struct TraceRow {
  Index iter = 0;
  Index stage = 0;
  ComplexityCounters counters;
  /// NaN when no reference optimum is known.
  double suboptimality = 0.0;
  double feasibility = 0.0;
  std::int64_t wall_ns = 0;
  Index restart = 0;
  /// Row taken at a stage boundary (snapshot value) rather than mid-stage.
  bool boundary = false;
};

class RunTrace {
 public:
  RunTrace() = default;
  RunTrace(std::string run_id, std::string variant)
      : run_id_(std::move(run_id)), variant_(std::move(variant)) {}

  /// Appends a row; throws kMonotonicityViolation if any counter (or iter)
  /// decreased relative to the previous row.
  void record(const TraceRow& row);

  const std::vector<TraceRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  const TraceRow& back() const { return rows_.back(); }

  const std::string& run_id() const { return run_id_; }
  const std::string& variant() const { return variant_; }
  void set_run_id(std::string id) { run_id_ = std::move(id); }
  void set_variant(std::string v) { variant_ = std::move(v); }

  /// Rows taken at stage boundaries.
  std::vector<TraceRow> boundary_rows() const;

 private:
  std::string run_id_;
  std::string variant_;
  std::vector<TraceRow> rows_;
};

struct ComparisonRow {
  std::string label;
  double eps = 0.0;
  Index projections_to_eps = 0;
  Index gradients_to_eps = 0;
  Index iterations_to_eps = 0;
  Index stages_to_eps = 0;
  bool reached = false;
};

/// Counters at the first row with suboptimality ≤ eps.
ComparisonRow complexity_to_eps(const RunTrace& trace, double eps, std::string label = {});

inline constexpr const char* kCsvHeader =
    "run_id,variant,stage,iter,projections,gradients,comm_rounds,suboptimality,feasibility,wall_ns";

void write_csv(std::ostream& out, std::span<const RunTrace> traces);
void write_csv(std::ostream& out, const RunTrace& trace);
/// Inverse of write_csv; rows are grouped by run_id in order of appearance.
std::vector<RunTrace> read_csv(std::istream& in);

}  // namespace dpsolve
