#pragma once

#include <chrono>
#include <functional>
#include <string>

#include "dpsolve/error.hpp"
#include "dpsolve/metrics.hpp"

namespace dpsolve::detail {

/// Appends trace rows at the configured cadence and keeps the clock.
class Recorder {
 public:
  using Eval = std::function<double(const Vector&)>;

  Recorder(RunTrace& trace, ComplexityCounters& counters, Index record_every, Eval suboptimality,
           Eval feasibility)
      : trace_(trace),
        counters_(counters),
        record_every_(record_every),
        suboptimality_(std::move(suboptimality)),
        feasibility_(std::move(feasibility)),
        start_(std::chrono::steady_clock::now()) {}

  void set_restart(Index r) { restart_ = r; }

  void record(const Vector& x, bool boundary) {
    TraceRow row;
    row.iter = counters_.iterations;
    row.stage = counters_.stages;
    row.counters = counters_;
    row.suboptimality = suboptimality_(x);
    row.feasibility = feasibility_(x);
    row.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                      std::chrono::steady_clock::now() - start_)
                      .count();
    row.restart = restart_;
    row.boundary = boundary;
    trace_.record(row);
  }

  /// Called after every projection event inside a loop.
  void projection_event(const Vector& x) {
    ++events_;
    if (record_every_ > 0 && events_ % record_every_ == 0) record(x, false);
  }

  double suboptimality(const Vector& x) const { return suboptimality_(x); }

 private:
  RunTrace& trace_;
  ComplexityCounters& counters_;
  Index record_every_;
  Eval suboptimality_;
  Eval feasibility_;
  std::chrono::steady_clock::time_point start_;
  Index restart_ = 0;
  Index events_ = 0;
};

/// avg ← weighted mean with weights ρ^(age); W tracks Σρ^age.
inline void accumulate(Vector& avg, double& weight, double rho, const Vector& x) {
  weight = rho * weight + 1.0;
  const double w = 1.0 / weight;
  avg = (1.0 - w) * avg + w * x;
}

inline void require_finite(const Vector& x, Index iter) {
  if (!x.allFinite()) {
    throw Error(ErrorCode::kNonFiniteIterate,
                "iterate became non-finite at iteration " + std::to_string(iter));
  }
}

inline constexpr double kMuZero = 1e-12;

}  // namespace dpsolve::detail
