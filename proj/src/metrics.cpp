#include "dpsolve/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "dpsolve/error.hpp"

namespace dpsolve {

namespace {

void check_monotone(const char* name, Index before, Index after) {
  if (after < before) {
    throw Error(ErrorCode::kMonotonicityViolation, std::string(name) + " decreased from " +
                                                       std::to_string(before) + " to " +
                                                       std::to_string(after));
  }
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void RunTrace::record(const TraceRow& row) {
  if (!rows_.empty()) {
    const TraceRow& last = rows_.back();
    check_monotone("iter", last.iter, row.iter);
    check_monotone("stages", last.counters.stages, row.counters.stages);
    check_monotone("projections", last.counters.projections, row.counters.projections);
    check_monotone("gradients", last.counters.gradients, row.counters.gradients);
    check_monotone("comm_rounds", last.counters.comm_rounds, row.counters.comm_rounds);
    check_monotone("iterations", last.counters.iterations, row.counters.iterations);
  }
  rows_.push_back(row);
}

std::vector<TraceRow> RunTrace::boundary_rows() const {
  std::vector<TraceRow> out;
  for (const auto& r : rows_) {
    if (r.boundary) out.push_back(r);
  }
  return out;
}

ComparisonRow complexity_to_eps(const RunTrace& trace, double eps, std::string label) {
  ComparisonRow row;
  row.label = label.empty() ? trace.run_id() : std::move(label);
  row.eps = eps;
  for (const auto& r : trace.rows()) {
    if (r.suboptimality <= eps) {
      row.reached = true;
      row.projections_to_eps = r.counters.projections;
      row.gradients_to_eps = r.counters.gradients;
      row.iterations_to_eps = r.counters.iterations;
      row.stages_to_eps = r.counters.stages;
      break;
    }
  }
  return row;
}

void write_csv(std::ostream& out, std::span<const RunTrace> traces) {
  out << kCsvHeader << '\n';
  for (const auto& t : traces) {
    for (const auto& r : t.rows()) {
      out << t.run_id() << ',' << t.variant() << ',' << r.stage << ',' << r.iter << ','
          << r.counters.projections << ',' << r.counters.gradients << ','
          << r.counters.comm_rounds << ',' << format_double(r.suboptimality) << ','
          << format_double(r.feasibility) << ',' << r.wall_ns << '\n';
    }
  }
}

void write_csv(std::ostream& out, const RunTrace& trace) {
  write_csv(out, std::span<const RunTrace>(&trace, 1));
}

std::vector<RunTrace> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw Error(ErrorCode::kConfigError, "CSV header does not match the trace schema");
  }
  std::vector<RunTrace> traces;
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 10) {
      throw Error(ErrorCode::kConfigError,
                  "CSV line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " fields, expected 10");
    }
    try {
      TraceRow row;
      row.stage = std::stoll(cells[2]);
      row.iter = std::stoll(cells[3]);
      row.counters.iterations = row.iter;
      row.counters.stages = row.stage;
      row.counters.projections = std::stoll(cells[4]);
      row.counters.gradients = std::stoll(cells[5]);
      row.counters.comm_rounds = std::stoll(cells[6]);
      row.suboptimality = std::strtod(cells[7].c_str(), nullptr);
      row.feasibility = std::strtod(cells[8].c_str(), nullptr);
      row.wall_ns = std::stoll(cells[9]);
      if (traces.empty() || traces.back().run_id() != cells[0]) {
        traces.emplace_back(cells[0], cells[1]);
      }
      traces.back().record(row);
    } catch (const std::invalid_argument&) {
      throw Error(ErrorCode::kConfigError, "CSV line " + std::to_string(line_no) + " is malformed");
    } catch (const std::out_of_range&) {
      throw Error(ErrorCode::kConfigError, "CSV line " + std::to_string(line_no) + " is malformed");
    }
  }
  return traces;
}

}  // namespace dpsolve
