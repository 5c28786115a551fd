#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "dpsolve/error.hpp"
#include "dpsolve/metrics.hpp"
#include "dpsolve/problems.hpp"
#include "dpsolve/solvers.hpp"

using namespace dpsolve;

namespace {

TraceRow row_at(Index k, double subopt) {
  TraceRow r;
  r.iter = 10 * k;
  r.stage = k / 5;
  r.counters = {10 * k, k / 5, 3 * k, 40 * k, k};
  r.suboptimality = subopt;
  r.feasibility = 1e-15 * static_cast<double>(k);
  r.wall_ns = 1000 * k;
  return r;
}

RunTrace decaying(const std::string& id, Index n) {
  RunTrace t(id, "dp_svrg");
  for (Index k = 0; k < n; ++k) t.record(row_at(k, std::pow(0.5, static_cast<double>(k))));
  return t;
}

}  // namespace

TEST_CASE("recording rows") {
  RunTrace t("a", "dp_sgd");
  CHECK(t.empty());
  t.record(row_at(0, 1.0));
  CHECK(t.size() == 1);
  t.record(row_at(1, 0.5));
  TraceRow bad = row_at(2, 0.2);
  bad.counters.projections = 0;
  try {
    t.record(bad);
    FAIL("expected a monotonicity error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMonotonicityViolation);
    CHECK(std::string(e.what()).find("projections") != std::string::npos);
  }
  CHECK(t.size() == 2);
  TraceRow same = row_at(1, 0.4);
  t.record(same);
  CHECK(t.size() == 3);
}

TEST_CASE("a thousand appends keep every counter sorted") {
  RunTrace t = decaying("r", 1000);
  REQUIRE(t.size() == 1000);
  for (std::size_t i = 1; i < t.size(); ++i) {
    const auto& a = t.rows()[i - 1].counters;
    const auto& b = t.rows()[i].counters;
    CHECK(a.iterations <= b.iterations);
    CHECK(a.projections <= b.projections);
    CHECK(a.gradients <= b.gradients);
    CHECK(a.stages <= b.stages);
    CHECK(a.comm_rounds <= b.comm_rounds);
  }
}

TEST_CASE("complexity to eps") {
  const RunTrace t = decaying("run", 30);
  const auto first = complexity_to_eps(t, 1e300);
  CHECK(first.reached);
  CHECK(first.projections_to_eps == 0);
  CHECK(first.label == "run");
  const auto miss = complexity_to_eps(t, 1e-12, "other");
  CHECK_FALSE(miss.reached);
  CHECK(miss.label == "other");
  const auto mid = complexity_to_eps(t, 0.01);
  // 2⁻⁷ is the first power of two at or below 0.01
  CHECK(mid.reached);
  CHECK(mid.projections_to_eps == 21);
  CHECK(mid.gradients_to_eps == 280);
  CHECK(mid.iterations_to_eps == 70);
  Index prev = std::numeric_limits<Index>::max();
  for (double eps = 1e-8; eps <= 1.0; eps *= 3.0) {
    const auto r = complexity_to_eps(t, eps);
    REQUIRE(r.reached);
    CHECK(r.projections_to_eps <= prev);
    prev = r.projections_to_eps;
  }
  RunTrace unknown("u", "dp_sgd");
  unknown.record(row_at(0, std::numeric_limits<double>::quiet_NaN()));
  CHECK_FALSE(complexity_to_eps(unknown, 1e300).reached);
}

TEST_CASE("CSV round trip") {
  std::vector<RunTrace> traces{decaying("a/rep0", 20), decaying("b/rep0", 7)};
  TraceRow odd = row_at(7, std::numeric_limits<double>::quiet_NaN());
  traces[1].record(odd);
  TraceRow tiny = row_at(8, 0x1.23456789abcdep-1000);
  traces[1].record(tiny);
  std::stringstream ss;
  write_csv(ss, traces);
  std::string header;
  std::getline(ss, header);
  CHECK(header == "run_id,variant,stage,iter,projections,gradients,comm_rounds,suboptimality,feasibility,wall_ns");
  ss.seekg(0);
  const auto back = read_csv(ss);
  REQUIRE(back.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(back[k].run_id() == traces[k].run_id());
    CHECK(back[k].variant() == traces[k].variant());
    REQUIRE(back[k].size() == traces[k].size());
    for (std::size_t i = 0; i < traces[k].size(); ++i) {
      const auto& w = traces[k].rows()[i];
      const auto& g = back[k].rows()[i];
      CHECK(g.iter == w.iter);
      CHECK(g.stage == w.stage);
      CHECK(g.counters.projections == w.counters.projections);
      CHECK(g.counters.gradients == w.counters.gradients);
      CHECK(g.counters.comm_rounds == w.counters.comm_rounds);
      CHECK(g.wall_ns == w.wall_ns);
      if (std::isnan(w.suboptimality)) {
        CHECK(std::isnan(g.suboptimality));
      } else {
        CHECK(g.suboptimality == w.suboptimality);
      }
      CHECK(g.feasibility == w.feasibility);
    }
  }
}

TEST_CASE("malformed CSV") {
  std::stringstream wrong("a,b,c\n");
  CHECK_THROWS_AS(read_csv(wrong), Error);
  std::stringstream short_row(std::string(kCsvHeader) + "\nx,dp_sgd,0,1,2\n");
  CHECK_THROWS_AS(read_csv(short_row), Error);
  std::stringstream junk(std::string(kCsvHeader) + "\nx,dp_sgd,zero,1,2,3,4,5,6,7\n");
  CHECK_THROWS_AS(read_csv(junk), Error);
}

TEST_CASE("counter identities of variance-reduced runs") {
  const auto p = make_lcqp(2, 6, 25, 2, 1.0, 3.0);
  for (auto v : {Variant::kDpSvrg, Variant::kDpAsvrg}) {
    for (Index e : {1, 3, 7}) {
      SolverConfig c;
      c.variant = v;
      c.gap_E = e;
      c.inner_m = 20;
      c.stages_S = 6;
      c.batch = 2;
      c.x_star = solve_reference(p);
      const auto r = solve(p, c);
      const Index ceil_m_e = (20 + e - 1) / e;
      CHECK(r.counters.iterations == 20 * 6);
      CHECK(r.counters.gradients == (2 * 20 * 2 + 25) * 6);
      CHECK(r.counters.projections == 6 + ceil_m_e * 6);
      CHECK(r.counters.stages == 6);
      CHECK(r.trace.back().counters == r.counters);
      CHECK(r.trace.boundary_rows().size() == 7);
    }
  }
}
