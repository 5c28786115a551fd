#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dpsolve/error.hpp"
#include "dpsolve/federated.hpp"
#include "dpsolve/problems.hpp"
#include "support.hpp"

using namespace dpsolve;

namespace {

const FederatedInstance& hetero() {
  static const FederatedInstance fed = [] {
    FederatedQuadraticSpec spec;
    spec.curvature = 0.5;
    spec.heterogeneity = 2.0;
    return make_federated_quadratics(1, spec);
  }();
  return fed;
}

Vector atom_grad(const Objective& f, const Vector& x, Index i) {
  Vector g = Vector::Zero(x.size());
  f.add_atom_gradient(x, 0, i, 1.0, g);
  return g;
}

Vector batch_grad(const Objective& f, const Vector& x, const std::vector<Index>& idx) {
  Vector g = Vector::Zero(x.size());
  for (Index i : idx) g += atom_grad(f, x, i);
  return g / static_cast<double>(idx.size());
}

/// Block-diagonal one-atom curvature: κ of the whole instance set by the curvature weight.
FederatedInstance kappa_instance(std::uint64_t seed, double kappa) {
  FederatedQuadraticSpec spec;
  spec.curvature = 1.0;
  spec.atoms_per_worker = 4;
  const auto probe = make_federated_quadratics(seed, spec);
  const double mu = probe.strong_convexity_mu();
  spec.curvature = (kappa - 1.0) * mu / (probe.smoothness_L() - mu);
  return make_federated_quadratics(seed, spec);
}

Index stages_to(const RunTrace& trace, double eps) {
  for (const auto& row : trace.boundary_rows()) {
    if (row.suboptimality <= eps) return row.counters.stages;
  }
  return -1;
}

}  // namespace

TEST_CASE("single worker reduces to the single-machine methods") {
  FederatedQuadraticSpec spec;
  spec.n_workers = 1;
  spec.curvature = 0.3;
  const auto fed = make_federated_quadratics(4, spec);
  const auto single = make_problem("f1", fed.local_problems[0], ConstraintSubspace::unconstrained(spec.dim));
  SolverConfig c;
  c.gap_E = 3;
  c.inner_m = 12;
  c.stages_S = 3;
  c.total_T = 40;
  c.seed = 6;
  for (auto v : {Variant::kDpSgd, Variant::kDpSvrg, Variant::kDpAsvrg}) {
    c.variant = v;
    const auto local = run_local(fed, c);
    const auto dp = solve(single, c);
    CHECK(oracle::max_abs(local.x_hat - dp.y_hat) <= 1e-12);
  }
}

TEST_CASE("single-worker local_svrg with E = m is textbook SVRG") {
  FederatedQuadraticSpec spec;
  spec.n_workers = 1;
  spec.curvature = 0.3;
  const auto fed = make_federated_quadratics(5, spec);
  const Objective& f = *fed.local_problems[0];
  SolverConfig c;
  c.variant = Variant::kDpSvrg;
  c.gap_E = 8;
  c.inner_m = 8;
  c.stages_S = 4;
  c.seed = 2;
  std::vector<Vector> got;
  c.observer = [&](const StepInfo& s) { got.push_back(*s.x); };
  const auto r = local_svrg(fed, c);

  Rng rng(2, fed.partition_keys[0]);
  const double rho = 1.0 - fed.strong_convexity_mu() * r.eta;
  Vector xt = Vector::Zero(spec.dim), x = xt;
  std::size_t step = 0;
  for (Index s = 0; s < 4; ++s) {
    const Vector h = f.gradient(xt);
    Vector num = Vector::Zero(spec.dim);
    double den = 0.0;
    for (Index t = 0; t < 8; ++t) {
      const double w = std::pow(rho, static_cast<double>(7 - t));
      num += w * x;
      den += w;
      const auto idx = draw_batch(rng, f.n_atoms(), 1);
      x -= r.eta * (batch_grad(f, x, idx) - batch_grad(f, xt, idx) + h);
      CHECK(oracle::max_abs(got[step++] - x) <= 1e-12);
    }
    xt = num / den;
  }
  CHECK(oracle::max_abs(r.x_hat - xt) <= 1e-12);
}

TEST_CASE("single-worker local_asvrg with m = E = 1 is accelerated gradient") {
  FederatedQuadraticSpec spec;
  spec.n_workers = 1;
  spec.curvature = 0.3;
  const auto fed = make_federated_quadratics(7, spec);
  const Objective& f = *fed.local_problems[0];
  SolverConfig c;
  c.variant = Variant::kDpAsvrg;
  c.mu = 0.0;
  c.batch = f.n_atoms();
  c.inner_m = 1;
  c.stages_S = 50;
  std::vector<Vector> got;
  c.observer = [&](const StepInfo& s) { got.push_back(*s.x); };
  const auto r = local_asvrg(fed, c);

  const double L = fed.smoothness_L(), eta = r.eta;
  double theta = 1 - 2 * eta * L / (1 - eta * L);
  Vector y = Vector::Zero(spec.dim), u = y;
  for (std::size_t s = 0; s < 50; ++s) {
    u -= (eta / theta) * f.gradient(y);
    y = y + theta * (u - y);
    CHECK(oracle::max_abs(got[s] - y) <= 1e-10);
    const double t2 = theta * theta;
    theta = std::sqrt(t2 + t2 * t2 / 4) - t2 / 2;
  }
  CHECK(oracle::max_abs(r.x_hat - y) <= 1e-10);
}

TEST_CASE("local_sgd with E = 1 is parallel minibatch SGD") {
  const auto& fed = hetero();
  SolverConfig c;
  c.total_T = 60;
  c.batch = 2;
  c.seed = 3;
  std::vector<Vector> got;
  c.observer = [&](const StepInfo& s) { got.push_back(s.x->head(fed.local_dim)); };
  const auto r = local_sgd(fed, c);

  std::vector<Rng> rngs;
  for (auto key : fed.partition_keys) rngs.emplace_back(3, key);
  Vector x = Vector::Zero(fed.local_dim);
  for (std::size_t t = 0; t < 60; ++t) {
    Vector g = Vector::Zero(fed.local_dim);
    for (Index k = 0; k < fed.n_workers; ++k) {
      const Objective& f = *fed.local_problems[k];
      g += batch_grad(f, x, draw_batch(rngs[k], f.n_atoms(), 2));
    }
    x -= r.eta * g / static_cast<double>(fed.n_workers);
    CHECK(oracle::max_abs(got[t] - x) <= 1e-9);
  }
}

TEST_CASE("local runs coincide with delayed projection on the lifted problem") {
  const auto& fed = hetero();
  for (auto v : {Variant::kDpSgd, Variant::kDpSvrg, Variant::kDpAsvrg}) {
    CAPTURE(to_string(v));
    SolverConfig c;
    c.gap_E = 5;
    c.inner_m = 50;
    c.stages_S = 4;
    c.total_T = 200;

    SolverConfig full = c;
    full.batch = 1000;
    const auto exact = equivalence_harness(fed, v, full);
    CHECK(exact.pass);
    CHECK(exact.max_iterate_gap <= 1e-12);
    CHECK(exact.counts_match);

    c.seed = 21;
    const auto coupled = equivalence_harness(fed, v, c);
    CHECK(coupled.pass);
    CHECK(coupled.steps == 200);
    CHECK(coupled.counts_match);

    const auto decoupled = equivalence_harness(fed, v, c, 1);
    CHECK_FALSE(decoupled.pass);
  }
}

TEST_CASE("communication accounting") {
  const auto& fed = hetero();
  const auto lifted = lift_consensus(fed);
  const Index n = fed.n_workers, d = fed.local_dim;
  for (auto v : {Variant::kDpSgd, Variant::kDpSvrg, Variant::kDpAsvrg}) {
    SolverConfig c;
    c.variant = v;
    c.gap_E = 3;
    c.inner_m = 10;
    c.stages_S = 5;
    c.total_T = 31;
    c.seed = 8;
    const auto local = run_local(fed, c);
    SolverConfig dc = c;
    dc.x0 = Vector::Zero(n * d);
    const auto dp = solve(lifted, dc);
    CHECK(local.comm.rounds == dp.counters.projections);
    CHECK(local.counters.comm_rounds == local.comm.rounds);
    CHECK(local.comm.vectors_transferred == n * local.comm.rounds);
    CHECK(local.comm.bytes_equivalent == local.comm.vectors_transferred * d * 8);
    if (v == Variant::kDpSgd) {
      CHECK(local.comm.rounds == make_schedule(31, 3).size() + 1);
    } else {
      CHECK(local.comm.rounds == 5 * (1 + 4));
    }
  }
}

TEST_CASE("workers agree after every synchronization") {
  const auto& fed = hetero();
  const Index n = fed.n_workers, d = fed.local_dim;
  for (auto v : {Variant::kDpSgd, Variant::kDpSvrg, Variant::kDpAsvrg}) {
    SolverConfig c;
    c.variant = v;
    c.gap_E = 4;
    c.inner_m = 20;
    c.stages_S = 3;
    c.total_T = 50;
    c.seed = 2;
    double worst = 0.0;
    Index syncs = 0;
    c.observer = [&](const StepInfo& s) {
      if (!s.projected) return;
      ++syncs;
      Vector mean = Vector::Zero(d);
      for (Index k = 0; k < n; ++k) mean += s.x->segment(k * d, d);
      mean /= static_cast<double>(n);
      for (Index k = 0; k < n; ++k) {
        worst = std::max(worst, (s.x->segment(k * d, d) - mean).norm() / (1 + mean.norm()));
        if (s.u) {
          worst = std::max(worst, (s.u->segment(k * d, d) - s.u->head(d)).norm());
        }
      }
    };
    run_local(fed, c);
    CHECK(syncs > 0);
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("worker order does not change the synchronized average") {
  const auto& fed = hetero();
  std::vector<Index> perm{2, 0, 3, 1};
  std::vector<std::shared_ptr<const Objective>> locals;
  std::vector<std::uint64_t> keys;
  for (Index k : perm) {
    locals.push_back(fed.local_problems[k]);
    keys.push_back(fed.partition_keys[k]);
  }
  const auto shuffled = make_federated_instance(locals, keys);
  CHECK(oracle::max_abs(shuffled.x_star - fed.x_star) <= 1e-12);
  for (auto v : {Variant::kDpSgd, Variant::kDpSvrg, Variant::kDpAsvrg}) {
    SolverConfig c;
    c.variant = v;
    c.gap_E = 5;
    c.inner_m = 20;
    c.stages_S = 3;
    c.total_T = 60;
    c.seed = 13;
    const auto a = run_local(fed, c), b = run_local(shuffled, c);
    CHECK(oracle::max_abs(a.last_average - b.last_average) <= 1e-12 * (1 + a.last_average.norm()));
    CHECK(oracle::max_abs(a.x_hat - b.x_hat) <= 1e-12 * (1 + a.x_hat.norm()));
  }
}

TEST_CASE("local_svrg has no heterogeneity floor") {
  const auto& fed = hetero();
  CHECK(fed.zeta_star_sq > 1.0);
  SolverConfig c;
  c.variant = Variant::kDpSvrg;
  c.gap_E = 5;
  c.inner_m = 100;
  c.stages_S = 200;
  c.record_every = 0;
  c.seed = 1;
  const auto svrg = local_svrg(fed, c);
  CHECK(svrg.trace.back().suboptimality <= 1e-10);
  c.variant = Variant::kDpSgd;
  c.total_T = 40000;
  c.record_every = 100;
  const auto sgd = local_sgd(fed, c);
  CHECK(sgd.trace.back().suboptimality >= 1e-6);
  // the plateau: the second half of the run barely improves
  const auto& rows = sgd.trace.rows();
  CHECK(rows.back().suboptimality >= 0.1 * rows[rows.size() / 2].suboptimality);
}

TEST_CASE("local_asvrg needs fewer stages than local_svrg at kappa 1e4") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto fed = kappa_instance(seed, 1e4);
    CHECK(fed.smoothness_L() / fed.strong_convexity_mu() == doctest::Approx(1e4));
    SolverConfig c;
    c.gap_E = 1;
    c.inner_m = 200;
    c.stages_S = 400;
    c.record_every = 0;
    c.seed = seed;
    c.variant = Variant::kDpSvrg;
    const Index svrg = stages_to(local_svrg(fed, c).trace, 1e-6);
    c.variant = Variant::kDpAsvrg;
    const Index asvrg = stages_to(local_asvrg(fed, c).trace, 1e-6);
    REQUIRE(svrg > 0);
    REQUIRE(asvrg > 0);
    CHECK(asvrg < svrg);
  }
}

TEST_CASE("local argument validation") {
  const auto& fed = hetero();
  SolverConfig c;
  c.variant = Variant::kDpSvrg;
  c.gap_E = 5;
  c.inner_m = 3;
  CHECK_THROWS_AS(run_local(fed, c), Error);
  c.inner_m = 10;
  c.x0 = Vector::Zero(fed.local_dim + 1);
  CHECK_THROWS_AS(run_local(fed, c), Error);
  c.x0.reset();
  c.eta = 1.0 / fed.smoothness_L();
  try {
    run_local(fed, c);
    FAIL("expected StepTooLarge");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kStepTooLarge);
  }
}
