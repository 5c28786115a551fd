#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dpsolve/error.hpp"
#include "dpsolve/experiment.hpp"
#include "dpsolve/snapshot.hpp"
#include "dpsolve/verify.hpp"
#include "support.hpp"

using namespace dpsolve;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() /
                       ("dpsolve_test_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

struct Outcome {
  int code = -1;
  std::string output;
};

Outcome run_cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli_output.txt";
  const std::string cmd = std::string("\"") + DPSOLVE_CLI_PATH + "\" " + args + " > \"" +
                          log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.output = slurp(log);
  return o;
}

ErrorCode config_code(const std::string& text, std::string* message = nullptr) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  FAIL("expected a config error");
  return ErrorCode::kInvalidArgument;
}

std::string roundtrip_text(const ProblemSnapshot& s) {
  std::stringstream a;
  save_snapshot(a, s);
  const ProblemSnapshot back = load_snapshot(a);
  std::stringstream b;
  save_snapshot(b, back);
  CHECK(a.str() == b.str());
  return a.str();
}

void check_same_problem(const LcpProblem& a, const LcpProblem& b) {
  CHECK(a.dimension() == b.dimension());
  CHECK(a.n_atoms() == b.n_atoms());
  CHECK(a.smoothness_L == b.smoothness_L);
  CHECK(a.strong_convexity_mu == b.strong_convexity_mu);
  CHECK(a.subspace.a_matrix() == b.subspace.a_matrix());
  CHECK(a.subspace.rhs() == b.subspace.rhs());
  Rng rng(1);
  for (int k = 0; k < 3; ++k) {
    const Vector x = rng.normal_vector(a.dimension());
    CHECK(a.value(x) == b.value(x));
    CHECK(a.gradient(x) == b.gradient(x));
    for (Index i = 0; i < a.n_atoms(); i += std::max<Index>(1, a.n_atoms() / 7)) {
      CHECK(a.atom_gradient(x, i) == b.atom_gradient(x, i));
    }
    CHECK(a.subspace.project_feasible(x) == b.subspace.project_feasible(x));
  }
}

const char* kMinimal = R"({
  "schema_version": 1,
  "problem": {"generator": "lcqp", "seed": 7,
              "params": {"p": 10, "n_atoms": 50, "m_constraints": 3, "eigen_floor": 0.5, "eigen_ceil": 5.0}},
  "sweep": [{"label": "svrg_E2", "variant": "dp_svrg", "gap_E": 2, "inner_m": 200, "stages_S": 5}]
})";

std::string logreg_config(const std::string& sweep, int repetitions = 1) {
  return R"({
  "schema_version": 1,
  "problem": {"generator": "logreg", "seed": 3,
              "params": {"n_samples": 500, "d": 20, "m_constraints": 10, "weight_decay": 1e-4}},
  "repetitions": )" + std::to_string(repetitions) + R"(,
  "eps": [1e-2, 1e-4],
  "sweep": )" + sweep + "}";
}

const char* kFigureSweep = R"([
  {"label": "psgd_E1", "variant": "dp_sgd", "gap_E": 1, "total_T": 3000, "record_every": 100},
  {"label": "dpsgd_E10", "variant": "dp_sgd", "gap_E": 10, "total_T": 3000, "record_every": 10},
  {"label": "dpsvrg_E10", "variant": "dp_svrg", "gap_E": 10, "inner_m": 500, "stages_S": 4},
  {"label": "dpasvrg_E10", "variant": "dp_asvrg", "gap_E": 10, "inner_m": 500, "stages_S": 4},
  {"label": "dpasvrg_E10_theta1", "variant": "dp_asvrg", "gap_E": 10, "inner_m": 500, "stages_S": 4, "theta": 1.0}
])";

}  // namespace

TEST_CASE("snapshots round-trip bit-exactly") {
  SUBCASE("quadratic with constraints") {
    ProblemSnapshot s{make_lcqp(7, 10, 50, 3, 0.5, 5.0), std::nullopt, std::nullopt, {{"generator", "lcqp"}}};
    s.x_star = solve_reference(s.problem);
    s.f_star = s.problem.value(*s.x_star);
    const std::string text = roundtrip_text(s);
    std::stringstream in(text);
    const auto back = load_snapshot(in);
    check_same_problem(s.problem, back.problem);
    CHECK(*back.x_star == *s.x_star);
    CHECK(*back.f_star == *s.f_star);
    CHECK(back.tags.at("generator") == "lcqp");
  }
  SUBCASE("logistic regression") {
    for (int classes : {2, 3}) {
      ProblemSnapshot s{make_constrained_logreg(3, 80, 6, classes, 4, 1e-4), {}, {}, {}};
      std::stringstream in(roundtrip_text(s));
      check_same_problem(s.problem, load_snapshot(in).problem);
    }
  }
  SUBCASE("network flow") {
    const std::vector<Edge> e{{0, 1}, {1, 2}, {0, 2}, {2, 3}};
    Vector rates(4), w(4);
    rates << 1, 0.5, 0, -1.5;
    w << 1, 2, 0.5, 3;
    ProblemSnapshot s{make_network_flow(e, rates, w), {}, {}, {}};
    std::stringstream in(roundtrip_text(s));
    check_same_problem(s.problem, load_snapshot(in).problem);

    std::vector<EdgeCost> costs(4, EdgeCost{[](double x) { return x * x; }, [](double x) { return 2 * x; }, 2.0, 2.0});
    ProblemSnapshot cb{make_network_flow(e, rates, costs), {}, {}, {}};
    std::stringstream out;
    try {
      save_snapshot(out, cb);
      FAIL("callback costs cannot be stored");
    } catch (const Error& err) {
      CHECK(err.code() == ErrorCode::kSnapshotFormat);
    }
  }
  SUBCASE("lifted federated problem") {
    FederatedQuadraticSpec spec;
    spec.curvature = 0.4;
    const auto fed = make_federated_quadratics(2, spec);
    ProblemSnapshot s{lift_consensus(fed), {}, {}, {}};
    std::stringstream in(roundtrip_text(s));
    const auto back = load_snapshot(in);
    check_same_problem(s.problem, back.problem);
    const auto view = federated_view(back.problem);
    REQUIRE(view);
    CHECK(view->n_workers == fed.n_workers);
    CHECK(view->partition_keys == fed.partition_keys);
    CHECK(oracle::max_abs(view->x_star - fed.x_star) <= 1e-12);
    CHECK_FALSE(federated_view(make_lcqp(1, 4, 10, 1, 1, 2)));
  }
  SUBCASE("unconstrained") {
    auto f = QuadraticObjective::centered(Matrix::Identity(3, 4));
    ProblemSnapshot s{make_problem("free", f, ConstraintSubspace::unconstrained(3)), {}, {}, {}};
    std::stringstream in(roundtrip_text(s));
    check_same_problem(s.problem, load_snapshot(in).problem);
  }
  SUBCASE("files") {
    const fs::path dir = scratch("snapshot_files");
    ProblemSnapshot s{make_lcqp(1, 5, 20, 2, 1.0, 2.0), {}, {}, {}};
    save_snapshot_file((dir / "p.dpsnap").string(), s);
    check_same_problem(s.problem, load_snapshot_file((dir / "p.dpsnap").string()).problem);
    CHECK_THROWS_AS(load_snapshot_file((dir / "missing.dpsnap").string()), Error);
  }
  SUBCASE("malformed input") {
    for (const char* bad : {"", "NOTASNAP 1\n", "DPSNAP 9\nend\n", "DPSNAP 1\nmatrix a 2 2\n0x1p+0\n"}) {
      std::stringstream in(bad);
      try {
        load_snapshot(in);
        FAIL("expected a snapshot error");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kSnapshotFormat);
      }
    }
  }
}

TEST_CASE("config parsing") {
  const auto cfg = parse_config(kMinimal);
  CHECK(cfg.problem.generator == "lcqp");
  CHECK(cfg.problem.seed == 7);
  REQUIRE(cfg.sweep.size() == 1);
  CHECK(cfg.sweep[0].solver.variant == Variant::kDpSvrg);
  CHECK(cfg.sweep[0].solver.inner_m == 200);
  CHECK(cfg.repetitions == 1);

  std::string msg;
  const std::string missing = R"({"schema_version": 1,
    "problem": {"generator": "lcqp", "params": {"n_atoms": 50, "m_constraints": 3, "eigen_floor": 0.5, "eigen_ceil": 5.0}},
    "sweep": [{"variant": "dp_sgd", "total_T": 10}]})";
  CHECK(config_code(missing, &msg) == ErrorCode::kConfigError);
  CHECK(msg.find("problem.params.p") != std::string::npos);
  CHECK(msg.find("missing") != std::string::npos);

  json j = json::parse(kMinimal);
  j["sweep"][0]["colour"] = "blue";
  CHECK(config_code(j.dump(), &msg) == ErrorCode::kConfigError);
  CHECK(msg.find("sweep[0].colour") != std::string::npos);

  j = json::parse(kMinimal);
  j["schema_version"] = 2;
  CHECK(config_code(j.dump(), &msg) == ErrorCode::kConfigError);
  CHECK(msg.find("schema_version") != std::string::npos);

  j = json::parse(kMinimal);
  j["sweep"] = json::array();
  CHECK(config_code(j.dump()) == ErrorCode::kEmptySweep);

  j = json::parse(kMinimal);
  j["sweep"][0]["variant"] = "dp_adam";
  CHECK(config_code(j.dump(), &msg) == ErrorCode::kConfigError);
  CHECK(msg.find("variant") != std::string::npos);

  j = json::parse(kMinimal);
  j["sweep"][0]["inner_m"] = 1;
  CHECK(config_code(j.dump(), &msg) == ErrorCode::kConfigError);
  CHECK(msg.find("inner_m") != std::string::npos);

  j = json::parse(kMinimal);
  j["sweep"].push_back(j["sweep"][0]);
  CHECK(config_code(j.dump(), &msg) == ErrorCode::kConfigError);
  CHECK(msg.find("duplicate") != std::string::npos);

  j = json::parse(kMinimal);
  j["sweep"][0]["mode"] = "local";
  CHECK(config_code(j.dump(), &msg) == ErrorCode::kConfigError);

  j = json::parse(kMinimal);
  j["problem"]["generator"] = "mystery";
  CHECK(config_code(j.dump()) == ErrorCode::kConfigError);

  CHECK(config_code("{\n  \"schema_version\": 1,\n  \"problem\": }\n", &msg) == ErrorCode::kConfigError);
  CHECK(msg.find("line 3") != std::string::npos);
}

TEST_CASE("desk-scale logistic config reports its weight decay") {
  const auto cfg = parse_config(logreg_config(R"([{"label": "a", "variant": "dp_sgd", "total_T": 10}])"));
  const auto snap = build_problem(cfg);
  CHECK(snap.problem.strong_convexity_mu == 1e-4);
  CHECK(snap.problem.dimension() == 21);
  CHECK(snap.problem.n_atoms() == 500);
  CHECK(snap.problem.subspace.a_matrix().cols() == 10);
  REQUIRE(snap.x_star);
  CHECK(snap.problem.subspace.project_null(snap.problem.gradient(*snap.x_star)).norm() <= 1e-9);
}

TEST_CASE("running a sweep") {
  const auto cfg = parse_config(logreg_config(kFigureSweep));
  const auto snap = build_problem(cfg);
  const fs::path dir = scratch("sweep");
  const auto summary = run_experiment(cfg, snap, dir.string());
  CHECK(summary.all_ok());
  REQUIRE(summary.entries.size() == 5);
  std::set<std::string> csvs;
  for (const auto& e : summary.entries) {
    CHECK(fs::exists(dir / e.csv_file));
    csvs.insert(e.csv_file);
  }
  CHECK(csvs.size() == 5);
  CHECK(fs::exists(dir / "README.md"));
  CHECK(slurp(dir / "README.md").find("suboptimality") != std::string::npos);

  const json js = json::parse(slurp(dir / "summary.json"));
  CHECK(js["problem"]["mu"].get<double>() == 1e-4);
  REQUIRE(js["entries"].size() == 5);

  // comparison of the emitted CSVs reproduces the summary table
  std::vector<std::string> files;
  for (const auto& e : summary.entries) files.push_back((dir / e.csv_file).string());
  const auto rows = compare_csv(files, cfg.eps);
  REQUIRE(rows.size() == 10);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json& want = js["entries"][i / 2]["projections_to_eps"][i % 2];
    CHECK(rows[i].label == js["entries"][i / 2]["label"].get<std::string>());
    CHECK(rows[i].reached == want["reached"].get<bool>());
    CHECK(rows[i].projections_to_eps == want["projections"].get<Index>());
    CHECK(rows[i].gradients_to_eps == want["gradients"].get<Index>());
  }
  // the delayed-projection runs use fewer projections than projected SGD
  const auto& psgd = summary.entries[0].counters;
  const auto& dpsgd = summary.entries[1].counters;
  CHECK(psgd.projections == 3001);
  CHECK(dpsgd.projections == 301);
}

TEST_CASE("repetitions and failed entries") {
  const std::string sweep = R"([
    {"label": "ok_svrg", "variant": "dp_svrg", "gap_E": 5, "inner_m": 100, "stages_S": 2},
    {"label": "too_big", "variant": "dp_sgd", "gap_E": 1, "total_T": 10, "eta": 1000.0}
  ])";
  const auto cfg = parse_config(logreg_config(sweep, 3));
  const auto snap = build_problem(cfg);
  const fs::path dir = scratch("reps");
  const auto summary = run_experiment(cfg, snap, dir.string(), 10);
  REQUIRE(summary.entries.size() == 6);
  CHECK_FALSE(summary.all_ok());
  std::set<std::string> names;
  for (const auto& e : summary.entries) {
    if (e.label == "ok_svrg") {
      CHECK(e.ok);
      names.insert(e.csv_file);
      CHECK(e.csv_file == "ok_svrg_rep" + std::to_string(e.repetition) + "_seed" +
                              std::to_string(10 + e.repetition) + ".csv");
    } else {
      CHECK_FALSE(e.ok);
      CHECK(e.error.find("StepTooLarge") != std::string::npos);
    }
  }
  CHECK(names.size() == 3);
  const json js = json::parse(slurp(dir / "summary.json"));
  int failed = 0;
  for (const auto& e : js["entries"]) failed += e["ok"].get<bool>() ? 0 : 1;
  CHECK(failed == 3);
}

TEST_CASE("thread count does not change results") {
  const auto cfg = parse_config(logreg_config(kFigureSweep, 2));
  const auto snap = build_problem(cfg);
  const fs::path one = scratch("threads1"), many = scratch("threads3");
  const auto a = run_experiment(cfg, snap, one.string(), 0, 1);
  const auto b = run_experiment(cfg, snap, many.string(), 0, 3);
  REQUIRE(a.entries.size() == b.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].counters == b.entries[i].counters);
    CHECK(a.entries[i].final_suboptimality == b.entries[i].final_suboptimality);
    std::ifstream fa(one / a.entries[i].csv_file), fb(many / b.entries[i].csv_file);
    const auto ta = read_csv(fa), tb = read_csv(fb);
    REQUIRE(ta.size() == 1);
    REQUIRE(tb.size() == 1);
    REQUIRE(ta[0].size() == tb[0].size());
    for (std::size_t r = 0; r < ta[0].size(); ++r) {
      CHECK(ta[0].rows()[r].suboptimality == tb[0].rows()[r].suboptimality);
      CHECK(ta[0].rows()[r].counters == tb[0].rows()[r].counters);
    }
  }
}

TEST_CASE("local sweep entries") {
  const std::string text = R"({
    "schema_version": 1,
    "problem": {"generator": "federated_quadratics", "seed": 2, "params": {"n_workers": 3, "curvature": 0.5}},
    "sweep": [
      {"label": "local_svrg", "mode": "local", "variant": "dp_svrg", "gap_E": 4, "inner_m": 40, "stages_S": 5},
      {"label": "lifted_svrg", "variant": "dp_svrg", "gap_E": 4, "inner_m": 40, "stages_S": 5}
    ]})";
  const auto cfg = parse_config(text);
  const auto snap = build_problem(cfg);
  const auto summary = run_experiment(cfg, snap, scratch("local").string());
  REQUIRE(summary.all_ok());
  CHECK(summary.entries[0].variant == "local_svrg");
  CHECK(summary.entries[0].counters.comm_rounds == 5 * (1 + 10));
  CHECK(summary.entries[0].counters.projections == summary.entries[1].counters.projections);
}

TEST_CASE("DP_THREADS") {
  ::setenv("DP_THREADS", "4", 1);
  CHECK(threads_from_env() == 4);
  ::setenv("DP_THREADS", "zero", 1);
  CHECK(threads_from_env() == 1);
  ::unsetenv("DP_THREADS");
  CHECK(threads_from_env() == 1);
}

TEST_CASE("command line exit codes") {
  const fs::path dir = scratch("cli");
  write_file(dir / "minimal.json", kMinimal);

  auto gen = run_cli("generate --config \"" + (dir / "minimal.json").string() + "\" --out \"" +
                         (dir / "p.dpsnap").string() + "\"",
                     dir);
  CHECK(gen.code == 0);
  CHECK(gen.output.find("mu") != std::string::npos);
  const auto loaded = load_snapshot_file((dir / "p.dpsnap").string());
  std::stringstream again;
  save_snapshot(again, loaded);
  CHECK(again.str() == slurp(dir / "p.dpsnap"));

  auto run = run_cli("run --config \"" + (dir / "minimal.json").string() + "\" --out \"" +
                         (dir / "run").string() + "\"",
                     dir);
  CHECK(run.code == 0);
  CHECK(fs::exists(dir / "run" / "svrg_E2_rep0_seed0.csv"));
  CHECK(fs::exists(dir / "run" / "summary.json"));

  auto cmp = run_cli("compare \"" + (dir / "run").string() + "\" --eps 1e-3 --out \"" +
                         (dir / "cmp.json").string() + "\"",
                     dir);
  CHECK(cmp.code == 0);
  CHECK(json::parse(slurp(dir / "cmp.json")).size() == 1);

  json failing = json::parse(kMinimal);
  failing["sweep"][0]["eta"] = 100.0;
  write_file(dir / "failing.json", failing.dump());
  CHECK(run_cli("run --config \"" + (dir / "failing.json").string() + "\" --out \"" +
                    (dir / "fail").string() + "\"",
                dir)
            .code == 1);

  json bad = json::parse(kMinimal);
  bad["sweep"][0]["speed"] = 3;
  write_file(dir / "bad.json", bad.dump());
  auto bad_run = run_cli("run --config \"" + (dir / "bad.json").string() + "\"", dir);
  CHECK(bad_run.code == 2);
  CHECK(bad_run.output.find("speed") != std::string::npos);

  CHECK(run_cli("run", dir).code == 2);
  CHECK(run_cli("verify --level medium", dir).code == 2);
  CHECK(run_cli("generate --config \"" + (dir / "nope.json").string() + "\"", dir).code == 2);
}

TEST_CASE("verification suites") {
  const fs::path dir = scratch("verify");
  const auto ok = run_cli("verify --level quick", dir);
  CHECK(ok.code == 0);
  CHECK(ok.output.find("FAIL") == std::string::npos);
  const auto broken = run_cli("verify --level quick --inject-null-sign-flip", dir);
  CHECK(broken.code == 1);
  CHECK(broken.output.find("FAIL  1 projector algebra (violated:") != std::string::npos);

  CHECK(criteria_for(VerifyLevel::kFull).size() == 12);
  const auto quick = criteria_for(VerifyLevel::kQuick);
  CHECK(quick.size() < 12);
  const auto r = run_criterion(4);
  CHECK(r.pass);
  CHECK(format_result(r).rfind("PASS  4 ", 0) == 0);
}
