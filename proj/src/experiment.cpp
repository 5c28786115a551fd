#include "dpsolve/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dpsolve/error.hpp"
#include "dpsolve/federated.hpp"

namespace dpsolve {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::kConfigError, path + ": " + what);
}

/// Typed, fail-closed access to one JSON object.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& raw(const std::string& key) {
    if (!has(key)) config_error(at(key), "missing required field");
    return j_.at(key);
  }

  std::int64_t integer(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_integer()) config_error(at(key), "expected an integer");
    return v.get<std::int64_t>();
  }
  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    return has(key) ? integer(key) : fallback;
  }
  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) config_error(at(key), "expected a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }
  std::optional<double> optional_number(const std::string& key) {
    if (!has(key) || j_.at(key).is_null()) return std::nullopt;
    return number(key);
  }
  std::string text(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) config_error(at(key), "expected a string");
    return v.get<std::string>();
  }
  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) config_error(at(key), "expected true or false");
    return v.get<bool>();
  }
  std::vector<double> numbers(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) config_error(at(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) config_error(at(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  /// Rejects any key that was never asked for.
  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) config_error(at(key), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Index positive(Fields& f, const std::string& key, Index fallback) {
  const Index v = f.integer(key, fallback);
  if (v < 1) config_error(f.at(key), "must be at least 1");
  return v;
}

/// Parses generator parameters, returning them in canonical form.
json parse_params(const std::string& generator, const json& j, const std::string& path) {
  Fields f(j, path);
  json out = json::object();
  auto num = [&](const char* key, std::optional<double> fallback = std::nullopt) {
    out[key] = fallback && !f.has(key) ? *fallback : f.number(key);
  };
  auto integer = [&](const char* key, std::optional<Index> fallback = std::nullopt) {
    out[key] = fallback && !f.has(key) ? *fallback : f.integer(key);
  };
  if (generator == "lcqp") {
    integer("p"), integer("n_atoms"), integer("m_constraints");
    num("eigen_floor"), num("eigen_ceil");
  } else if (generator == "lcqp_kappa") {
    integer("p"), integer("n_atoms"), integer("m_constraints");
    num("kappa");
  } else if (generator == "logreg") {
    integer("n_samples"), integer("d"), integer("n_classes", 2), integer("m_constraints");
    const bool wd = f.has("weight_decay"), kappa = f.has("kappa");
    if (wd == kappa) config_error(path, "exactly one of weight_decay or kappa is required");
    num(wd ? "weight_decay" : "kappa");
  } else if (generator == "network_flow") {
    const json& edges = f.raw("edges");
    if (!edges.is_array() || edges.empty()) config_error(f.at("edges"), "expected a list of [from, to] pairs");
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const json& e = edges[i];
      if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
        config_error(f.at("edges") + "[" + std::to_string(i) + "]", "expected [from, to]");
      }
    }
    out["edges"] = edges;
    out["rates"] = f.numbers("rates");
    out["weights"] = f.numbers("weights");
  } else if (generator == "federated_quadratics") {
    const FederatedQuadraticSpec d;
    integer("n_workers", d.n_workers), integer("dim", d.dim);
    integer("atoms_per_worker", d.atoms_per_worker);
    num("heterogeneity", d.heterogeneity), num("noise", d.noise), num("curvature", d.curvature);
    num("ridge", d.ridge);
    out["shared_atoms"] = f.boolean("shared_atoms", d.shared_atoms);
  } else {
    config_error(path.substr(0, path.rfind('.')) + ".generator", "unknown generator '" + generator + "'");
  }
  f.finish();
  return out;
}

void validate_solver(const SolverConfig& s, const std::string& path) {
  const bool vr = s.variant != Variant::kDpSgd;
  if (s.gap_E < 1) config_error(path + ".gap_E", "must be at least 1");
  if (vr && s.inner_m < s.gap_E) config_error(path + ".inner_m", "must be at least gap_E");
  if (!vr && s.total_T < s.gap_E) config_error(path + ".total_T", "must be at least gap_E");
  if (s.eta && !(*s.eta > 0.0)) config_error(path + ".eta", "must be positive");
  if (s.mu && !(*s.mu >= 0.0)) config_error(path + ".mu", "must be non-negative");
  if (s.theta && !(*s.theta > 0.0)) config_error(path + ".theta", "must be positive");
  if (s.record_every < 0) config_error(path + ".record_every", "must be non-negative");
}

SweepEntry parse_entry(const json& j, const std::string& path, Index index) {
  Fields f(j, path);
  SweepEntry e;
  const std::string variant = f.text("variant");
  const auto v = parse_variant(variant);
  if (!v) config_error(f.at("variant"), "unknown variant '" + variant + "'");
  e.solver.variant = *v;
  e.label = f.has("label") ? f.text("label") : std::to_string(index) + "_" + variant;
  if (e.label.empty() || e.label.find_first_of("/\\, \n") != std::string::npos) {
    config_error(f.at("label"), "must be non-empty without spaces, commas or slashes");
  }
  if (f.has("mode")) {
    const std::string mode = f.text("mode");
    if (mode == "local") e.mode = RunMode::kLocal;
    else if (mode != "delayed_projection") config_error(f.at("mode"), "expected delayed_projection or local");
  }
  SolverConfig& s = e.solver;
  s.eta = f.optional_number("eta");
  s.gap_E = f.integer("gap_E", 1);
  s.inner_m = f.integer("inner_m", s.gap_E);
  s.stages_S = positive(f, "stages_S", 1);
  s.total_T = f.integer("total_T", s.gap_E);
  s.mu = f.optional_number("mu");
  s.batch = positive(f, "batch", 1);
  const std::int64_t seed = f.integer("seed", 0);
  if (seed < 0) config_error(f.at("seed"), "must be non-negative");
  s.seed = static_cast<std::uint64_t>(seed);
  s.record_every = f.integer("record_every", 1);
  s.theta = f.optional_number("theta");
  e.restart_eps = f.optional_number("restart_eps");
  f.finish();
  validate_solver(s, path);
  if (e.restart_eps) {
    if (s.variant != Variant::kDpAsvrg) config_error(path + ".restart_eps", "only valid for dp_asvrg");
    if (e.mode == RunMode::kLocal) config_error(path + ".restart_eps", "not available in local mode");
    if (!(*e.restart_eps > 0.0)) config_error(path + ".restart_eps", "must be positive");
  }
  return e;
}

std::string json_location(const json::parse_error& e, std::string_view text) {
  const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
  const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n');
  return "line " + std::to_string(line);
}

std::vector<Edge> edges_of(const json& j) {
  std::vector<Edge> edges;
  for (const auto& e : j) edges.push_back({e[0].get<Index>(), e[1].get<Index>()});
  return edges;
}

Vector vector_of(const json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
  return v;
}

LcpProblem generate(const ProblemSpec& spec) {
  const json p = json::parse(spec.params_json);
  const std::uint64_t seed = spec.seed;
  const std::string& g = spec.generator;
  if (g == "lcqp") {
    return make_lcqp(seed, p["p"], p["n_atoms"], p["m_constraints"], p["eigen_floor"],
                     p["eigen_ceil"]);
  }
  if (g == "lcqp_kappa") {
    return make_lcqp_kappa(seed, p["p"], p["n_atoms"], p["m_constraints"], p["kappa"]);
  }
  if (g == "logreg") {
    const Index n = p["n_samples"], d = p["d"];
    const int k = p["n_classes"];
    const double wd = p.contains("weight_decay")
                          ? p["weight_decay"].get<double>()
                          : logreg_weight_decay_for_kappa(seed, n, d, k, p["kappa"]);
    return make_constrained_logreg(seed, n, d, k, p["m_constraints"], wd);
  }
  if (g == "network_flow") {
    const auto edges = edges_of(p["edges"]);
    return make_network_flow(edges, vector_of(p["rates"]), vector_of(p["weights"]));
  }
  if (g == "federated_quadratics") {
    FederatedQuadraticSpec fs;
    fs.n_workers = p["n_workers"], fs.dim = p["dim"], fs.atoms_per_worker = p["atoms_per_worker"];
    fs.heterogeneity = p["heterogeneity"], fs.noise = p["noise"], fs.curvature = p["curvature"];
    fs.ridge = p["ridge"], fs.shared_atoms = p["shared_atoms"];
    return lift_consensus(make_federated_quadratics(seed, fs));
  }
  throw Error(ErrorCode::kConfigError, "problem.generator: unknown generator '" + g + "'");
}

std::string variant_label(const SweepEntry& e) {
  std::string v(to_string(e.solver.variant));
  if (e.mode == RunMode::kLocal) v = "local_" + v.substr(3);
  return v;
}

EntryOutcome run_entry(const SweepEntry& entry, const ProblemSnapshot& snap, Index repetition,
                       std::uint64_t seed_offset, const std::vector<double>& eps,
                       const fs::path& out_dir) {
  EntryOutcome o;
  o.label = entry.label;
  o.variant = variant_label(entry);
  o.repetition = repetition;
  o.seed_offset = seed_offset;
  o.csv_file = entry.label + "_rep" + std::to_string(repetition) + "_seed" +
               std::to_string(seed_offset) + ".csv";
  try {
    SolverConfig cfg = entry.solver;
    cfg.seed += seed_offset;
    RunTrace trace;
    if (entry.mode == RunMode::kLocal) {
      const auto fed = federated_view(snap.problem);
      if (!fed) throw Error(ErrorCode::kInvalidArgument, "local mode needs a federated problem");
      FederatedResult r = run_local(*fed, cfg);
      trace = std::move(r.trace);
      o.counters = r.counters;
    } else {
      cfg.x_star = snap.x_star;
      cfg.f_star = snap.f_star;
      SolveResult r = entry.restart_eps ? restart_asvrg(snap.problem, cfg, *entry.restart_eps)
                                        : solve(snap.problem, cfg);
      trace = std::move(r.trace);
      o.counters = r.counters;
    }
    trace.set_run_id(entry.label + "/rep" + std::to_string(repetition));
    trace.set_variant(o.variant);
    if (!trace.empty()) {
      o.final_suboptimality = trace.back().suboptimality;
      o.final_feasibility = trace.back().feasibility;
    }
    for (double e : eps) o.to_eps.push_back(complexity_to_eps(trace, e, entry.label));
    std::ofstream out(out_dir / o.csv_file);
    if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write " + o.csv_file);
    write_csv(out, trace);
    o.ok = true;
  } catch (const std::exception& ex) {
    o.ok = false;
    o.error = ex.what();
    o.csv_file.clear();
  }
  return o;
}

json number_or_text(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

json to_json(const ComparisonRow& r) {
  return {{"eps", r.eps},
          {"reached", r.reached},
          {"projections", r.projections_to_eps},
          {"gradients", r.gradients_to_eps},
          {"iterations", r.iterations_to_eps},
          {"stages", r.stages_to_eps}};
}

void write_readme(const fs::path& dir, const RunSummary& summary) {
  std::ofstream out(dir / "README.md");
  out << "# Run output\n\n"
         "One CSV per sweep entry and repetition, named `<label>_rep<r>_seed<offset>.csv`.\n\n"
         "| column | meaning |\n|---|---|\n"
         "| run_id | `<label>/rep<r>` |\n"
         "| variant | solver variant (`local_*` for worker simulations) |\n"
         "| stage | completed stages |\n"
         "| iter | completed inner iterations |\n"
         "| projections | projection events so far |\n"
         "| gradients | stochastic gradient evaluations so far |\n"
         "| comm_rounds | synchronization rounds (local runs only) |\n"
         "| suboptimality | F(x) − F(x*) at the recorded point |\n"
         "| feasibility | ‖Aᵀx − b‖₂ at the recorded point |\n"
         "| wall_ns | nanoseconds since the run started |\n\n"
         "Rows are taken after projection events at the configured cadence and at every stage "
         "boundary. `summary.json` holds the projections-to-eps table.\n\n## Files\n\n";
  for (const auto& e : summary.entries) {
    out << "- " << (e.ok ? e.csv_file : e.label + " (failed: " + e.error + ")") << '\n';
  }
}

void write_summary(const fs::path& dir, const ProblemSnapshot& snap, const RunSummary& summary) {
  json entries = json::array();
  for (const auto& e : summary.entries) {
    json rows = json::array();
    for (const auto& r : e.to_eps) rows.push_back(to_json(r));
    entries.push_back({{"label", e.label},
                       {"variant", e.variant},
                       {"repetition", e.repetition},
                       {"seed_offset", e.seed_offset},
                       {"csv", e.csv_file},
                       {"ok", e.ok},
                       {"error", e.error},
                       {"counters",
                        {{"iterations", e.counters.iterations},
                         {"stages", e.counters.stages},
                         {"projections", e.counters.projections},
                         {"gradients", e.counters.gradients},
                         {"comm_rounds", e.counters.comm_rounds}}},
                       {"final_suboptimality", number_or_text(e.final_suboptimality)},
                       {"final_feasibility", number_or_text(e.final_feasibility)},
                       {"projections_to_eps", rows}});
  }
  json problem = {{"name", snap.problem.name},
                  {"dimension", snap.problem.dimension()},
                  {"n_atoms", snap.problem.n_atoms()},
                  {"L", snap.problem.smoothness_L},
                  {"mu", snap.problem.strong_convexity_mu},
                  {"kappa", number_or_text(snap.problem.kappa())}};
  if (snap.f_star) problem["f_star"] = *snap.f_star;
  std::ofstream out(dir / "summary.json");
  out << json{{"problem", problem}, {"entries", entries}}.dump(2) << '\n';
}

}  // namespace

ExperimentConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfigError, json_location(e, json_text) + ": " + e.what());
  }
  Fields f(root, "");
  ExperimentConfig cfg;
  cfg.schema_version = static_cast<int>(f.integer("schema_version"));
  if (cfg.schema_version != 1) config_error("schema_version", "unsupported version");

  Fields p(f.raw("problem"), "problem");
  if (p.has("snapshot")) {
    cfg.problem.snapshot = p.text("snapshot");
  } else {
    cfg.problem.generator = p.text("generator");
    const std::int64_t seed = p.integer("seed", 0);
    if (seed < 0) config_error("problem.seed", "must be non-negative");
    cfg.problem.seed = static_cast<std::uint64_t>(seed);
    const json params = p.has("params") ? p.raw("params") : json::object();
    cfg.problem.params_json = parse_params(cfg.problem.generator, params, "problem.params").dump();
  }
  p.finish();

  const json& sweep = f.raw("sweep");
  if (!sweep.is_array()) config_error("sweep", "expected a list");
  if (sweep.empty()) throw Error(ErrorCode::kEmptySweep, "sweep: no entries to run");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    const std::string path = "sweep[" + std::to_string(i) + "]";
    SweepEntry e = parse_entry(sweep[i], path, static_cast<Index>(i));
    if (!labels.insert(e.label).second) config_error(path + ".label", "duplicate label '" + e.label + "'");
    if (e.mode == RunMode::kLocal && !cfg.problem.snapshot &&
        cfg.problem.generator != "federated_quadratics") {
      config_error(path + ".mode", "local mode needs a federated problem");
    }
    cfg.sweep.push_back(std::move(e));
  }
  if (f.has("output_dir")) cfg.output_dir = f.text("output_dir");
  cfg.reference_tol = f.number("reference_tol", cfg.reference_tol);
  if (!(cfg.reference_tol > 0.0)) config_error("reference_tol", "must be positive");
  cfg.repetitions = positive(f, "repetitions", 1);
  if (f.has("eps")) {
    cfg.eps = f.numbers("eps");
    for (double e : cfg.eps) {
      if (!(e > 0.0)) config_error("eps", "values must be positive");
    }
  }
  f.finish();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, path + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

ProblemSnapshot build_problem(const ExperimentConfig& config) {
  const ProblemSpec& spec = config.problem;
  ProblemSnapshot snap = spec.snapshot
                             ? load_snapshot_file(*spec.snapshot)
                             : ProblemSnapshot{generate(spec), std::nullopt, std::nullopt,
                                               {{"generator", spec.generator},
                                                {"seed", std::to_string(spec.seed)},
                                                {"params", spec.params_json}}};
  if (!snap.x_star) {
    ReferenceOptions opts;
    opts.tol = config.reference_tol;
    snap.x_star = solve_reference(snap.problem, opts);
    snap.f_star = snap.problem.value(*snap.x_star);
  }
  return snap;
}

bool RunSummary::all_ok() const {
  return std::all_of(entries.begin(), entries.end(), [](const EntryOutcome& e) { return e.ok; });
}

RunSummary run_experiment(const ExperimentConfig& config, const ProblemSnapshot& problem,
                          const std::string& out_dir, std::uint64_t base_seed_offset,
                          unsigned threads) {
  if (config.sweep.empty()) throw Error(ErrorCode::kEmptySweep, "sweep: no entries to run");
  const fs::path dir(out_dir);
  fs::create_directories(dir);

  struct Job {
    const SweepEntry* entry;
    Index repetition;
  };
  std::vector<Job> jobs;
  for (const auto& e : config.sweep) {
    for (Index r = 0; r < config.repetitions; ++r) jobs.push_back({&e, r});
  }
  RunSummary summary;
  summary.entries.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& job = jobs[i];
      summary.entries[i] = run_entry(*job.entry, problem, job.repetition,
                                     base_seed_offset + static_cast<std::uint64_t>(job.repetition),
                                     config.eps, dir);
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  write_readme(dir, summary);
  write_summary(dir, problem, summary);
  return summary;
}

std::vector<ComparisonRow> compare_csv(const std::vector<std::string>& files,
                                       const std::vector<double>& eps) {
  std::vector<ComparisonRow> rows;
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw Error(ErrorCode::kConfigError, file + ": cannot open");
    for (const auto& trace : read_csv(in)) {
      const std::string label = trace.run_id().substr(0, trace.run_id().rfind('/'));
      for (double e : eps) rows.push_back(complexity_to_eps(trace, e, label));
    }
  }
  return rows;
}

unsigned threads_from_env() {
  const char* v = std::getenv("DP_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) return 1;
  return static_cast<unsigned>(n);
}

}  // namespace dpsolve
