#include "dpsolve/snapshot.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "dpsolve/error.hpp"

namespace dpsolve {
namespace {

constexpr const char* kMagic = "DPSNAP 1";

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex(const std::string& token, const std::string& key) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0') {
    throw Error(ErrorCode::kSnapshotFormat, "bad number '" + token + "' in " + key);
  }
  return v;
}

struct Container {
  std::map<std::string, std::string> text;
  std::map<std::string, double> scalars;
  std::map<std::string, Matrix> matrices;

  const std::string& get_text(const std::string& key) const {
    auto it = text.find(key);
    if (it == text.end()) throw Error(ErrorCode::kSnapshotFormat, "missing text " + key);
    return it->second;
  }
  double get_scalar(const std::string& key) const {
    auto it = scalars.find(key);
    if (it == scalars.end()) throw Error(ErrorCode::kSnapshotFormat, "missing scalar " + key);
    return it->second;
  }
  const Matrix& get_matrix(const std::string& key) const {
    auto it = matrices.find(key);
    if (it == matrices.end()) throw Error(ErrorCode::kSnapshotFormat, "missing matrix " + key);
    return it->second;
  }
  Vector get_vector(const std::string& key) const {
    const Matrix& m = get_matrix(key);
    if (m.cols() != 1 && m.size() != 0) {
      throw Error(ErrorCode::kSnapshotFormat, key + " is not a column vector");
    }
    return m.size() == 0 ? Vector() : Vector(m.col(0));
  }
};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) { out_ << kMagic << '\n'; }

  void text(const std::string& key, const std::string& value) {
    if (value.find('\n') != std::string::npos) {
      throw Error(ErrorCode::kSnapshotFormat, "text value for " + key + " contains a newline");
    }
    out_ << "text " << key << ' ' << value << '\n';
  }
  void scalar(const std::string& key, double v) { out_ << "scalar " << key << ' ' << hex(v) << '\n'; }
  void matrix(const std::string& key, const Matrix& m) {
    out_ << "matrix " << key << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) {
        if (j) out_ << ' ';
        out_ << hex(m(i, j));
      }
      out_ << '\n';
    }
  }
  void vector(const std::string& key, const Vector& v) { matrix(key, Matrix(v)); }
  void finish() { out_ << "end\n"; }

 private:
  std::ostream& out_;
};

Container read_container(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw Error(ErrorCode::kSnapshotFormat, "missing DPSNAP 1 header");
  }
  Container c;
  while (std::getline(in, line)) {
    if (line == "end") return c;
    std::istringstream ls(line);
    std::string tag, key;
    ls >> tag >> key;
    if (key.empty()) throw Error(ErrorCode::kSnapshotFormat, "malformed line: " + line);
    if (tag == "text") {
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      c.text[key] = value;
    } else if (tag == "scalar") {
      std::string token;
      ls >> token;
      c.scalars[key] = parse_hex(token, key);
    } else if (tag == "matrix") {
      Index rows = -1, cols = -1;
      ls >> rows >> cols;
      if (!ls || rows < 0 || cols < 0) {
        throw Error(ErrorCode::kSnapshotFormat, "bad dimensions for " + key);
      }
      Matrix m(rows, cols);
      for (Index i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) {
          throw Error(ErrorCode::kSnapshotFormat, "truncated matrix " + key);
        }
        std::istringstream rs(line);
        std::string token;
        for (Index j = 0; j < cols; ++j) {
          if (!(rs >> token)) throw Error(ErrorCode::kSnapshotFormat, "short row in " + key);
          m(i, j) = parse_hex(token, key);
        }
      }
      c.matrices[key] = std::move(m);
    } else {
      throw Error(ErrorCode::kSnapshotFormat, "unknown record '" + tag + "'");
    }
  }
  throw Error(ErrorCode::kSnapshotFormat, "missing end marker");
}

void write_objective(Writer& w, const std::string& pfx, const Objective& obj) {
  if (auto* q = dynamic_cast<const QuadraticObjective*>(&obj)) {
    w.text(pfx + ".kind", "quadratic");
    w.matrix(pfx + ".atoms", q->atoms());
    w.scalar(pfx + ".scale", q->scale());
    w.scalar(pfx + ".ridge", q->ridge());
    w.matrix(pfx + ".linear", q->linear());
    w.vector(pfx + ".constants", q->constants());
  } else if (auto* l = dynamic_cast<const LogisticObjective*>(&obj)) {
    w.text(pfx + ".kind", "logistic");
    const Matrix& design = l->design();
    w.matrix(pfx + ".features", design.leftCols(design.cols() - 1));
    Vector labels(static_cast<Index>(l->labels().size()));
    for (Index i = 0; i < labels.size(); ++i) labels(i) = l->labels()[static_cast<std::size_t>(i)];
    w.vector(pfx + ".labels", labels);
    w.scalar(pfx + ".n_classes", l->n_classes());
    w.scalar(pfx + ".weight_decay", l->weight_decay());
  } else if (auto* f = dynamic_cast<const NetworkFlowObjective*>(&obj)) {
    if (!f->weights()) {
      throw Error(ErrorCode::kSnapshotFormat, "callback edge costs cannot be stored");
    }
    w.text(pfx + ".kind", "network_flow");
    w.vector(pfx + ".weights", *f->weights());
  } else if (auto* lifted = dynamic_cast<const LiftedObjective*>(&obj)) {
    w.text(pfx + ".kind", "lifted");
    w.scalar(pfx + ".workers", static_cast<double>(lifted->workers()));
    const auto keys = lifted->stream_keys();
    for (Index k = 0; k < lifted->workers(); ++k) {
      const std::string sub = pfx + ".local" + std::to_string(k);
      w.text(sub + ".key", std::to_string(keys[static_cast<std::size_t>(k)]));
      write_objective(w, sub, lifted->local(k));
    }
  } else {
    throw Error(ErrorCode::kSnapshotFormat, "objective type cannot be stored");
  }
}

std::shared_ptr<const Objective> read_objective(const Container& c, const std::string& pfx) {
  const std::string& kind = c.get_text(pfx + ".kind");
  if (kind == "quadratic") {
    return std::make_shared<QuadraticObjective>(
        c.get_matrix(pfx + ".atoms"), c.get_scalar(pfx + ".scale"), c.get_scalar(pfx + ".ridge"),
        c.get_matrix(pfx + ".linear"), c.get_vector(pfx + ".constants"));
  }
  if (kind == "logistic") {
    const Vector labels = c.get_vector(pfx + ".labels");
    std::vector<int> y(static_cast<std::size_t>(labels.size()));
    for (Index i = 0; i < labels.size(); ++i) y[static_cast<std::size_t>(i)] = static_cast<int>(labels(i));
    return std::make_shared<LogisticObjective>(c.get_matrix(pfx + ".features"), std::move(y),
                                               static_cast<int>(c.get_scalar(pfx + ".n_classes")),
                                               c.get_scalar(pfx + ".weight_decay"));
  }
  if (kind == "network_flow") {
    return std::make_shared<NetworkFlowObjective>(c.get_vector(pfx + ".weights"));
  }
  if (kind == "lifted") {
    const auto n = static_cast<Index>(c.get_scalar(pfx + ".workers"));
    std::vector<std::shared_ptr<const Objective>> locals;
    std::vector<std::uint64_t> keys;
    for (Index k = 0; k < n; ++k) {
      const std::string sub = pfx + ".local" + std::to_string(k);
      keys.push_back(std::stoull(c.get_text(sub + ".key")));
      locals.push_back(read_objective(c, sub));
    }
    return std::make_shared<LiftedObjective>(std::move(locals), std::move(keys));
  }
  throw Error(ErrorCode::kSnapshotFormat, "unknown objective kind '" + kind + "'");
}

}  // namespace

void save_snapshot(std::ostream& out, const ProblemSnapshot& snapshot) {
  const LcpProblem& p = snapshot.problem;
  std::ostringstream buf;
  Writer w(buf);
  w.text("name", p.name);
  for (const auto& [k, v] : snapshot.tags) w.text("tag." + k, v);
  const ConstraintSubspace& s = p.subspace;
  if (s.kind() == SubspaceKind::kConsensus) {
    w.text("subspace.kind", "consensus");
    w.scalar("subspace.workers", static_cast<double>(s.workers()));
    w.scalar("subspace.block_dim", static_cast<double>(s.block_dim()));
  } else if (s.a_matrix().cols() == 0) {
    w.text("subspace.kind", "unconstrained");
    w.scalar("subspace.dimension", static_cast<double>(s.dimension()));
  } else {
    w.text("subspace.kind", "explicit");
    w.matrix("subspace.a", s.a_matrix());
    w.vector("subspace.b", s.rhs());
    w.scalar("subspace.allow_point", s.rank() == s.dimension() ? 1.0 : 0.0);
  }
  write_objective(w, "objective", *p.objective);
  w.scalar("meta.L", p.smoothness_L);
  w.scalar("meta.mu", p.strong_convexity_mu);
  w.scalar("meta.kappa", p.kappa());
  if (snapshot.x_star) w.vector("meta.x_star", *snapshot.x_star);
  if (snapshot.f_star) w.scalar("meta.f_star", *snapshot.f_star);
  w.finish();
  out << buf.str();
}

ProblemSnapshot load_snapshot(std::istream& in) {
  const Container c = read_container(in);
  const std::string& kind = c.get_text("subspace.kind");
  std::optional<ConstraintSubspace> subspace;
  if (kind == "consensus") {
    subspace = ConstraintSubspace::consensus(static_cast<Index>(c.get_scalar("subspace.workers")),
                                             static_cast<Index>(c.get_scalar("subspace.block_dim")));
  } else if (kind == "unconstrained") {
    subspace = ConstraintSubspace::unconstrained(
        static_cast<Index>(c.get_scalar("subspace.dimension")));
  } else if (kind == "explicit") {
    subspace = ConstraintSubspace::build(c.get_matrix("subspace.a"), c.get_vector("subspace.b"),
                                         c.get_scalar("subspace.allow_point") != 0.0);
  } else {
    throw Error(ErrorCode::kSnapshotFormat, "unknown subspace kind '" + kind + "'");
  }
  ProblemSnapshot snap{make_problem(c.get_text("name"), read_objective(c, "objective"),
                                    std::move(*subspace)),
                       std::nullopt, std::nullopt, {}};
  snap.problem.smoothness_L = c.get_scalar("meta.L");
  snap.problem.strong_convexity_mu = c.get_scalar("meta.mu");
  if (c.matrices.count("meta.x_star")) snap.x_star = c.get_vector("meta.x_star");
  if (c.scalars.count("meta.f_star")) snap.f_star = c.get_scalar("meta.f_star");
  for (const auto& [k, v] : c.text) {
    if (k.rfind("tag.", 0) == 0) snap.tags[k.substr(4)] = v;
  }
  return snap;
}

void save_snapshot_file(const std::string& path, const ProblemSnapshot& snapshot) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write " + path);
  save_snapshot(out, snapshot);
}

ProblemSnapshot load_snapshot_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidArgument, "cannot read " + path);
  return load_snapshot(in);
}

std::optional<FederatedInstance> federated_view(const LcpProblem& problem) {
  auto* lifted = dynamic_cast<const LiftedObjective*>(problem.objective.get());
  if (!lifted) return std::nullopt;
  std::vector<std::shared_ptr<const Objective>> locals;
  for (Index k = 0; k < lifted->workers(); ++k) {
    locals.push_back(std::shared_ptr<const Objective>(problem.objective, &lifted->local(k)));
  }
  return make_federated_instance(std::move(locals), lifted->stream_keys());
}

}  // namespace dpsolve
