#pragma once

// Problem configuration (JSON), the solve / verify / plot pipelines and the
// field and report files they write.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <initializer_list>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fmd/design.hpp"
#include "fmd/measures.hpp"
#include "fmd/oracles.hpp"
#include "fmd/solver_flow.hpp"
#include "fmd/solver_grid.hpp"

namespace fmd {

using Json = nlohmann::json;

/// Exit statuses of the command-line pipelines.
enum ExitCode : int { kExitOk = 0, kExitInputError = 1, kExitStalled = 2 };

/// Malformed or invalid configuration (maps to kExitInputError).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SolverConfig {
  std::string backend = "pdhg";  // pdhg | flow-grid | flow-visibility
  int resolution = 128;
  int max_iter = 0;
  double tol_gap = 1e-3;
  double tol_div = 1e-6;
};

/// File names written under the output directory.
struct OutputConfig {
  std::string report = "report.json";
  std::string u = "u.csv";
  std::string p = "p.csv";
  std::string tensor = "tensor.csv";
  std::string history = "history.csv";
  bool plots = false;
};

struct ProblemConfig {
  Json domain;   // validated domain record
  Json sources;  // validated list of source records
  double lambda0 = 1.0;
  SolverConfig solver;
  OutputConfig outputs;

  SourceMeasure measure() const;
};

namespace detail {

/// Schema reader that names the offending field.
class Field {
 public:
  Field(const Json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  const Json& json() const { return *j_; }
  const std::string& path() const { return path_; }

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError("config: " + path_ + ": " + what); }

  void expect_object(std::initializer_list<const char*> allowed) const {
    if (!j_->is_object()) fail("expected an object");
    for (const auto& [k, v] : j_->items()) {
      if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) == allowed.end()) {
        fail("unknown key '" + k + "'");
      }
    }
  }
  bool has(const char* key) const { return j_->contains(key); }
  Field at(const char* key) const {
    if (!j_->contains(key)) fail(std::string("missing required key '") + key + "'");
    return Field(j_->at(key), path_ + "." + key);
  }
  Field at(std::size_t i) const { return Field(j_->at(i), path_ + "[" + std::to_string(i) + "]"); }

  double number() const {
    if (!j_->is_number()) fail("expected a number");
    const double v = j_->get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }
  int integer() const {
    if (!j_->is_number_integer()) fail("expected an integer");
    return j_->get<int>();
  }
  bool boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
  }
  std::string string() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }
  std::size_t array_size() const {
    if (!j_->is_array()) fail("expected an array");
    return j_->size();
  }
  Point point() const {
    if (!j_->is_array() || j_->size() != 2) fail("expected a point [x, y]");
    return {at(std::size_t{0}).number(), at(std::size_t{1}).number()};
  }
  Polygon polygon() const {
    Polygon poly;
    for (std::size_t i = 0; i < array_size(); ++i) poly.push_back(at(i).point());
    return poly;
  }
  std::array<double, 3> coeffs() const {
    const std::size_t n = array_size();
    if (n == 0 || n > 3) fail("expected 1 to 3 polynomial coefficients");
    std::array<double, 3> c{};
    for (std::size_t i = 0; i < n; ++i) c[i] = at(i).number();
    return c;
  }

 private:
  const Json* j_;
  std::string path_;
};

inline Domain2D parse_domain(const Field& f) {
  const std::string type = f.at("type").string();
  try {
    if (type == "disc") {
      f.expect_object({"type", "center", "radius"});
      return Domain2D::disc(f.at("center").point(), f.at("radius").number());
    }
    if (type == "polygon") {
      f.expect_object({"type", "outer", "holes"});
      std::vector<Polygon> holes;
      if (f.has("holes")) {
        const Field h = f.at("holes");
        for (std::size_t i = 0; i < h.array_size(); ++i) holes.push_back(h.at(i).polygon());
      }
      return Domain2D::polygon(f.at("outer").polygon(), holes);
    }
  } catch (const std::invalid_argument& e) {
    f.fail(e.what());
  }
  f.at("type").fail("unknown domain type '" + type + "' (expected disc or polygon)");
}

inline SourceComponent parse_source(const Field& f) {
  const std::string type = f.at("type").string();
  if (type == "atom") {
    f.expect_object({"type", "at", "weight"});
    return Atom{f.at("at").point(), f.at("weight").number()};
  }
  if (type == "segment") {
    f.expect_object({"type", "a", "b", "coeffs"});
    const Point a = f.at("a").point();
    const Point b = f.at("b").point();
    if (a == b) f.fail("segment endpoints coincide");
    return SegmentDensity{a, b, f.at("coeffs").coeffs()};
  }
  if (type == "arc") {
    f.expect_object({"type", "center", "radius", "theta0", "theta1", "coeffs"});
    ArcDensity a{f.at("center").point(), f.at("radius").number(), f.at("theta0").number(), f.at("theta1").number(),
                 f.at("coeffs").coeffs()};
    if (!(a.radius > 0.0)) f.at("radius").fail("must be positive");
    if (!(a.theta1 > a.theta0)) f.at("theta1").fail("must exceed theta0");
    return a;
  }
  if (type == "boundary") {
    f.expect_object({"type", "coeff", "px", "py"});
    const int px = f.at("px").integer();
    const int py = f.at("py").integer();
    if (px < 0 || py < 0) f.fail("exponents must be non-negative");
    return BoundaryDensity{f.at("coeff").number(), px, py};
  }
  if (type == "area") {
    f.expect_object({"type", "region", "density"});
    return AreaDensity{parse_domain(f.at("region")), f.at("density").number()};
  }
  f.at("type").fail("unknown source type '" + type + "' (expected atom, segment, arc, boundary or area)");
}

/// Canonical JSON text: sorted keys, two-space indent, numbers with 17
/// significant digits (integers verbatim).
inline void dump_canonical(const Json& j, std::string& out, int indent) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  const std::string pad_in(static_cast<std::size_t>(indent + 1) * 2, ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) out += ",\n";
        first = false;
        out += pad_in + Json(k).dump() + ": ";
        dump_canonical(v, out, indent + 1);
      }
      out += "\n" + pad + "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Arrays of numbers stay on one line.
      const bool flat = std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_primitive(); });
      out += flat ? "[" : "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i > 0) out += flat ? ", " : ",\n";
        if (!flat) out += pad_in;
        dump_canonical(j[i], out, indent + 1);
      }
      out += flat ? "]" : "\n" + pad + "]";
      return;
    }
    case Json::value_t::number_float: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", j.get<double>());
      std::string s = buf;
      // Keep floats recognizable as floats when re-read.
      if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
      out += s;
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace detail

inline std::string canonical_json(const Json& j) {
  std::string out;
  detail::dump_canonical(j, out, 0);
  out += '\n';
  return out;
}

/// Writes to a temporary sibling, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline SourceMeasure ProblemConfig::measure() const {
  SourceMeasure Q;
  Q.domain = detail::parse_domain(detail::Field(domain, "domain"));
  const detail::Field s(sources, "sources");
  for (std::size_t i = 0; i < s.array_size(); ++i) Q.components.push_back(detail::parse_source(s.at(i)));
  return Q;
}

/// Validates a parsed document against the configuration schema.
inline ProblemConfig config_from_json(const Json& doc) {
  const detail::Field root(doc, "config");
  root.expect_object({"domain", "sources", "lambda0", "solver", "outputs"});
  ProblemConfig cfg;
  cfg.domain = root.at("domain").json();
  cfg.sources = root.at("sources").json();
  cfg.lambda0 = root.at("lambda0").number();
  if (!(cfg.lambda0 > 0.0)) root.at("lambda0").fail("must be positive");
  if (root.at("sources").array_size() == 0) root.at("sources").fail("needs at least one component");
  if (root.has("solver")) {
    const detail::Field f = root.at("solver");
    f.expect_object({"backend", "resolution", "max_iter", "tol_gap", "tol_div"});
    if (f.has("backend")) cfg.solver.backend = f.at("backend").string();
    if (f.has("resolution")) cfg.solver.resolution = f.at("resolution").integer();
    if (f.has("max_iter")) cfg.solver.max_iter = f.at("max_iter").integer();
    if (f.has("tol_gap")) cfg.solver.tol_gap = f.at("tol_gap").number();
    if (f.has("tol_div")) cfg.solver.tol_div = f.at("tol_div").number();
    const auto& b = cfg.solver.backend;
    if (b != "pdhg" && b != "flow-grid" && b != "flow-visibility") {
      f.at("backend").fail("unknown backend '" + b + "' (expected pdhg, flow-grid or flow-visibility)");
    }
    if (cfg.solver.resolution < 4) f.at("resolution").fail("must be at least 4");
    if (cfg.solver.max_iter < 0) f.at("max_iter").fail("must be non-negative");
    if (!(cfg.solver.tol_gap > 0.0)) f.at("tol_gap").fail("must be positive");
    if (!(cfg.solver.tol_div > 0.0)) f.at("tol_div").fail("must be positive");
  }
  if (root.has("outputs")) {
    const detail::Field f = root.at("outputs");
    f.expect_object({"report", "u", "p", "tensor", "history", "plots"});
    for (auto [key, dst] : {std::pair{"report", &cfg.outputs.report}, std::pair{"u", &cfg.outputs.u},
                            std::pair{"p", &cfg.outputs.p}, std::pair{"tensor", &cfg.outputs.tensor},
                            std::pair{"history", &cfg.outputs.history}}) {
      if (!f.has(key)) continue;
      *dst = f.at(key).string();
      if (dst->empty() || std::filesystem::path(*dst).has_parent_path()) f.at(key).fail("must be a plain file name");
    }
    if (f.has("plots")) cfg.outputs.plots = f.at("plots").boolean();
  }
  SourceMeasure Q = cfg.measure();
  try {
    check_balance(Q);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: sources: ") + e.what());
  }
  for (std::size_t i = 0; i < Q.components.size(); ++i) {
    if (const auto* a = std::get_if<Atom>(&Q.components[i])) {
      if (!Q.domain.contains(a->at, 1e-9 * Q.domain.bounding_box().longest_side())) {
        throw ConfigError("config: sources[" + std::to_string(i) + "]: atom lies outside the domain");
      }
    }
  }
  return cfg;
}

inline Json config_to_json(const ProblemConfig& cfg) {
  Json j;
  j["domain"] = cfg.domain;
  j["sources"] = cfg.sources;
  j["lambda0"] = cfg.lambda0;
  j["solver"] = {{"backend", cfg.solver.backend},
                 {"resolution", cfg.solver.resolution},
                 {"max_iter", cfg.solver.max_iter},
                 {"tol_gap", cfg.solver.tol_gap},
                 {"tol_div", cfg.solver.tol_div}};
  j["outputs"] = {{"report", cfg.outputs.report}, {"u", cfg.outputs.u},           {"p", cfg.outputs.p},
                  {"tensor", cfg.outputs.tensor}, {"history", cfg.outputs.history}, {"plots", cfg.outputs.plots}};
  return j;
}

/// Parses JSON text; syntax errors report line and column.
inline ProblemConfig parse_config(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("config: parse error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                      ": " + e.what());
  }
  return config_from_json(doc);
}

inline ProblemConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

inline void save_config(const ProblemConfig& cfg, const std::filesystem::path& path) {
  write_file_atomic(path, canonical_json(config_to_json(cfg)));
}

/// Configuration reproducing an oracle problem.
inline ProblemConfig config_for_example(const AnalyticSolution& ex, const std::string& backend, int resolution,
                                        double lambda0 = 1.0) {
  auto pt = [](Point p) { return Json::array({p.x, p.y}); };
  auto poly = [&](const Polygon& P) {
    Json a = Json::array();
    for (Point p : P) a.push_back(pt(p));
    return a;
  };
  auto domain = [&](const Domain2D& d) {
    if (d.is_disc()) return Json{{"type", "disc"}, {"center", pt(d.center())}, {"radius", d.radius()}};
    Json holes = Json::array();
    for (const auto& h : d.holes()) holes.push_back(poly(h));
    return Json{{"type", "polygon"}, {"outer", poly(d.outer())}, {"holes", holes}};
  };
  auto coeffs = [](const std::array<double, 3>& c) { return Json::array({c[0], c[1], c[2]}); };
  ProblemConfig cfg;
  cfg.domain = domain(ex.domain());
  cfg.sources = Json::array();
  for (const auto& comp : ex.Q.components) {
    std::visit(
        [&](const auto& c) {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, Atom>) {
            cfg.sources.push_back({{"type", "atom"}, {"at", pt(c.at)}, {"weight", c.weight}});
          } else if constexpr (std::is_same_v<T, SegmentDensity>) {
            cfg.sources.push_back({{"type", "segment"}, {"a", pt(c.a)}, {"b", pt(c.b)}, {"coeffs", coeffs(c.coeffs)}});
          } else if constexpr (std::is_same_v<T, ArcDensity>) {
            cfg.sources.push_back({{"type", "arc"},
                                   {"center", pt(c.center)},
                                   {"radius", c.radius},
                                   {"theta0", c.theta0},
                                   {"theta1", c.theta1},
                                   {"coeffs", coeffs(c.coeffs)}});
          } else if constexpr (std::is_same_v<T, BoundaryDensity>) {
            cfg.sources.push_back({{"type", "boundary"}, {"coeff", c.coeff}, {"px", c.px}, {"py", c.py}});
          } else {
            cfg.sources.push_back({{"type", "area"}, {"region", domain(c.region)}, {"density", c.density}});
          }
        },
        comp);
  }
  cfg.lambda0 = lambda0;
  cfg.solver.backend = backend;
  cfg.solver.resolution = resolution;
  return cfg;
}

struct SolveReport {
  double value_Q1 = 0.0;
  double Y = 0.0;
  double gap = 0.0;  // relative duality gap
  double residual_div = 0.0;
  double trace_total = 0.0;
  double rank_one_max_violation = 0.0;
  double flux_mismatch = 0.0;
  double support_defect = 0.0;
  int iterations = 0;
  std::string backend;
  int resolution = 0;
  double wall_time = 0.0;
  bool converged = false;

  Json to_json() const {
    return {{"value_Q1", value_Q1},
            {"Y", Y},
            {"gap", gap},
            {"residual_div", residual_div},
            {"trace_total", trace_total},
            {"rank_one_max_violation", rank_one_max_violation},
            {"flux_mismatch", flux_mismatch},
            {"support_defect", support_defect},
            {"iterations", iterations},
            {"backend", backend},
            {"resolution", resolution},
            {"wall_time", wall_time},
            {"converged", converged}};
  }
};

/// Everything a solve produced, kept for callers that inspect fields.
struct SolveOutcome {
  SolveReport report;
  int exit_code = kExitOk;
  /// Grid backends.
  std::optional<PotentialField> u;
  std::optional<FluxMeasure> p;
  std::optional<TensorField> C;
  std::optional<RasterSource> q;
  /// Visibility backend.
  std::optional<FlowNetwork> network;
  std::optional<FlowSolution> flow;
  std::vector<SegmentTensor> segments;
  std::vector<IterateRecord> history;
};

namespace detail {

inline std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string potential_csv(const PotentialField& u) {
  const Grid& g = *u.grid;
  std::string s = "x,y,u\n";
  for (std::size_t k = 0; k < g.num_nodes(); ++k) {
    if (!g.node_supported[k]) continue;
    const Point x = g.node_point(k);
    s += csv_number(x.x) + ',' + csv_number(x.y) + ',' + csv_number(u.u[k]) + '\n';
  }
  return s;
}

/// Per-unit-area density of the flux at active cell centres.
inline std::string flux_csv(const FluxMeasure& p) {
  const Grid& g = *p.grid;
  const double area = g.h * g.h;
  std::string s = "x,y,p1,p2\n";
  for (std::size_t c = 0; c < g.num_cells(); ++c) {
    if (!g.cell_active[c]) continue;
    const Point x = g.cell_center(c);
    s += csv_number(x.x) + ',' + csv_number(x.y) + ',' + csv_number(p.p[c].x / area) + ',' +
         csv_number(p.p[c].y / area) + '\n';
  }
  return s;
}

/// Per-unit-area trace density and direction at active cell centres.
inline std::string tensor_csv(const TensorField& C) {
  const Grid& g = *C.grid;
  const double area = g.h * g.h;
  std::string s = "x,y,rho,n1,n2\n";
  for (std::size_t c = 0; c < g.num_cells(); ++c) {
    if (!g.cell_active[c]) continue;
    const Point x = g.cell_center(c);
    s += csv_number(x.x) + ',' + csv_number(x.y) + ',' + csv_number(C.rho[c] / area) + ',' + csv_number(C.n[c].x) +
         ',' + csv_number(C.n[c].y) + '\n';
  }
  return s;
}

inline double segment_rank_one_violation(const std::vector<SegmentTensor>& segs) {
  double worst = 0.0;
  for (const auto& s : segs) {
    const double a = s.n.x * s.n.x;
    const double b = s.n.x * s.n.y;
    const double d = s.n.y * s.n.y;
    const double small = 0.5 * (a + d) - std::sqrt(std::max(0.0, 0.25 * (a - d) * (a - d) + b * b));
    worst = std::max(worst, std::abs(small));
  }
  return worst;
}

inline void fill_grid_design(SolveOutcome& out, const PotentialField& u, const FluxMeasure& p, const RasterSource& q,
                             double lambda0) {
  SolveReport& r = out.report;
  r.value_Q1 = p.mass();
  r.Y = r.value_Q1 * r.value_Q1 / lambda0;
  if (r.value_Q1 > 0.0) {
    TensorField C = build_optimal_tensor(u, p, lambda0);
    const PotentialField ut = optimal_temperature(u, r.value_Q1, lambda0);
    r.trace_total = C.trace_total();
    r.rank_one_max_violation = rank_one_violation(C);
    r.flux_mismatch = flux_consistency(C, ut, p);
    out.C = std::move(C);
  }
  r.support_defect = support_condition(u, p);
  out.u = u;
  out.p = p;
  out.q = q;
}

}  // namespace detail

/// Runs the configured backend and the design assembly; writes nothing.
inline SolveOutcome solve_problem(const ProblemConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const SourceMeasure Q = cfg.measure();
  SolveOutcome out;
  SolveReport& r = out.report;
  r.backend = cfg.solver.backend;
  if (cfg.solver.backend == "pdhg") {
    r.resolution = cfg.solver.resolution;
    const GridPtr grid = std::make_shared<const Grid>(build_grid(Q.domain, cfg.solver.resolution));
    SolverParams params;
    params.max_iter = cfg.solver.max_iter;
    params.tol_gap = cfg.solver.tol_gap;
    params.tol_div = cfg.solver.tol_div;
    const KantorovichSolution sol = solve(rasterize(Q, grid), params);
    detail::fill_grid_design(out, sol.u, sol.p, sol.q, cfg.lambda0);
    r.value_Q1 = sol.value;
    r.Y = r.value_Q1 * r.value_Q1 / cfg.lambda0;
    r.gap = sol.relative_gap();
    r.residual_div = sol.residual_div;
    r.iterations = sol.iterations;
    r.converged = sol.converged;
    out.history = sol.history;
  } else if (cfg.solver.backend == "flow-grid") {
    r.resolution = cfg.solver.resolution;
    const FlowNetwork net = build_grid_network(Q, cfg.solver.resolution);
    const FlowSolution sol = min_cost_flow(net);
    const GridFlowResult flux = flow_to_flux(sol, net);
    const PotentialField u = flow_potential(sol, net);
    detail::fill_grid_design(out, u, flux.p, flux.q, cfg.lambda0);
    // The LP objective is the discrete norm; the cell flux carries extra mass
    // from routing the deposit onto the cell stencil.
    r.value_Q1 = sol.objective;
    r.Y = r.value_Q1 * r.value_Q1 / cfg.lambda0;
    double pairing = 0.0;
    for (std::size_t k = 0; k < net.nodes.size(); ++k) pairing += net.supply_value(k) * sol.potential[k];
    r.gap = sol.objective > 0.0 ? (sol.objective - pairing) / sol.objective : 0.0;
    r.residual_div = flux.residual_div;
    r.iterations = sol.augmentations;
    r.converged = true;
    out.network = net;
    out.flow = sol;
  } else if (cfg.solver.backend == "flow-visibility") {
    const FlowNetwork net = build_visibility_network(Q);
    const FlowSolution sol = min_cost_flow(net);
    r.value_Q1 = sol.objective;
    r.Y = r.value_Q1 * r.value_Q1 / cfg.lambda0;
    double pairing = 0.0;
    for (std::size_t k = 0; k < net.nodes.size(); ++k) pairing += net.supply_value(k) * sol.potential[k];
    r.gap = sol.objective > 0.0 ? (sol.objective - pairing) / sol.objective : 0.0;
    // Conservation is exact in scaled integers.
    std::vector<std::int64_t> bal(net.supply);
    for (std::size_t e = 0; e < net.edges.size(); ++e) {
      bal[net.edges[e].a] -= sol.flow[e];
      bal[net.edges[e].b] += sol.flow[e];
    }
    double l1 = 0.0;
    double tv = 0.0;
    for (std::size_t k = 0; k < bal.size(); ++k) {
      l1 += std::abs(static_cast<double>(bal[k]));
      tv += std::abs(static_cast<double>(net.supply[k]));
    }
    r.residual_div = tv > 0.0 ? l1 / tv : 0.0;
    if (sol.objective > 0.0) {
      out.segments = build_edge_tensor(net, sol, cfg.lambda0);
      // Along a flow edge the induced flux is rho (V / lambda0) slope n, with
      // slope the potential drop per length; both defects measure slope - 1.
      double mismatch = 0.0;
      double defect = 0.0;
      double mass = 0.0;
      std::size_t k = 0;
      for (std::size_t e = 0; e < net.edges.size(); ++e) {
        if (sol.flow[e] == 0) continue;
        const auto& ed = net.edges[e];
        const double m = std::abs(sol.flow_value(e)) * ed.cost;
        const double slope = std::abs(sol.potential[ed.a] - sol.potential[ed.b]) / ed.cost;
        mismatch += m * std::abs(slope - 1.0);
        defect += m * (1.0 - slope);
        mass += m;
        r.trace_total += out.segments[k++].rho;
      }
      r.flux_mismatch = mismatch / mass;
      r.support_defect = defect / mass;
      r.rank_one_max_violation = detail::segment_rank_one_violation(out.segments);
    }
    r.iterations = sol.augmentations;
    r.converged = true;
    out.network = net;
    out.flow = sol;
  } else {
    throw ConfigError("config: solver.backend: unknown backend '" + cfg.solver.backend + "'");
  }
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.exit_code = r.converged ? kExitOk : kExitStalled;
  return out;
}

/// Writes the report and field files of a finished solve into `dir`.
inline void write_outputs(const SolveOutcome& out, const OutputConfig& names, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  if (out.u) write_file_atomic(dir / names.u, detail::potential_csv(*out.u));
  if (out.p) write_file_atomic(dir / names.p, detail::flux_csv(*out.p));
  if (out.u && out.p) {
    if (out.C) {
      write_file_atomic(dir / names.tensor, detail::tensor_csv(*out.C));
    } else {
      TensorField empty{out.p->grid, std::vector<double>(out.p->p.size(), 0.0),
                        std::vector<Vec2>(out.p->p.size(), Vec2{}), 0.0, 0.0};
      write_file_atomic(dir / names.tensor, detail::tensor_csv(empty));
    }
  }
  if (!out.history.empty()) {
    std::string s = "iteration,value,gap,residual_div\n";
    for (const auto& h : out.history) {
      s += std::to_string(h.iteration) + ',' + detail::csv_number(h.value) + ',' + detail::csv_number(h.gap) + ',' +
           detail::csv_number(h.residual_div) + '\n';
    }
    write_file_atomic(dir / names.history, s);
  }
  if (out.network && out.network->mode == NetworkMode::visibility) {
    const FlowNetwork& net = *out.network;
    const FlowSolution& sol = *out.flow;
    std::string su = "x,y,u\n";
    for (std::size_t k = 0; k < net.nodes.size(); ++k) {
      su += detail::csv_number(net.nodes[k].x) + ',' + detail::csv_number(net.nodes[k].y) + ',' +
            detail::csv_number(sol.potential[k]) + '\n';
    }
    write_file_atomic(dir / names.u, su);
    // Per-edge rows at the edge midpoints: total flux and total trace of the strip.
    std::string sp = "x,y,p1,p2\n";
    std::string st = "x,y,rho,n1,n2\n";
    std::size_t k = 0;
    for (std::size_t e = 0; e < net.edges.size(); ++e) {
      if (sol.flow[e] == 0) continue;
      const auto& ed = net.edges[e];
      const Point a = net.nodes[ed.a];
      const Point b = net.nodes[ed.b];
      const Point m = 0.5 * (a + b);
      const Vec2 p = -sol.flow_value(e) * (b - a);
      sp += detail::csv_number(m.x) + ',' + detail::csv_number(m.y) + ',' + detail::csv_number(p.x) + ',' +
            detail::csv_number(p.y) + '\n';
      if (k < out.segments.size()) {
        const auto& sg = out.segments[k++];
        st += detail::csv_number(m.x) + ',' + detail::csv_number(m.y) + ',' + detail::csv_number(sg.rho) + ',' +
              detail::csv_number(sg.n.x) + ',' + detail::csv_number(sg.n.y) + '\n';
      }
    }
    write_file_atomic(dir / names.p, sp);
    write_file_atomic(dir / names.tensor, st);
    std::ostringstream edges;
    edges.precision(17);
    edges << "node_i,node_j,flow\n";
    for (std::size_t e = 0; e < net.edges.size(); ++e) {
      if (sol.flow[e] == 0) continue;
      edges << net.edges[e].a << ',' << net.edges[e].b << ',' << sol.flow_value(e) << '\n';
    }
    write_file_atomic(dir / "edges.csv", edges.str());
  }
  write_file_atomic(dir / names.report, canonical_json(out.report.to_json()));
}

inline void emit_plots(const std::filesystem::path& dir, const std::filesystem::path& out_dir);

/// solve pipeline: run, write files, return the exit status.
inline SolveOutcome run_solve(const ProblemConfig& cfg, const std::filesystem::path& dir) {
  SolveOutcome out = solve_problem(cfg);
  write_outputs(out, cfg.outputs, dir);
  if (cfg.outputs.plots) emit_plots(dir, dir);
  return out;
}

struct VerifyRow {
  std::string name;
  double measured = 0.0;
  double expected = 0.0;
  double error = 0.0;
  double tol = 0.0;
  bool pass = false;
};

struct VerifyTable {
  std::string example;
  std::string backend;
  int resolution = 0;
  std::vector<VerifyRow> rows;

  bool all_pass() const {
    return std::all_of(rows.begin(), rows.end(), [](const VerifyRow& r) { return r.pass; });
  }
  std::string to_csv() const {
    std::string s = "row,measured,expected,error,tol,status\n";
    for (const auto& r : rows) {
      s += r.name + ',' + detail::csv_number(r.measured) + ',' + detail::csv_number(r.expected) + ',' +
           detail::csv_number(r.error) + ',' + detail::csv_number(r.tol) + ',' + (r.pass ? "pass" : "fail") + '\n';
    }
    return s;
  }
};

namespace detail {

/// Fraction of the flux mass farther than `dilation` from the analytic
/// support; a known alternate optimum counts as support too.
inline double mass_outside(const AnalyticSolution& ex, const std::vector<std::pair<Point, double>>& mass,
                           double dilation) {
  double out = 0.0;
  double total = 0.0;
  for (const auto& [x, m] : mass) {
    double d = ex.support_distance(x);
    if (ex.alternate) d = std::min(d, ex.alternate->support_distance(x));
    if (d > dilation) out += m;
    total += m;
  }
  return total > 0.0 ? out / total : 0.0;
}

}  // namespace detail

/// Compares a solve of a named oracle problem against the analytic solution.
inline VerifyTable run_verify(const std::string& example, const std::string& backend, int resolution, double tol,
                              double lambda0 = 1.0) {
  const AnalyticSolution ex = example_by_name(example);
  const ProblemConfig cfg = config_for_example(ex, backend, resolution, lambda0);
  const SolveOutcome out = solve_problem(cfg);
  const SolveReport& r = out.report;
  VerifyTable t{example, backend, r.resolution, {}};
  auto add = [&](const std::string& name, double measured, double expected, double error) {
    t.rows.push_back({name, measured, expected, error, tol, error <= tol});
  };
  add("value", r.value_Q1, ex.value_Q1, std::abs(r.value_Q1 - ex.value_Q1) / ex.value_Q1);
  add("trace", r.trace_total, lambda0, std::abs(r.trace_total - lambda0) / lambda0);
  add("gap", r.gap, 0.0, std::abs(r.gap));

  std::vector<std::pair<Point, double>> mass;
  double dilation = 0.0;
  if (out.p) {
    const Grid& g = *out.p->grid;
    dilation = 2.0 * g.h;
    for (std::size_t c = 0; c < g.num_cells(); ++c) {
      if (norm(out.p->p[c]) > 0.0) mass.push_back({g.cell_center(c), norm(out.p->p[c])});
    }
  } else if (out.network) {
    dilation = 1e-9 * ex.domain().bounding_box().longest_side();
    const FlowNetwork& net = *out.network;
    for (std::size_t e = 0; e < net.edges.size(); ++e) {
      if (out.flow->flow[e] == 0) continue;
      const Point a = net.nodes[net.edges[e].a];
      const Point b = net.nodes[net.edges[e].b];
      const double m = std::abs(out.flow->flow_value(e)) * net.edges[e].cost / 16.0;
      for (int k = 0; k < 16; ++k) mass.push_back({a + ((k + 0.5) / 16.0) * (b - a), m});
    }
  }
  const double outside = detail::mass_outside(ex, mass, dilation);
  add("support", outside, 0.0, outside);
  add("alignment", r.support_defect, 0.0, std::abs(r.support_defect));
  return t;
}

namespace detail {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
  std::stringstream hs(line);
  for (std::string cell; std::getline(hs, cell, ',');) t.header.push_back(cell);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": not a number '" + cell + "'");
      }
    }
    if (row.size() != t.header.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Maps scattered (x, y) samples onto a pixel lattice inferred from the
/// smallest coordinate spacing.
struct Raster {
  int width = 1;
  int height = 1;
  double x0 = 0.0;
  double y0 = 0.0;
  double step = 1.0;

  static Raster fit(const std::vector<std::vector<double>>& rows) {
    Raster r;
    if (rows.empty()) return r;
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& row : rows) {
      xs.push_back(row[0]);
      ys.push_back(row[1]);
    }
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    const double span = std::max(xs.back() - xs.front(), ys.back() - ys.front());
    double step = span > 0.0 ? span : 1.0;
    for (const auto* v : {&xs, &ys}) {
      for (std::size_t i = 1; i < v->size(); ++i) {
        const double d = (*v)[i] - (*v)[i - 1];
        if (d > 1e-9 * std::max(span, 1.0)) step = std::min(step, d);
      }
    }
    // Scattered samples: at most 1024 pixels across.
    if (span > 0.0) step = std::max(step, span / 1024.0);
    r.x0 = xs.front();
    r.y0 = ys.front();
    r.step = step;
    r.width = static_cast<int>(std::llround((xs.back() - xs.front()) / step)) + 1;
    r.height = static_cast<int>(std::llround((ys.back() - ys.front()) / step)) + 1;
    return r;
  }
  int col(double x) const { return std::clamp(static_cast<int>(std::llround((x - x0) / step)), 0, width - 1); }
  int row(double y) const { return std::clamp(height - 1 - static_cast<int>(std::llround((y - y0) / step)), 0, height - 1); }
};

struct Rgb {
  unsigned char r = 255, g = 255, b = 255;
};

/// Binary PPM, each lattice pixel blown up to `scale` x `scale`.
inline std::string ppm(const std::vector<Rgb>& px, int w, int h, int scale) {
  std::string s = "P6\n" + std::to_string(w * scale) + " " + std::to_string(h * scale) + "\n255\n";
  for (int y = 0; y < h * scale; ++y) {
    for (int x = 0; x < w * scale; ++x) {
      const Rgb c = px[static_cast<std::size_t>(y / scale) * w + x / scale];
      s += static_cast<char>(c.r);
      s += static_cast<char>(c.g);
      s += static_cast<char>(c.b);
    }
  }
  return s;
}

inline Rgb lerp(Rgb a, Rgb b, double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto mix = [t](unsigned char x, unsigned char y) {
    return static_cast<unsigned char>(std::lround(x + t * (static_cast<double>(y) - x)));
  };
  return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

/// Diverging blue-white-red map for t in [-1, 1].
inline Rgb diverging(double t) {
  return t < 0.0 ? lerp({255, 255, 255}, {33, 102, 172}, -t) : lerp({255, 255, 255}, {178, 24, 43}, t);
}

/// White at zero, dark at the maximum.
inline Rgb sequential(double t) {
  return t < 0.5 ? lerp({255, 255, 255}, {253, 141, 60}, 2.0 * t) : lerp({253, 141, 60}, {84, 0, 0}, 2.0 * t - 1.0);
}

inline int pixel_scale(const Raster& r) { return std::max(1, 512 / std::max(r.width, r.height)); }

}  // namespace detail

/// Renders u.ppm, density.ppm and glyphs.svg from the field CSVs in `dir`.
inline void emit_plots(const std::filesystem::path& dir, const std::filesystem::path& out_dir) {
  std::vector<std::string> missing;
  for (const char* f : {"u.csv", "p.csv", "tensor.csv"}) {
    if (!std::filesystem::exists(dir / f)) missing.push_back(f);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw std::runtime_error("plot: missing field files in " + dir.string() + ": " + list);
  }
  std::filesystem::create_directories(out_dir);
  using detail::Rgb;

  const auto u = detail::read_csv(dir / "u.csv");
  {
    const auto R = detail::Raster::fit(u.rows);
    double m = 0.0;
    for (const auto& row : u.rows) m = std::max(m, std::abs(row[2]));
    std::vector<Rgb> px(static_cast<std::size_t>(R.width) * R.height);
    for (const auto& row : u.rows) {
      px[static_cast<std::size_t>(R.row(row[1])) * R.width + R.col(row[0])] = detail::diverging(m > 0 ? row[2] / m : 0);
    }
    write_file_atomic(out_dir / "u.ppm", detail::ppm(px, R.width, R.height, detail::pixel_scale(R)));
  }

  const auto p = detail::read_csv(dir / "p.csv");
  {
    const auto R = detail::Raster::fit(p.rows);
    double m = 0.0;
    for (const auto& row : p.rows) m = std::max(m, std::hypot(row[2], row[3]));
    std::vector<Rgb> px(static_cast<std::size_t>(R.width) * R.height);
    for (const auto& row : p.rows) {
      const double d = std::hypot(row[2], row[3]);
      if (d > 0.0 && m > 0.0) px[static_cast<std::size_t>(R.row(row[1])) * R.width + R.col(row[0])] = detail::sequential(d / m);
    }
    write_file_atomic(out_dir / "density.ppm", detail::ppm(px, R.width, R.height, detail::pixel_scale(R)));
  }

  // Glyphs: tensors averaged over blocks of at most 32 x 32 per image, drawn
  // along the principal direction with length proportional to block trace.
  const auto t = detail::read_csv(dir / "tensor.csv");
  const auto R = detail::Raster::fit(t.rows);
  const int block = std::max(1, (std::max(R.width, R.height) + 31) / 32);
  const int bw = (R.width + block - 1) / block;
  const int bh = (R.height + block - 1) / block;
  struct Acc {
    double rho = 0, a = 0, b = 0, d = 0;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(bw) * bh);
  for (const auto& row : t.rows) {
    if (!(row[2] > 0.0)) continue;
    Acc& A = acc[static_cast<std::size_t>(R.row(row[1]) / block) * bw + R.col(row[0]) / block];
    A.rho += row[2];
    A.a += row[2] * row[3] * row[3];
    A.b += row[2] * row[3] * row[4];
    A.d += row[2] * row[4] * row[4];
  }
  double mr = 0.0;
  for (const auto& A : acc) mr = std::max(mr, A.rho);
  const double cell = 16.0;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << bw * cell << "\" height=\"" << bh * cell
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int by = 0; by < bh; ++by) {
    for (int bx = 0; bx < bw; ++bx) {
      const Acc& A = acc[static_cast<std::size_t>(by) * bw + bx];
      if (!(A.rho > 0.0) || !(mr > 0.0)) continue;
      // Principal eigenvector angle of [[a, b], [b, d]].
      const double ang = 0.5 * std::atan2(2.0 * A.b, A.a - A.d);
      const double len = 0.45 * cell * A.rho / mr;
      const double cx = (bx + 0.5) * cell;
      const double cy = (by + 0.5) * cell;
      // Screen y points down.
      const double dx = len * std::cos(ang);
      const double dy = -len * std::sin(ang);
      char buf[200];
      std::snprintf(buf, sizeof buf,
                    "<line x1=\"%.3f\" y1=\"%.3f\" x2=\"%.3f\" y2=\"%.3f\" stroke=\"black\" stroke-width=\"1.5\"/>\n",
                    cx - dx, cy - dy, cx + dx, cy + dy);
      svg << buf;
    }
  }
  svg << "</svg>\n";
  write_file_atomic(out_dir / "glyphs.svg", svg.str());
}

}  // namespace fmd
