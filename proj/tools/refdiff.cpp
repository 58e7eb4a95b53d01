// refdiff command-line driver.
#include "refdiff/gallery.hpp"
#include "refdiff/io.hpp"
#include "refdiff/model.hpp"
#include "refdiff/operators.hpp"
#include "refdiff/simulate.hpp"
#include "refdiff/solver.hpp"
#include "refdiff/testfn.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

using namespace refdiff;
using nlohmann::json;

namespace {

enum Exit { kPass = 0, kFail = 1, kUsage = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// "3pi/4", "1/3", "-1.5"
double parse_scalar(std::string s) {
  auto trim = [](std::string t) {
    size_t a = t.find_first_not_of(" \t"), b = t.find_last_not_of(" \t");
    return a == std::string::npos ? std::string() : t.substr(a, b - a + 1);
  };
  s = trim(s);
  auto side = [&](std::string t) {
    t = trim(t);
    double mult = 1.0;
    if (t.size() >= 2 && t.compare(t.size() - 2, 2, "pi") == 0) {
      mult = M_PI;
      t = trim(t.substr(0, t.size() - 2));
      if (!t.empty() && t.back() == '*') t.pop_back();
      if (t.empty() || t == "+") return mult;
      if (t == "-") return -mult;
    }
    size_t used = 0;
    double v = std::stod(t, &used);
    if (used != t.size()) throw UsageError("cannot parse number '" + t + "'");
    return v * mult;
  };
  try {
    size_t slash = s.find('/');
    if (slash == std::string::npos) return side(s);
    return side(s.substr(0, slash)) / side(s.substr(slash + 1));
  } catch (const std::logic_error&) {
    throw UsageError("cannot parse number '" + s + "'");
  }
}

std::vector<std::string> split(const std::string& s, char c) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string t;
  while (std::getline(ss, t, c)) out.push_back(t);
  return out;
}

// scalar, "a,b,c" list or "a,b;c,d" matrix
json parse_value(const std::string& s) {
  if (s == "true" || s == "false") return s == "true";
  if (s.find(';') != std::string::npos) {
    json m = json::array();
    for (const auto& r : split(s, ';')) {
      json row = json::array();
      for (const auto& e : split(r, ',')) row.push_back(parse_scalar(e));
      m.push_back(row);
    }
    return m;
  }
  if (s.find(',') != std::string::npos) {
    json v = json::array();
    for (const auto& e : split(s, ',')) v.push_back(parse_scalar(e));
    return v;
  }
  try {
    return parse_scalar(s);
  } catch (const UsageError&) {
    return s;
  }
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const auto& e : split(s, ',')) out.push_back(parse_scalar(e));
  return out;
}

Vec to_vec(const std::vector<double>& v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (size_t k = 0; k < v.size(); ++k) out(k) = v[k];
  return out;
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

struct Options {
  // system
  std::string preset, system_file;
  std::map<std::string, std::string> pflags;  // --J, --alpha, ... as given
  std::vector<std::string> param;
  // common
  std::string out = "-";
  std::uint64_t seed = 1;
  int threads = 0;
  // densities
  std::string density = "closed-form", theta, mode = "auto";
  double uniform_c = 0.0;
  int interior_samples = 400, face_res = 64, edge_samples = 64;
  double tol = -1.0;
  // simulation
  std::string x0, scheme = "bridge", occupation;
  double T = 10.0, dt = 1e-3, burn_in = 0.1;
  std::uint64_t path = 0;
  int record_every = 1, bins = 50, coord = 0;
  // families
  std::string family = "solver";
  double N = 1.0, eps = 0.1;
  int fam_interior = 40, fam_face = 8, fam_boundary = 8, fam_quadratic = 0;
  double fam_radius = 0.0;
  std::string v_params;
  // measures
  std::string measure = "density", grid_csv;
  int resolution = 0;
  double floor = 0.0, k_sigma = 3.0;
  // solver
  std::string grid, lo, hi, polar, center;
  double radius = 1.0, solve_tol = 1e-6;
  int max_iter = 10000;
  std::string report;
  // report
  std::vector<std::string> inputs;
};

const std::vector<std::string> kPresetFlags = {"J", "alpha", "b", "sigma", "zeta", "theta1", "theta2",
                                               "beta", "X", "L", "R", "force"};

void add_system(CLI::App* c, Options& o) {
  c->add_option("--preset", o.preset, "example system: halfline, disk, orthant, gps, wedge, cusp");
  c->add_option("--system", o.system_file, "JSON file with {domain, coef}");
  for (const auto& k : kPresetFlags)
    c->add_option("--" + k, o.pflags[k], "preset parameter " + k);
  c->add_option("--param", o.param, "extra preset parameter key=value");
  c->add_option("--out,-o", o.out, "output path ('-' for stdout)");
  c->add_option("--seed", o.seed);
  c->add_option("--threads", o.threads, "thread cap (0: REFDIFF_THREADS or hardware)");
}

void add_density(CLI::App* c, Options& o) {
  c->add_option("--density", o.density, "closed-form, exp, product or uniform");
  c->add_option("--theta", o.theta, "density rate(s)");
  c->add_option("--c", o.uniform_c, "uniform density value (0: normalise)");
}

void add_family(CLI::App* c, Options& o) {
  c->add_option("--interior", o.fam_interior, "interior lattice points per dimension");
  c->add_option("--face", o.fam_face, "face bumps per piece");
  c->add_option("--boundary", o.fam_boundary, "boundary bumps per piece");
  c->add_option("--quadratic", o.fam_quadratic, "quadratic cutoffs per piece");
  c->add_option("--radius-bump", o.fam_radius, "bump radius (0: automatic)");
  c->add_option("--v-params", o.v_params, "delta,eps pairs for the V-point functions");
}

void add_sim(CLI::App* c, Options& o) {
  c->add_option("--x0", o.x0, "start point (default: origin, reflected)");
  c->add_option("--T", o.T);
  c->add_option("--dt", o.dt);
  c->add_option("--burn-in", o.burn_in, "fraction of the horizon discarded");
  c->add_option("--scheme", o.scheme, "bridge or euler");
  c->add_option("--path", o.path);
  c->add_option("--record-every", o.record_every);
}

struct System {
  std::string name;
  json params = json::object();
  DomainSpec domain;
  CoefficientField coef;
  std::optional<Density> density;
  std::string condition;
};

System load_system(const Options& o) {
  System s;
  if (!o.system_file.empty()) {
    std::ifstream in(o.system_file);
    if (!in) throw UsageError("cannot open " + o.system_file);
    json j = json::parse(in);
    s.domain = domain_from_json(j.at("domain"));
    s.coef = coef_from_json(j.value("coef", json::object()), s.domain.dim);
    s.name = s.domain.name.empty() ? "custom" : s.domain.name;
    return s;
  }
  if (o.preset.empty()) throw UsageError("one of --preset or --system is required");
  for (const auto& [k, v] : o.pflags)
    if (!v.empty()) s.params[k] = parse_value(v);
  for (const auto& kv : o.param) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--param expects key=value");
    s.params[kv.substr(0, eq)] = parse_value(kv.substr(eq + 1));
  }
  ExampleSystem ex = make_example(o.preset, s.params);
  s.name = ex.name.empty() ? o.preset : ex.name;
  s.domain = ex.domain;
  s.coef = ex.coef;
  s.density = ex.density;
  s.condition = ex.condition;
  return s;
}

Density load_density(const Options& o, const System& s) {
  std::vector<double> th = parse_list(o.theta);
  if (o.density == "closed-form") {
    if (!s.density) throw Error(ErrorCode::NoClosedForm, "system has no closed-form density");
    return *s.density;
  }
  if (o.density == "exp") {
    if (th.size() != 1) throw UsageError("--density exp needs one --theta");
    return exp_density(th[0]);
  }
  if (o.density == "product") {
    if (static_cast<int>(th.size()) != s.domain.dim) throw UsageError("--density product needs J rates");
    return product_density(to_vec(th));
  }
  if (o.density == "uniform") {
    if (o.uniform_c > 0) return uniform_density(s.domain.dim, o.uniform_c);
    return normalize_density(uniform_density(s.domain.dim, 1.0), s.domain).density;
  }
  throw UsageError("unknown density '" + o.density + "'");
}

Vec start_point(const Options& o, const System& s) {
  Vec x = o.x0.empty() ? Vec(Vec::Zero(s.domain.dim)) : to_vec(parse_list(o.x0));
  if (x.size() != s.domain.dim) throw UsageError("--x0 has the wrong dimension");
  if (contains(s.domain, x).location == Location::Exterior) x = reflect(s.domain, x).x;
  return x;
}

Scheme parse_scheme(const std::string& s) {
  if (s == "bridge") return Scheme::Bridge;
  if (s == "euler") return Scheme::Euler;
  throw UsageError("unknown scheme '" + s + "'");
}

FamilySpec family_spec(const Options& o, const System& s) {
  FamilySpec f;
  f.interior = o.fam_interior;
  f.face = o.fam_face;
  f.boundary = o.fam_boundary;
  f.quadratic = o.fam_quadratic;
  f.radius = o.fam_radius;
  f.seed = o.seed;
  auto vp = parse_list(o.v_params);
  if (vp.size() % 2) throw UsageError("--v-params expects delta,eps pairs");
  for (size_t k = 0; k + 1 < vp.size(); k += 2) f.v_params.push_back({vp[k], vp[k + 1]});
  (void)s;
  return f;
}

ConstraintOptions constraint_options(const Options& o) {
  ConstraintOptions c;
  c.threads = o.threads;
  c.seed = o.seed;
  return c;
}

class Output {
 public:
  explicit Output(const std::string& path) : path_(path) {}
  std::ostream& stream() { return buf_; }
  void flush() {
    if (path_ == "-") {
      std::cout << buf_.str();
      return;
    }
    std::ofstream f(path_, std::ios::binary);
    if (!f) throw UsageError("cannot write " + path_);
    f << buf_.str();
  }

 private:
  std::string path_;
  std::ostringstream buf_;
};

// ---------------------------------------------------------------------------

int cmd_check_domain(const Options& o, const io::ArtifactMeta& meta) {
  System s = load_system(o);
  const DomainSpec& d = s.domain;
  json j;
  j["system"] = s.name;
  j["params"] = s.params;
  j["dimension"] = d.dim;
  j["well_posed"] = d.well_posed;
  j["condition"] = s.condition;
  j["domain"] = domain_to_json(d);
  CompletelySReport cs = check_completely_S(d, 2000, o.seed);
  j["completely_S"] = cs.to_json();
  j["U_equals_boundary"] = cs.all_pass;
  bool outside_ok = true;
  json notes = json::array();
  for (const auto& st : cs.strata) {
    if (st.pass) continue;
    bool inV = distance_to_V(d, st.point) <= 1e-6 * (1.0 + st.point.norm());
    outside_ok = outside_ok && inV;
    std::ostringstream n;
    n << "stratum " << json(st.pieces).dump() << " at " << vec_json(st.point).dump() << " is not in U"
      << (inV ? " (point of V)" : " and not in V");
    notes.push_back(n.str());
  }
  j["notes"] = notes;
  bool v_ok = true;
  json vs = json::array();
  for (const auto& v : d.V) {
    Assumption2Report r = check_assumption_2prime(d, &s.coef, v, 4000, o.seed);
    v_ok = v_ok && r.pass;
    vs.push_back({{"x", vec_json(v.x)}, {"v", vec_json(v.v)}, {"alpha", v.alpha}, {"c1", v.c1}, {"c2", v.c2},
                  {"assumption_2prime", r.to_json()}});
  }
  j["V"] = vs;
  bool pass = outside_ok && v_ok;
  j["verdict"] = pass ? "pass" : "fail";
  Output out(o.out);
  io::write_json(out.stream(), j, meta);
  out.flush();
  return pass ? kPass : kFail;
}

int cmd_make_tests(const Options& o, const io::ArtifactMeta& meta) {
  System s = load_system(o);
  json j;
  j["system"] = s.name;
  if (o.family == "theorem") {
    Family fam = assemble_family(s.domain, s.coef, o.N, o.eps);
    j["family"] = fam.manifest();
  } else if (o.family == "solver") {
    auto fam = make_solver_family(s.domain, s.coef, family_spec(o, s));
    json fs = json::array();
    for (const auto& f : fam) {
      const auto& in = f.info();
      fs.push_back({{"id", in.id},
                    {"kind", in.kind},
                    {"center", vec_json(in.center)},
                    {"support_radius", std::isfinite(in.support_radius) ? json(in.support_radius) : json("inf")},
                    {"claims_H", in.claims_H},
                    {"claims_negH", in.claims_negH}});
    }
    j["family"] = {{"kind", "solver"}, {"count", fam.size()}, {"functions", fs}};
  } else {
    throw UsageError("--family must be theorem or solver");
  }
  j["verdict"] = "pass";
  Output out(o.out);
  io::write_json(out.stream(), j, meta);
  out.flush();
  return kPass;
}

int cmd_simulate(const Options& o, io::ArtifactMeta meta) {
  System s = load_system(o);
  SimOptions so;
  so.T = o.T;
  so.dt = o.dt;
  so.seed = o.seed;
  so.path = o.path;
  so.record_every = o.record_every;
  so.scheme = parse_scheme(o.scheme);
  Trajectory tr = simulate_path(s.domain, s.coef, start_point(o, s), so);
  meta.extra["steps"] = tr.steps;
  meta.extra["halved_steps"] = tr.halved_steps;
  meta.extra["failed_steps"] = tr.failed_steps.size();
  const int J = s.domain.dim, m = s.domain.num_pieces();
  std::vector<std::string> cols = {"t"};
  for (int k = 0; k < J; ++k) cols.push_back("x" + std::to_string(k));
  for (int i = 0; i < m; ++i) cols.push_back("L" + std::to_string(i));
  Output out(o.out);
  io::CsvWriter w(out.stream(), meta, cols);
  for (size_t r = 0; r < tr.t.size(); ++r) {
    std::vector<double> row = {tr.t[r]};
    for (int k = 0; k < J; ++k) row.push_back(tr.states[r](k));
    for (int i = 0; i < m; ++i) row.push_back(tr.pushing[r][i]);
    w.row(row);
  }
  out.flush();
  if (!o.occupation.empty()) {
    if (o.coord < 0 || o.coord >= J) throw UsageError("--coord out of range");
    EmpiricalMeasure em = occupation_measure(tr, o.burn_in);
    double lo = kInf, hi = -kInf;
    for (const auto& x : em.points) {
      lo = std::min(lo, x(o.coord));
      hi = std::max(hi, x(o.coord));
    }
    if (!(hi > lo)) hi = lo + 1.0;
    std::vector<double> mass(o.bins, 0.0);
    double W = 0.0;
    for (size_t k = 0; k < em.points.size(); ++k) {
      int b = std::min(o.bins - 1, static_cast<int>((em.points[k](o.coord) - lo) / (hi - lo) * o.bins));
      mass[b] += em.weights[k];
      W += em.weights[k];
    }
    Output occ(o.occupation);
    io::ArtifactMeta om = meta;
    om.extra["coord"] = o.coord;
    om.extra["burn_in"] = o.burn_in;
    io::CsvWriter ow(occ.stream(), om, {"lo", "hi", "mass", "density"});
    double h = (hi - lo) / o.bins;
    for (int b = 0; b < o.bins; ++b)
      ow.row(std::vector<double>{lo + b * h, lo + (b + 1) * h, mass[b] / W, mass[b] / W / h});
    occ.flush();
  }
  return tr.failed_steps.empty() ? kPass : kNumeric;
}

DerivativeMode parse_mode(const std::string& m) {
  if (m == "auto") return DerivativeMode::Auto;
  if (m == "analytic") return DerivativeMode::Analytic;
  if (m == "fd") return DerivativeMode::FiniteDifference;
  throw UsageError("unknown --mode '" + m + "'");
}

int cmd_verify_bar(const Options& o, const io::ArtifactMeta& meta) {
  System s = load_system(o);
  Density p = load_density(o, s);
  BarPlan plan;
  plan.interior = o.interior_samples;
  plan.face = o.face_res;
  plan.edge = o.edge_samples;
  plan.mode = parse_mode(o.mode);
  plan.seed = o.seed;
  plan.threads = o.threads;
  if (o.tol >= 0) plan.tol_override = o.tol;
  BarReport r = verify_bar(s.coef, s.domain, p, plan);
  json j = r.to_json();
  j["system"] = s.name;
  j["density"] = p.name;
  j["verdict"] = r.pass() ? "pass" : "fail";
  Output out(o.out);
  io::write_json(out.stream(), j, meta);
  out.flush();
  if (!r.pass()) {
    std::cerr << "BAR failed: interior residual " << r.interior_residual << " (tolerance " << r.interior_tolerance
              << ")\n";
    for (const auto& f : r.faces)
      if (!f.pass) std::cerr << "  face " << json(f.pieces).dump() << " residual " << f.residual << "\n";
    for (const auto& e : r.edges)
      if (!e.pass) std::cerr << "  edge " << json(e.pieces).dump() << " residual " << e.residual << "\n";
  }
  return r.pass() ? kPass : kFail;
}

Measure grid_measure_from_csv(const std::string& path, int dim) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  io::CsvTable t = io::read_csv(in);
  int wc = -1;
  std::vector<int> xc(dim, -1);
  for (size_t k = 0; k < t.columns.size(); ++k) {
    if (t.columns[k] == "weight") wc = static_cast<int>(k);
    for (int q = 0; q < dim; ++q)
      if (t.columns[k] == "x" + std::to_string(q)) xc[q] = static_cast<int>(k);
  }
  if (wc < 0) throw UsageError(path + " has no weight column");
  for (int q = 0; q < dim; ++q)
    if (xc[q] < 0) throw UsageError(path + " has no x" + std::to_string(q) + " column");
  Measure m;
  m.kind = Measure::Kind::Quadrature;
  for (const auto& r : t.rows) {
    Vec x(dim);
    for (int q = 0; q < dim; ++q) x(q) = std::stod(r[xc[q]]);
    m.points.push_back(x);
    m.weights.push_back(std::stod(r[wc]));
  }
  return m;
}

int cmd_weak_check(const Options& o, io::ArtifactMeta meta) {
  System s = load_system(o);
  Measure pi;
  if (o.measure == "density") {
    Density p = load_density(o, s);
    int res = o.resolution > 0 ? o.resolution : (s.domain.dim == 1 ? 4000 : 200);
    pi = density_measure(p, s.domain, res);
  } else if (o.measure == "simulate") {
    SimOptions so;
    so.T = o.T;
    so.dt = o.dt;
    so.seed = o.seed;
    so.path = o.path;
    so.record_every = o.record_every;
    so.scheme = parse_scheme(o.scheme);
    Trajectory tr = simulate_path(s.domain, s.coef, start_point(o, s), so);
    pi = occupation_measure(tr, o.burn_in).measure();
  } else if (o.measure == "grid") {
    if (o.grid_csv.empty()) throw UsageError("--measure grid needs --grid-csv");
    pi = grid_measure_from_csv(o.grid_csv, s.domain.dim);
  } else {
    throw UsageError("--measure must be density, simulate or grid");
  }
  pi.floor = std::max(pi.floor, o.floor);
  auto fam = make_solver_family(s.domain, s.coef, family_spec(o, s));
  ConstraintOptions co = constraint_options(o);
  std::vector<Orientation> ori(fam.size());
  for (size_t k = 0; k < fam.size(); ++k) ori[k] = orient_function(s.domain, fam[k], co, pi.points, k);
  meta.extra["measure"] = o.measure;
  meta.extra["k_sigma"] = o.k_sigma;
  Output out(o.out);
  io::CsvWriter w(out.stream(), meta, {"id", "type", "value", "error", "ratio", "pass"});
  bool all = true;
  for (size_t k = 0; k < fam.size(); ++k) {
    TestFunction f = ori[k].sign < 0 ? fam[k].negated() : fam[k];
    WeakResidual r = weak_residual(s.coef, f, pi, nullptr, o.threads);
    bool eq = ori[k].type == RowType::Equality;
    double v = eq ? std::abs(r.value) : r.value;
    bool pass = v <= o.k_sigma * r.error;
    all = all && pass;
    double ratio = r.error > 0 ? r.value / r.error : (r.value == 0 ? 0.0 : std::copysign(kInf, r.value));
    std::string id = fam[k].info().id;
    for (auto& ch : id)
      if (ch == ',') ch = ' ';
    w.row(std::vector<std::string>{id, eq ? "eq" : "ineq", io::fmt(r.value), io::fmt(r.error), io::fmt(ratio),
                                   pass ? "1" : "0"});
  }
  out.flush();
  return all ? kPass : kFail;
}

int cmd_solve(const Options& o, io::ArtifactMeta meta) {
  System s = load_system(o);
  const int J = s.domain.dim;
  SolverConfig cfg;
  if (!o.polar.empty()) {
    auto n = parse_list(o.polar);
    if (n.size() != 2) throw UsageError("--polar expects rings,angles");
    cfg.grid.kind = GridSpec::Kind::Polar;
    cfg.grid.n = {static_cast<int>(n[0]), static_cast<int>(n[1])};
    cfg.grid.center = o.center.empty() ? Vec(Vec::Zero(J)) : to_vec(parse_list(o.center));
    cfg.grid.radius = o.radius;
  } else {
    auto n = parse_list(o.grid.empty() ? "200" : o.grid);
    for (double v : n) cfg.grid.n.push_back(static_cast<int>(v));
    if (cfg.grid.n.size() == 1 && J > 1) cfg.grid.n.assign(J, cfg.grid.n[0]);
    if (static_cast<int>(cfg.grid.n.size()) != J) throw UsageError("--grid needs one count per dimension");
    cfg.grid.lo = o.lo.empty() ? s.domain.lo : to_vec(parse_list(o.lo));
    cfg.grid.hi = o.hi.empty() ? s.domain.hi : to_vec(parse_list(o.hi));
  }
  cfg.family = family_spec(o, s);
  cfg.constraints = constraint_options(o);
  cfg.tol = o.solve_tol;
  cfg.max_iter = o.max_iter;
  cfg.strict = false;
  GridMeasure gm = solve_stationary(s.domain, s.coef, cfg);
  json rep = gm.report();
  if (s.density) rep["l1_to_closed_form"] = l1_to_density(gm, *s.density);
  rep["system"] = s.name;
  rep["verdict"] = gm.feasible ? "pass" : "fail";
  std::vector<std::string> cols;
  for (int k = 0; k < J; ++k) cols.push_back("x" + std::to_string(k));
  cols.insert(cols.end(), {"weight", "volume", "density"});
  meta.extra["objective"] = gm.objective;
  Output out(o.out);
  io::CsvWriter w(out.stream(), meta, cols);
  for (size_t j = 0; j < gm.points.size(); ++j) {
    std::vector<double> row;
    for (int k = 0; k < J; ++k) row.push_back(gm.points[j](k));
    row.push_back(gm.weights[j]);
    row.push_back(gm.volumes[j]);
    row.push_back(gm.volumes[j] > 0 ? gm.weights[j] / gm.volumes[j] : 0.0);
    w.row(row);
  }
  out.flush();
  if (!o.report.empty()) {
    Output r(o.report);
    io::write_json(r.stream(), rep, meta);
    r.flush();
  }
  return gm.feasible ? kPass : kFail;
}

int cmd_report(const Options& o) {
  if (o.inputs.empty()) throw UsageError("report needs artifact paths");
  std::ostringstream txt;
  bool all = true;
  for (const auto& path : o.inputs) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open " + path);
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    txt << "== " << path << "\n";
    size_t first = body.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && body[first] == '{') {
      json j = json::parse(body);
      if (j.contains("_meta")) {
        const auto& m = j["_meta"];
        txt << "  command: " << m.value("command", std::string("?")) << "  config: " << m.value("config_hash", std::string("?"))
            << "  seed: " << m.value("seed", 0ull) << "\n";
      }
      if (j.contains("system")) txt << "  system: " << j["system"].get<std::string>() << "\n";
      if (j.contains("notes"))
        for (const auto& n : j["notes"]) txt << "  note: " << n.get<std::string>() << "\n";
      if (j.contains("interior"))
        txt << "  interior residual: " << j["interior"]["residual"].get<double>() << " (tolerance "
            << j["interior"]["tolerance"].get<double>() << ")\n";
      if (j.contains("l1_to_closed_form")) txt << "  L1 to closed form: " << j["l1_to_closed_form"].get<double>() << "\n";
      if (j.contains("objective")) txt << "  objective: " << j["objective"].get<double>() << "\n";
      std::string v = j.value("verdict", std::string("n/a"));
      if (v == "fail") all = false;
      txt << "  verdict: " << v << "\n";
    } else {
      std::istringstream ss(body);
      io::CsvTable t = io::read_csv(ss);
      for (const auto& m : t.meta_lines) txt << "  " << m << "\n";
      txt << "  rows: " << t.rows.size() << "  columns: " << t.columns.size() << "\n";
      int pc = -1;
      for (size_t k = 0; k < t.columns.size(); ++k)
        if (t.columns[k] == "pass") pc = static_cast<int>(k);
      if (pc >= 0) {
        size_t failed = 0;
        for (const auto& r : t.rows) failed += r[pc] != "1";
        txt << "  failed rows: " << failed << "\n";
        if (failed) all = false;
        txt << "  verdict: " << (failed ? "fail" : "pass") << "\n";
      }
    }
  }
  txt << "overall: " << (all ? "pass" : "fail") << "\n";
  Output out(o.out);
  out.stream() << txt.str();
  out.flush();
  return all ? kPass : kFail;
}

// ---------------------------------------------------------------------------
// --config FILE is expanded into flags placed before the user's own flags; options keep the last value.

std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string file;
  std::vector<std::string> rest;
  for (size_t k = 0; k < args.size(); ++k) {
    if (args[k] == "--config" && k + 1 < args.size()) {
      file = args[++k];
    } else if (args[k].rfind("--config=", 0) == 0) {
      file = args[k].substr(9);
    } else {
      rest.push_back(args[k]);
    }
  }
  if (file.empty()) return args;
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open config " + file);
  json j = json::parse(in);
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  std::vector<std::string> flags;
  std::string command = j.value("command", std::string());
  auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "command") continue;
    const json& v = it.value();
    std::string flag = "--" + it.key();
    if (v.is_boolean()) {
      if (v.get<bool>()) flags.push_back(flag);
    } else if (v.is_object()) {
      if (it.key() != "params") throw UsageError("nested objects are only allowed under 'params'");
      for (auto p = v.begin(); p != v.end(); ++p) {
        flags.push_back("--param");
        flags.push_back(p.key() + "=" + (p.value().is_array() ? [&] {
          std::string s;
          for (const auto& e : p.value()) {
            if (!s.empty()) s += e.is_array() ? ";" : ",";
            if (e.is_array()) {
              std::string r;
              for (const auto& q : e) r += (r.empty() ? "" : ",") + scalar(q);
              s += r;
            } else {
              s += scalar(e);
            }
          }
          return s;
        }() : scalar(p.value())));
      }
    } else if (v.is_array() && (it.key() == "param" || it.key() == "inputs")) {
      for (const auto& e : v) {
        if (it.key() == "param") flags.push_back(flag);
        flags.push_back(scalar(e));
      }
    } else if (v.is_array()) {
      std::string s;
      for (const auto& e : v) s += (s.empty() ? "" : ",") + scalar(e);
      flags.push_back(flag);
      flags.push_back(s);
    } else {
      flags.push_back(flag);
      flags.push_back(scalar(v));
    }
  }
  static const std::vector<std::string> cmds = {"check-domain", "make-tests", "simulate", "verify-bar",
                                                "weak-check",   "solve",      "report"};
  std::vector<std::string> out = {rest.empty() ? std::string("refdiff") : rest[0]};
  size_t k = 1;
  if (rest.size() > 1 && std::find(cmds.begin(), cmds.end(), rest[1]) != cmds.end()) {
    out.push_back(rest[1]);
    k = 2;
  } else if (!command.empty()) {
    out.push_back(command);
  } else {
    throw UsageError("no command given on the command line or in the config");
  }
  out.insert(out.end(), flags.begin(), flags.end());
  out.insert(out.end(), rest.begin() + k, rest.end());
  return out;
}

json effective_config(const CLI::App* sub) {
  json j;
  j["command"] = sub->get_name();
  for (const CLI::Option* opt : sub->get_options()) {
    std::string name = opt->get_single_name();
    // output paths and the thread cap do not change results
    if (name == "help" || name == "out" || name == "o" || name == "report" || name == "occupation" || name == "threads")
      continue;
    if (opt->count() > 0) {
      auto r = opt->results();
      j[name] = r.size() == 1 ? json(r[0]) : json(r);
    } else if (!opt->get_default_str().empty()) {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

int map_error(const Error& e) {
  switch (e.code()) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::IllPosedParameters:
    case ErrorCode::BadParameters:
    case ErrorCode::BadThresholds:
    case ErrorCode::ChartMissing:
    case ErrorCode::UnboundedUnsupported:
    case ErrorCode::NoClosedForm:
    case ErrorCode::MissingDerivatives:
      return kUsage;
    default:
      return kNumeric;
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  try {
    args = expand_config(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  Options o;
  CLI::App app{"Reflected diffusions: geometry checks, test functions, simulation and stationary measures"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();

  auto* check = app.add_subcommand("check-domain", "geometry report: completely-S strata and V certificates");
  add_system(check, o);

  auto* tests = app.add_subcommand("make-tests", "test-function family manifest");
  add_system(tests, o);
  add_family(tests, o);
  tests->add_option("--family", o.family, "theorem (f_{x,eps} cover) or solver");
  tests->add_option("--N", o.N, "radius of the ball the theorem family covers");
  tests->add_option("--eps", o.eps);

  auto* sim = app.add_subcommand("simulate", "single trajectory CSV (and optional occupation histogram)");
  add_system(sim, o);
  add_sim(sim, o);
  sim->add_option("--occupation", o.occupation, "histogram CSV path");
  sim->add_option("--bins", o.bins);
  sim->add_option("--coord", o.coord, "histogram coordinate");

  auto* bar = app.add_subcommand("verify-bar", "check a candidate density against the boundary adjoint relation");
  add_system(bar, o);
  add_density(bar, o);
  bar->add_option("--mode", o.mode, "auto, analytic or fd");
  bar->add_option("--interior-samples", o.interior_samples);
  bar->add_option("--face-resolution", o.face_res);
  bar->add_option("--edge-samples", o.edge_samples);
  bar->add_option("--tol", o.tol, "absolute tolerance for every condition (default: per mode)");

  auto* weak = app.add_subcommand("weak-check", "weak-form residuals of a measure against the solver family");
  add_system(weak, o);
  add_density(weak, o);
  add_family(weak, o);
  add_sim(weak, o);
  weak->add_option("--measure", o.measure, "density, simulate or grid");
  weak->add_option("--grid-csv", o.grid_csv, "solve output used by --measure grid");
  weak->add_option("--resolution", o.resolution, "quadrature resolution for --measure density");
  weak->add_option("--floor", o.floor, "additive error floor");
  weak->add_option("--k", o.k_sigma, "pass when the residual is at most k error estimates");

  auto* solve = app.add_subcommand("solve", "grid stationary measure from the weak-form constraints");
  add_system(solve, o);
  add_family(solve, o);
  solve->add_option("--grid", o.grid, "box grid points per dimension");
  solve->add_option("--lo", o.lo);
  solve->add_option("--hi", o.hi);
  solve->add_option("--polar", o.polar, "rings,angles");
  solve->add_option("--center", o.center);
  solve->add_option("--radius", o.radius, "polar grid radius");
  solve->add_option("--tol", o.solve_tol);
  solve->add_option("--max-iter", o.max_iter);
  solve->add_option("--report", o.report, "JSON report path");

  auto* rep = app.add_subcommand("report", "merge artifacts into a summary");
  rep->add_option("inputs", o.inputs, "artifact files");
  rep->add_option("--out,-o", o.out);

  std::vector<const char*> cargv;
  for (const auto& a : args) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    io::ArtifactMeta meta;
    meta.command = sub->get_name();
    meta.hash = io::config_hash(effective_config(sub));
    meta.seed = o.seed;
    if (sub == check) return cmd_check_domain(o, meta);
    if (sub == tests) return cmd_make_tests(o, meta);
    if (sub == sim) return cmd_simulate(o, meta);
    if (sub == bar) return cmd_verify_bar(o, meta);
    if (sub == weak) return cmd_weak_check(o, meta);
    if (sub == solve) return cmd_solve(o, meta);
    return cmd_report(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return map_error(e);
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
}
