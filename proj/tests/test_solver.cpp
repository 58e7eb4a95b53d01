#include "support.hpp"

#include "refdiff/gallery.hpp"
#include "refdiff/operators.hpp"
#include "refdiff/solver.hpp"

#include <algorithm>
#include <numeric>

using namespace refdiff;
using namespace refdiff::test;

namespace {

// exact Exp(2) mass of each cell, renormalised over the grid
std::vector<double> exp_histogram(const std::vector<Vec>& pts, const std::vector<double>& vol) {
  std::vector<double> q(pts.size());
  double tot = 0.0;
  for (size_t j = 0; j < pts.size(); ++j) {
    double x = pts[j](0), h = vol[j];
    tot += q[j] = std::exp(-2.0 * (x - h / 2)) - std::exp(-2.0 * (x + h / 2));
  }
  for (double& v : q) v /= tot;
  return q;
}

double l1(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t j = 0; j < a.size(); ++j) s += std::abs(a[j] - b[j]);
  return s;
}

SolverConfig halfline_config(int n) {
  SolverConfig cfg;
  cfg.grid.n = {n};
  cfg.grid.lo = vec1(0.0);
  cfg.grid.hi = vec1(5.0);
  cfg.strict = false;
  return cfg;
}

Grid halfline_grid(int n) {
  auto ex = make_example("halfline");
  return make_grid(ex.domain, halfline_config(n).grid);
}

}  // namespace

TEST_CASE("simplex projection") {
  Gen g(3);
  for (int t = 0; t < 300; ++t) {
    int n = g.integer(1, 12);
    Eigen::VectorXd v(n);
    for (int k = 0; k < n; ++k) v(k) = 3.0 * g.normal();
    Eigen::VectorXd p = project_simplex(v);
    CHECK(p.minCoeff() >= 0.0);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
    // idempotent and shift invariant
    CHECK((project_simplex(p) - p).norm() <= 1e-12);
    CHECK((project_simplex(v + Eigen::VectorXd::Constant(n, g.uniform(-5, 5))) - p).norm() <= 1e-10);
    // no random simplex point is closer to v
    double dp = (v - p).norm();
    for (int s = 0; s < 20; ++s) {
      Eigen::VectorXd q(n);
      for (int k = 0; k < n; ++k) q(k) = -std::log(1.0 - g.uniform(0, 1));
      q /= q.sum();
      CHECK(dp <= (v - q).norm() + 1e-12);
    }
  }
  Eigen::VectorXd e(3);
  e << 0.2, 0.3, 0.5;
  CHECK((project_simplex(e) - e).norm() <= 1e-15);
  e << 10, 0, 0;
  CHECK(project_simplex(e)(0) == doctest::Approx(1.0));
}

TEST_CASE("grids stay inside the domain") {
  for (const char* name : {"halfline", "orthant", "disk", "gps"}) {
    auto ex = make_example(name);
    GridSpec gs;
    if (std::string(name) == "disk") {
      gs.kind = GridSpec::Kind::Polar;
      gs.n = {10, 20};
      gs.center = vec2(0, 0);
    } else {
      gs.n.assign(ex.domain.dim, ex.domain.dim == 1 ? 100 : 20);
      gs.lo = ex.domain.lo;
      gs.hi = ex.domain.hi;
    }
    Grid gr = make_grid(ex.domain, gs);
    INFO(std::string(name));
    REQUIRE(!gr.points.empty());
    CHECK(gr.points.size() == gr.volumes.size());
    for (size_t j = 0; j < gr.points.size(); ++j) {
      CHECK(gr.volumes[j] > 0.0);
      for (const auto& P : ex.domain.pieces) CHECK(P.value(gr.points[j]) > 0.0);
    }
  }
}

TEST_CASE("constraint rows") {
  auto ex = make_example("halfline");
  Grid gr = halfline_grid(100);
  ConstraintOptions opt;
  opt.normalize_rows = false;

  // delegation to the generator, row by row
  std::vector<TestFunction> fam = {constant_function(1, 3.0), interior_bump(ex.domain, vec1(40.0), 1.0),
                                   interior_bump(ex.domain, vec1(2.0), 0.8), face_bump(ex.domain, 0, vec1(0.0), 0.7),
                                   lambda_function(
                                       "sq", 1, [](const Vec& x) { return x(0) * x(0); },
                                       [](const Vec& x) { return vec1(2 * x(0)); },
                                       [](const Vec&) { return Mat(2 * Mat::Identity(1, 1)); })};
  Constraints c = build_constraints(ex.domain, ex.coef, gr, fam, opt);
  REQUIRE(c.M.rows() == 5);
  REQUIRE(c.M.cols() == static_cast<long>(gr.points.size()));
  CHECK(c.M.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(c.types[0] == RowType::Equality);
  CHECK(c.M.row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(c.types[2] == RowType::Equality);
  CHECK(c.types[3] == RowType::Equality);
  // x^2 has zero flux at 0: equality, entries 1 - 2x
  CHECK(c.types[4] == RowType::Equality);
  // equality rows may come out with either sign
  for (int k = 0; k < 5; ++k)
    for (size_t j = 0; j < gr.points.size(); j += 7) {
      double ref = apply_L(ex.coef, fam[k], gr.points[j]);
      CHECK(std::abs(c.M(k, j)) == doctest::Approx(std::abs(ref)).epsilon(1e-12));
    }
  for (size_t j = 0; j < gr.points.size(); j += 7)
    CHECK(std::abs(c.M(4, j)) == doctest::Approx(std::abs(1.0 - 2.0 * gr.points[j](0))));

  // f with f'(0) > 0: -f in H, kept as is; f'(0) < 0: negated
  TestFunction up = lambda_function(
      "up", 1, [](const Vec& x) { return std::tanh(x(0)); },
      [](const Vec& x) { return vec1(1.0 / std::pow(std::cosh(x(0)), 2)); },
      [](const Vec& x) {
        Mat h(1, 1);
        h << -2.0 * std::tanh(x(0)) / std::pow(std::cosh(x(0)), 2);
        return h;
      });
  Constraints c2 = build_constraints(ex.domain, ex.coef, gr, {up, up.negated()}, opt);
  CHECK(c2.types[0] == RowType::Inequality);
  CHECK(c2.types[1] == RowType::Inequality);
  CHECK((c2.M.row(0) - c2.M.row(1)).norm() <= 1e-14);
  CHECK(c2.M(0, 0) == doctest::Approx(apply_L(ex.coef, up, gr.points[0])));

  // row normalisation rescales but keeps the direction
  Constraints cn = build_constraints(ex.domain, ex.coef, gr, {fam[2]});
  CHECK(cn.scale[0] > 0.0);
  CHECK((cn.M.row(0) - c.M.row(2) * cn.scale[0]).norm() <= 1e-12 * c.M.row(2).norm() * cn.scale[0]);
}

TEST_CASE("constraints reject functions with mixed flux") {
  auto ex = make_example("orthant");
  GridSpec gs;
  gs.n = {8, 8};
  gs.lo = vec2(0, 0);
  gs.hi = vec2(3, 3);
  Grid gr = make_grid(ex.domain, gs);
  // ∂f/∂x1 = 1 on face 1, ∂f/∂x2 = -1 on face 2
  TestFunction mixed = lambda_function(
      "mixed", 2, [](const Vec& x) { return x(0) - x(1); }, [](const Vec&) { return vec2(1, -1); },
      [](const Vec&) { return Mat(Mat::Zero(2, 2)); });
  try {
    build_constraints(ex.domain, ex.coef, gr, {mixed});
    FAIL("expected NotInH");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotInH);
  }
}

TEST_CASE("empty family gives the uniform measure") {
  auto ex = make_example("halfline");
  Grid gr = halfline_grid(50);
  Constraints c;
  c.M = Eigen::MatrixXd(0, gr.points.size());
  SolverConfig cfg = halfline_config(50);
  GridMeasure m = solve_constraints(c, gr, cfg);
  CHECK(m.objective == 0.0);
  CHECK(m.feasible);
  for (double w : m.weights) CHECK(w == doctest::Approx(1.0 / gr.points.size()).epsilon(1e-12));
  CHECK(residual_report(m, ex.coef, ex.domain, {}).entries.empty());
}

TEST_CASE("halfline solve") {
  auto ex = make_example("halfline");
  GridMeasure m = solve_stationary(ex.domain, ex.coef, halfline_config(200));
  CHECK(m.points.size() == m.weights.size());
  CHECK(std::accumulate(m.weights.begin(), m.weights.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*std::min_element(m.weights.begin(), m.weights.end()) >= 0.0);
  for (const auto& x : m.points) CHECK(x(0) > 0.0);
  CHECK(m.feasible);
  CHECK(m.objective <= 1e-6);

  double d = l1(m.weights, exp_histogram(m.points, m.volumes));
  CHECK(d <= 0.05);
  CHECK(l1_to_density(m, *ex.density) == doctest::Approx(d).epsilon(0.1));

  // the objective trace never goes up
  REQUIRE(m.trace.size() >= 2);
  for (size_t k = 1; k < m.trace.size(); ++k) CHECK(m.trace[k] <= m.trace[k - 1] * (1 + 1e-12) + 1e-300);
  CHECK(m.trace.back() == doctest::Approx(m.objective));

  // deterministic
  GridMeasure m2 = solve_stationary(ex.domain, ex.coef, halfline_config(200));
  CHECK(m2.weights == m.weights);
}

TEST_CASE("refinement does not move away from the density") {
  auto ex = make_example("halfline");
  double prev = 1e9;
  for (int n : {100, 200, 400}) {
    GridMeasure m = solve_stationary(ex.domain, ex.coef, halfline_config(n));
    double d = l1(m.weights, exp_histogram(m.points, m.volumes));
    INFO("n = " << n << " l1 = " << d);
    CHECK(d <= prev + 0.01);
    prev = d;
  }
}

TEST_CASE("scaling the family") {
  auto ex = make_example("halfline");
  SolverConfig cfg = halfline_config(100);
  cfg.constraints.normalize_rows = false;
  cfg.family.boundary = 0;
  Grid gr = make_grid(ex.domain, cfg.grid);
  auto fam = make_solver_family(ex.domain, ex.coef, cfg.family, &cfg.grid.lo, &cfg.grid.hi);
  std::vector<TestFunction> fam2;
  for (const auto& f : fam) fam2.push_back(f.affine(2.0));
  Constraints c1 = build_constraints(ex.domain, ex.coef, gr, fam, cfg.constraints);
  Constraints c2 = build_constraints(ex.domain, ex.coef, gr, fam2, cfg.constraints);
  CHECK((c2.M - 2.0 * c1.M).norm() <= 1e-12 * c1.M.norm());
  cfg.tol = 0.0;
  cfg.max_iter = 4000;
  GridMeasure m1 = solve_constraints(c1, gr, cfg);
  // the stopping rule is absolute, so it scales with the objective
  SolverConfig cfg2 = cfg;
  cfg2.min_improvement = 4.0 * cfg.min_improvement;
  GridMeasure m2 = solve_constraints(c2, gr, cfg2);
  CHECK(l1(m1.weights, m2.weights) <= 1e-9);
  // objective at a fixed point scales by 4
  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(m1.weights.data(), m1.weights.size());
  auto obj = [&](const Constraints& c) {
    Eigen::VectorXd r = c.M * w;
    double s = 0.0;
    for (long k = 0; k < r.size(); ++k) {
      double v = c.types[k] == RowType::Equality ? r(k) : std::max(0.0, r(k));
      s += v * v;
    }
    return s;
  };
  CHECK(obj(c2) == doctest::Approx(4.0 * obj(c1)).epsilon(1e-10));
  CHECK(m2.objective == doctest::Approx(4.0 * m1.objective).epsilon(0.05));
}

TEST_CASE("disk solve is close to uniform") {
  auto ex = make_example("disk");
  SolverConfig cfg;
  cfg.grid.kind = GridSpec::Kind::Polar;
  cfg.grid.n = {40, 80};
  cfg.grid.center = vec2(0, 0);
  cfg.family.interior = 20;
  cfg.family.face = 24;
  cfg.family.boundary = 24;
  cfg.strict = false;
  GridMeasure m = solve_stationary(ex.domain, ex.coef, cfg);
  double tot = std::accumulate(m.volumes.begin(), m.volumes.end(), 0.0);
  double d = 0.0;
  for (size_t j = 0; j < m.weights.size(); ++j) d += std::abs(m.weights[j] - m.volumes[j] / tot);
  CHECK(d <= 0.05);
  for (const auto& x : m.points) CHECK(x.norm() < 1.0);
}

TEST_CASE("holdout residuals") {
  auto ex = make_example("halfline");
  std::vector<TestFunction> hold = {interior_bump(ex.domain, vec1(1.0), 0.7), interior_bump(ex.domain, vec1(2.2), 1.1),
                                    face_bump(ex.domain, 0, vec1(0.0), 0.8)};
  auto exact = [&](int n) {
    Grid gr = halfline_grid(n);
    GridMeasure m;
    m.points = gr.points;
    m.volumes = gr.volumes;
    m.weights = exp_histogram(gr.points, gr.volumes);
    return m;
  };
  GridMeasure m = exact(400), mf = exact(800);
  ResidualReport r = residual_report(m, ex.coef, ex.domain, hold);
  ResidualReport rf = residual_report(mf, ex.coef, ex.domain, hold);
  REQUIRE(r.entries.size() == hold.size());
  for (size_t k = 0; k < hold.size(); ++k) {
    // the exact value is 0; the grid error is that of a second-order rule
    double qerr = 2.0 * std::abs(r.entries[k].value - rf.entries[k].value) + 1e-12;
    INFO(r.entries[k].id);
    CHECK(std::abs(r.entries[k].value) <= qerr);
  }

  // moving mass towards a point mass at x = 3 grows the violation
  size_t far = 0;
  while (m.points[far](0) < 3.0) ++far;
  double prev = r.max_violation;
  for (double t : {0.05, 0.1, 0.2}) {
    GridMeasure p = m;
    for (double& w : p.weights) w *= 1 - t;
    p.weights[far] += t;
    double v = residual_report(p, ex.coef, ex.domain, hold).max_violation;
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("strict mode reports infeasibility") {
  auto ex = make_example("halfline");
  Grid gr = halfline_grid(20);
  // two equality rows that no probability vector satisfies together
  Constraints c;
  c.M = Eigen::MatrixXd::Ones(2, gr.points.size());
  c.M.row(1) *= -1.0;
  c.M.row(0).array() += 1.0;
  c.types = {RowType::Equality, RowType::Equality};
  c.ids = {"a", "b"};
  c.scale = {1, 1};
  SolverConfig cfg = halfline_config(20);
  cfg.strict = true;
  try {
    solve_constraints(c, gr, cfg);
    FAIL("expected Infeasible");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Infeasible);
  }
  cfg.strict = false;
  GridMeasure m = solve_constraints(c, gr, cfg);
  CHECK(!m.feasible);
  CHECK(m.objective > cfg.tol);
}
