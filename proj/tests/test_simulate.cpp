#include "support.hpp"

#include "refdiff/gallery.hpp"
#include "refdiff/simulate.hpp"
#include "refdiff/stats.hpp"

#include <algorithm>

using namespace refdiff;
using namespace refdiff::test;

namespace {

DomainSpec orthant(const Vec& g1, const Vec& g2, double L = 4.0) {
  DomainSpec d;
  d.dim = 2;
  d.pieces.push_back(BoundaryPiece::half_space(vec2(1, 0), 0.0, g1));
  d.pieces.push_back(BoundaryPiece::half_space(vec2(0, 1), 0.0, g2));
  d.lo = Vec::Zero(2);
  d.hi = Vec::Constant(2, L);
  d.validate();
  return d;
}

CoefficientField still(int J) { return CoefficientField::constant_field(Vec::Zero(J), Mat::Zero(J, J)); }

double exp_cdf(double theta, double x) { return x <= 0 ? 0.0 : 1.0 - std::exp(-theta * x); }

TestFunction xexp() {
  return lambda_function(
      "xexp", 1, [](const Vec& x) { return x(0) * std::exp(-x(0)); },
      [](const Vec& x) { return vec1((1 - x(0)) * std::exp(-x(0))); },
      [](const Vec& x) {
        Mat h(1, 1);
        h << (x(0) - 2) * std::exp(-x(0));
        return h;
      });
}

}  // namespace

TEST_CASE("reflection examples") {
  auto hl = make_example("halfline").domain;
  auto r0 = reflect(hl, vec1(0.4));
  CHECK(r0.x(0) == 0.4);
  CHECK(r0.eta[0] == 0.0);
  auto r1 = reflect(hl, vec1(-0.3));
  CHECK(std::abs(r1.x(0)) <= 1e-12);
  CHECK(r1.eta[0] == doctest::Approx(0.3));

  auto d = orthant(vec2(1, -0.5), vec2(-0.5, 1));
  auto r = reflect(d, vec2(-1, -1));
  CHECK(r.x.norm() <= 1e-10);
  CHECK(r.eta[0] == doctest::Approx(2.0));
  CHECK(r.eta[1] == doctest::Approx(2.0));
}

TEST_CASE("reflection satisfies the complementarity system") {
  Gen g(7);
  for (int trial = 0; trial < 300; ++trial) {
    double q1 = g.uniform(-0.6, 0.6), q2 = g.uniform(-0.6, 0.6);
    auto d = orthant(vec2(1, q1), vec2(q2, 1));
    Vec y = g.gaussian(2);
    auto r = reflect(d, y);
    Vec rebuilt = y;
    for (int i = 0; i < 2; ++i) {
      CHECK(r.eta[i] >= 0.0);
      rebuilt += r.eta[i] * d.pieces[i].gamma(r.x);
      if (r.eta[i] > 1e-12) CHECK(std::abs(d.pieces[i].value(r.x)) <= 1e-9);
    }
    CHECK((rebuilt - r.x).norm() <= 1e-9);
    CHECK(min_piece_value(d, r.x) >= -1e-9);
  }
}

TEST_CASE("reflection on curved and GPS boundaries") {
  auto disk = make_example("disk", {{"theta", 0.3}}).domain;
  Gen g(8);
  for (int k = 0; k < 100; ++k) {
    Vec y = g.direction(2) * g.uniform(1.0, 1.2);
    auto r = reflect(disk, y);
    CHECK(min_piece_value(disk, r.x) >= -1e-9);
    CHECK(std::abs(r.x.norm() - 1.0) <= 1e-8);
    CHECK(r.eta[0] > 0.0);
  }
  auto gps = make_example("gps", {{"J", 3}}).domain;
  for (int k = 0; k < 100; ++k) {
    Vec y = g.gaussian(3) * 0.1 + Vec::Constant(3, 0.05);
    try {
      auto r = reflect(gps, y);
      CHECK(min_piece_value(gps, r.x) >= -1e-9);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NoConvergence);
    }
  }
}

TEST_CASE("zero coefficients give a constant path") {
  auto d = orthant(vec2(1, 0), vec2(0, 1));
  auto coef = still(2);
  for (auto scheme : {Scheme::Euler, Scheme::Bridge}) {
    SimOptions o;
    o.T = 0.5;
    o.dt = 0.01;
    o.scheme = scheme;
    auto tr = simulate_path(d, coef, vec2(0.5, 0.0), o);
    for (const auto& x : tr.states) CHECK((x - vec2(0.5, 0.0)).norm() == 0.0);
    for (const auto& p : tr.pushing) CHECK(std::all_of(p.begin(), p.end(), [](double v) { return v == 0.0; }));
    auto em = occupation_measure(tr, 0.0);
    for (const auto& x : em.points) CHECK(x == vec2(0.5, 0.0));
  }
}

TEST_CASE("deterministic drift into a face") {
  auto d = orthant(vec2(1, 0), vec2(0, 1));
  auto coef = CoefficientField::constant_field(vec2(-1, 0), Mat::Zero(2, 2));
  for (auto scheme : {Scheme::Euler, Scheme::Bridge}) {
    SimOptions o;
    o.T = 2.0;
    o.dt = 1e-3;
    o.scheme = scheme;
    auto tr = simulate_path(d, coef, vec2(1, 1), o);
    REQUIRE(tr.states.size() == tr.t.size());
    for (size_t k = 0; k < tr.t.size(); ++k) {
      double t = tr.t[k];
      Vec expect = vec2(std::max(0.0, 1.0 - t), 1.0);
      CHECK((tr.states[k] - expect).norm() <= 2e-3);
      CHECK(std::abs(tr.pushing[k][0] - std::max(0.0, t - 1.0)) <= 2e-3);
      CHECK(tr.pushing[k][1] == 0.0);
    }
    auto bo = boundary_occupation(d, tr, 1e-6, 0.6);
    CHECK(bo.boundary == doctest::Approx(1.0));
    CHECK(bo.V == 0.0);
  }
}

TEST_CASE("boundary occupation of an interior path") {
  auto d = orthant(vec2(1, 0), vec2(0, 1));
  auto tr = simulate_path(d, still(2), vec2(1, 1), 1.0, 0.01, 3);
  auto bo = boundary_occupation(d, tr, 0.1);
  CHECK(bo.boundary == 0.0);
  CHECK(bo.V == 0.0);
}

TEST_CASE("two-state occupation") {
  Trajectory tr;
  tr.dt = 1.0;
  for (int k = 0; k < 10; ++k) {
    tr.t.push_back(k);
    tr.states.push_back(vec1(k % 2));
    tr.pushing.push_back({0.0});
  }
  auto em = occupation_measure(tr, 0.0);
  double w0 = 0, w1 = 0, tot = 0;
  for (size_t k = 0; k < em.points.size(); ++k) {
    (em.points[k](0) == 0 ? w0 : w1) += em.weights[k];
    tot += em.weights[k];
  }
  CHECK(tot == doctest::Approx(1.0));
  CHECK(w0 == doctest::Approx(0.5));
  CHECK(w1 == doctest::Approx(0.5));
}

TEST_CASE("trajectories are deterministic in the seed") {
  auto ex = make_example("gps");
  SimOptions o;
  o.T = 2.0;
  o.dt = 1e-3;
  o.seed = 42;
  auto a = simulate_path(ex.domain, ex.coef, vec2(0.5, 0.5), o);
  auto b = simulate_path(ex.domain, ex.coef, vec2(0.5, 0.5), o);
  REQUIRE(a.states.size() == b.states.size());
  bool same = true;
  for (size_t k = 0; k < a.states.size(); ++k) same = same && (a.states[k].array() == b.states[k].array()).all();
  CHECK(same);
  o.seed = 43;
  auto c = simulate_path(ex.domain, ex.coef, vec2(0.5, 0.5), o);
  CHECK((c.states.back() - a.states.back()).norm() > 0.0);
  o.seed = 42;
  o.path = 1;
  auto p = simulate_path(ex.domain, ex.coef, vec2(0.5, 0.5), o);
  CHECK((p.states.back() - a.states.back()).norm() > 0.0);
}

TEST_CASE("feasibility and pushing structure on the gallery") {
  std::vector<std::pair<std::string, nlohmann::json>> cases = {
      {"halfline", {}}, {"orthant", {{"R", {{1, 0.3}, {-0.4, 1}}}}}, {"gps", {{"J", 3}}}, {"wedge", {}},
      {"disk", {{"theta", 0.4}}}};
  for (const auto& [name, params] : cases) {
    auto ex = make_example(name, params);
    const DomainSpec& d = ex.domain;
    Vec x0 = sample_domain(d, 1, 5)[0];
    for (auto scheme : {Scheme::Euler, Scheme::Bridge}) {
      SimOptions o;
      o.T = 3.0;
      o.dt = 1e-3;
      o.seed = 9;
      o.scheme = scheme;
      auto tr = simulate_path(d, ex.coef, x0, o);
      INFO(name, scheme == Scheme::Euler ? " euler" : " bridge");
      double sigma_step = std::sqrt(ex.coef.diffusion(x0).diagonal().maxCoeff() * o.dt);
      for (size_t k = 0; k < tr.states.size(); ++k) {
        CHECK(min_piece_value(d, tr.states[k]) >= -10 * o.tol);
        if (k == 0) continue;
        for (int i = 0; i < d.num_pieces(); ++i) {
          double inc = tr.pushing[k][i] - tr.pushing[k - 1][i];
          CHECK(inc >= 0.0);
          if (inc > 0 && scheme == Scheme::Euler) {
            // complementarity: pushing only along pieces active at the new state
            CHECK(std::abs(d.pieces[i].value(tr.states[k])) <= 1e-7);
          }
          if (scheme == Scheme::Bridge) {
            double far = 12 * sigma_step + 2 * o.dt * ex.coef.drift(tr.states[k]).norm();
            if (d.pieces[i].distance(tr.states[k - 1]) > far && d.pieces[i].distance(tr.states[k]) > far)
              CHECK(inc == 0.0);
          }
        }
        bool inside = min_piece_value(d, tr.states[k - 1]) > 1e-7 && min_piece_value(d, tr.states[k]) > 1e-7;
        if (scheme == Scheme::Euler && inside) {
          for (int i = 0; i < d.num_pieces(); ++i) CHECK(tr.pushing[k][i] == tr.pushing[k - 1][i]);
        }
      }
      CHECK(tr.failed_steps.empty());
    }
  }
}

TEST_CASE("stepper results are keyed by step index") {
  auto ex = make_example("orthant");
  Stepper s(ex.domain, ex.coef);
  auto a = s.step(vec2(1, 1), 1e-3, 5, 0, 17);
  auto b = s.step(vec2(1, 1), 1e-3, 5, 0, 17);
  auto c = s.step(vec2(1, 1), 1e-3, 5, 0, 18);
  CHECK(a.x == b.x);
  CHECK(a.x != c.x);
  CHECK(a.ok);
  CHECK(a.halvings == 0);
}

TEST_CASE("reflected Brownian motion with drift has the exponential law") {
  auto ex = make_example("halfline");
  SimOptions o;
  o.T = 400.0;
  o.dt = 1e-3;
  o.seed = 3;
  o.record_every = 5;
  auto tr = simulate_path(ex.domain, ex.coef, vec1(0.5), o);
  auto em = occupation_measure(tr, 0.05);
  std::vector<double> xs;
  for (const auto& x : em.points) xs.push_back(x(0));
  // batch-means standard error of the time average (correlation time ~ 1)
  const int nb = 40;
  std::vector<double> means;
  for (int b = 0; b < nb; ++b) {
    size_t lo = b * xs.size() / nb, hi = (b + 1) * xs.size() / nb;
    double s = 0;
    for (size_t k = lo; k < hi; ++k) s += xs[k];
    means.push_back(s / (hi - lo));
  }
  MeanSE ms = mean_se(means);
  CHECK(std::abs(ms.mean - 0.5) <= 3 * ms.se);
  CHECK(ks_statistic(xs, [](double x) { return exp_cdf(2.0, x); }) <= 0.05);

  auto bo = boundary_occupation(ex.domain, tr, 0.01, 0.05);
  CHECK(bo.boundary <= 0.05);
  CHECK(bo.boundary > 0.0);
  CHECK(bo.V == 0.0);
}

TEST_CASE("first exit times") {
  auto hl = make_example("halfline", {{"b", 1.0}}).domain;
  auto coef = CoefficientField::constant_field(vec1(1.0), Mat::Zero(1, 1));
  SimOptions o;
  o.T = 3.0;
  o.dt = 1e-3;
  o.exit_radii = {0.5, 2.0, 5.0};
  auto tr = simulate_path(hl, coef, vec1(0.0), o);
  CHECK(std::abs(first_exit(tr, 0.5).value() - 0.5) <= 2e-3);
  CHECK(std::abs(*first_exit(tr, 2.0) - 2.0) <= 2e-3);
  CHECK_FALSE(first_exit(tr, 5.0).has_value());
  CHECK(*first_exit(tr, 0.0) == 0.0);
  REQUIRE(tr.exit_times.size() == 3);
  CHECK(std::abs(tr.exit_times[0] - 0.5) <= 2e-3);
  CHECK(std::isnan(tr.exit_times[2]));

  auto d = orthant(vec2(1, 0), vec2(0, 1));
  auto flat = simulate_path(d, still(2), vec2(0.3, 0.3), 1.0, 0.01, 1);
  CHECK_FALSE(first_exit(flat, 1.0).has_value());
}

TEST_CASE("resolvent kernel") {
  auto d = orthant(vec2(1, 0), vec2(0, 1));
  CHECK(resolvent_sample(d, still(2), vec2(0.4, 0.2), 1.0, 0.01, 3) == vec2(0.4, 0.2));

  auto ex = make_example("halfline");
  for (double lambda : {1e-2, 1e-3}) {
    double s = 0;
    const int n = 1000;
    for (int k = 0; k < n; ++k)
      s += std::abs(resolvent_sample(ex.domain, ex.coef, vec1(1.0), lambda, lambda / 50, 11, k)(0) - 1.0);
    CHECK(s / n <= 2.0 * std::sqrt(lambda));
  }
}

TEST_CASE("resolvent step preserves the stationary law") {
  const int n = 5000;
  {
    auto ex = make_example("halfline");
    Gen g(17);
    std::vector<double> in, out;
    for (int k = 0; k < n; ++k) {
      double y = -std::log(1.0 - g.uniform(0, 1)) / 2.0;
      in.push_back(y);
      out.push_back(resolvent_sample(ex.domain, ex.coef, vec1(y), 0.5, 2e-3, 19, k)(0));
    }
    CHECK(ks_statistic(out, [](double x) { return exp_cdf(2.0, x); }) <= 0.03);
    CHECK(ks_two_sample(in, out) <= 0.03);
  }
  {
    auto ex = make_example("orthant", {{"b", {-1.0, -0.5}}});
    Vec theta = vec2(2.0, 1.0);
    Gen g(23);
    std::vector<double> o0, o1;
    for (int k = 0; k < n; ++k) {
      Vec y = vec2(-std::log(1.0 - g.uniform(0, 1)) / theta(0), -std::log(1.0 - g.uniform(0, 1)) / theta(1));
      Vec z = resolvent_sample(ex.domain, ex.coef, y, 0.5, 2e-3, 29, k);
      o0.push_back(z(0));
      o1.push_back(z(1));
    }
    CHECK(ks_statistic(o0, [&](double x) { return exp_cdf(theta(0), x); }) <= 0.03);
    CHECK(ks_statistic(o1, [&](double x) { return exp_cdf(theta(1), x); }) <= 0.03);
  }
}

TEST_CASE("submartingale curves") {
  auto ex = make_example("halfline");
  Ensemble e;
  e.x0 = vec1(0.2);
  e.paths = 400;
  e.T = 0.5;
  e.dt = 1e-3;
  e.checkpoints = {0.1, 0.2, 0.3, 0.4, 0.5};

  auto c = submartingale_estimate(ex.domain, ex.coef, constant_function(1, 2.5), e, 5);
  for (size_t k = 0; k < c.t.size(); ++k) {
    CHECK(c.mean[k] == doctest::Approx(2.5));
    CHECK(c.se[k] == 0.0);
  }
  CHECK(c.nondecreasing);
  CHECK(c.t.front() == 0.0);

  auto orth = make_example("orthant");
  Ensemble e2 = e;
  e2.x0 = vec2(0.5, 0.5);
  TestFunction far = interior_bump(orth.domain, vec2(6, 6), 1.0);
  auto z = submartingale_estimate(orth.domain, orth.coef, far, e2, 6);
  for (double m : z.mean) CHECK(m == 0.0);

  e.paths = 2000;
  e.x0 = vec1(0.05);
  auto up = submartingale_estimate(ex.domain, ex.coef, xexp(), e, 7);
  CHECK(up.nondecreasing);
  CHECK(up.mean.back() > up.mean.front());
  CHECK(up.to_json().is_object());

  try {
    submartingale_estimate(ex.domain, ex.coef, xexp().negated(), e, 7);
    FAIL("expected NotInH");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::NotInH);
  }
}
