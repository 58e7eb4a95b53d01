#include "refdiff/operators.hpp"

#include "refdiff/parallel.hpp"
#include "refdiff/rng.hpp"

#include <algorithm>
#include <cmath>

namespace refdiff {

namespace {

bool use_analytic(const CoefficientField& coef, const Density& p, DerivativeMode mode) {
  bool have = coef.has_analytic() && p.analytic();
  if (mode == DerivativeMode::Analytic && !have)
    throw Error(ErrorCode::MissingDerivatives, "analytic derivatives requested but not provided");
  if (mode == DerivativeMode::FiniteDifference) return false;
  return have;
}

Vec fd_gradient(const ScalarField& f, const Vec& x) {
  const int J = static_cast<int>(x.size());
  double h = fd_step1(x.norm());
  Vec g(J);
  for (int i = 0; i < J; ++i) {
    Vec e = unit(J, i) * h;
    g(i) = (f(x + e) - f(x - e)) / (2.0 * h);
  }
  return g;
}

Vec density_gradient(const Density& p, const Vec& x, bool analytic) {
  if (analytic && p.gradient) return p.gradient(x);
  return fd_gradient(p.value, x);
}

bool on_piece(const DomainSpec& d, int i, const Vec& x) {
  double tol = std::max(d.active_tol(x), 1e-8 * (1.0 + x.norm()));
  if (std::abs(d.pieces[i].value(x)) > tol) return false;
  for (int k = 0; k < d.num_pieces(); ++k)
    if (k != i && d.pieces[k].value(x) < -tol) return false;
  return true;
}

double sup_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

int default_resolution(int J) {
  switch (J) {
    case 1: return 4000;
    case 2: return 400;
    case 3: return 60;
    default: return 12;
  }
}

int capped_resolution(int J, int resolution) {
  int res = resolution > 0 ? resolution : default_resolution(J);
  int cap = static_cast<int>(std::floor(std::pow(4.0e6, 1.0 / J)));
  return std::max(1, std::min(res, cap));
}

template <class F>
void grid_visit(const DomainSpec& d, int res, const Vec& lo, const Vec& hi, F&& fn) {
  const int J = d.dim;
  Vec h = (hi - lo) / res;
  double cell = h.prod();
  std::vector<int> idx(J, 0);
  Vec x(J);
  while (true) {
    for (int k = 0; k < J; ++k) x(k) = lo(k) + (idx[k] + 0.5) * h(k);
    if (min_piece_value(d, x) >= 0.0) fn(x, cell);
    int k = 0;
    while (k < J && ++idx[k] == res) idx[k++] = 0;
    if (k == J) break;
  }
}

// Points on ∂G_i ∩ ∂G_j, away from 𝒱.
std::vector<Vec> edge_points(const DomainSpec& d, int i, int j, int count, std::uint64_t seed) {
  const int J = d.dim;
  const BoundaryPiece& Pi = d.pieces[i];
  const BoundaryPiece& Pj = d.pieces[j];
  std::vector<Vec> out;
  auto accept = [&](const Vec& y) {
    if (!on_piece(d, i, y) || !on_piece(d, j, y)) return;
    for (int k = 0; k < J; ++k)
      if (y(k) < d.lo(k) - 1e-9 || y(k) > d.hi(k) + 1e-9) return;
    if (distance_to_V(d, y) <= 10.0 * d.active_tol(y)) return;
    for (const auto& z : out)
      if ((z - y).norm() < 1e-9 * (1.0 + y.norm())) return;
    out.push_back(y);
  };
  if (Pi.is_half_space() && Pj.is_half_space()) {
    Eigen::MatrixXd N(2, J);
    N.row(0) = Eigen::VectorXd(Pi.n()).transpose();
    N.row(1) = Eigen::VectorXd(Pj.n()).transpose();
    Eigen::Vector2d c(Pi.offset(), Pj.offset());
    Eigen::FullPivLU<Eigen::MatrixXd> lu(N);
    if (lu.rank() < 2) return out;
    Eigen::VectorXd x0 = N.transpose() * (N * N.transpose()).inverse() * c;
    if (J == 2) {
      accept(Vec(x0));
      return out;
    }
    Eigen::MatrixXd K = lu.kernel();
    Eigen::MatrixXd Q = K.householderQr().householderQ() * Eigen::MatrixXd::Identity(J, K.cols());
    CounterRng rng(seed, 0xed9e, i, j);
    for (int t = 0; t < 40 * count && static_cast<int>(out.size()) < count; ++t) {
      Eigen::VectorXd z(J);
      for (int k = 0; k < J; ++k) z(k) = d.lo(k) + rng.uniform() * (d.hi(k) - d.lo(k));
      Eigen::VectorXd y = x0 + Q * (Q.transpose() * (z - x0));
      accept(Vec(y));
    }
    return out;
  }
  // curved: alternate projections from quadrature points closest to the other piece
  const BoundaryPiece& C = Pi.is_half_space() ? Pj : Pi;
  int ci = Pi.is_half_space() ? j : i;
  int other = ci == i ? j : i;
  Quadrature q = boundary_quadrature(d, ci, std::max(64, 8 * count));
  std::vector<std::pair<double, Vec>> cand;
  for (const auto& y : q.points) cand.push_back({std::abs(d.pieces[other].value(y)), y});
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (size_t k = 0; k < cand.size() && k < static_cast<size_t>(4 * count); ++k) {
    Vec y = cand[k].second;
    for (int it = 0; it < 50; ++it) {
      y = d.pieces[other].project(y);
      y = C.project(y);
    }
    accept(y);
    if (static_cast<int>(out.size()) >= count) break;
  }
  return out;
}

}  // namespace

Density Density::scaled(double s) const {
  Density q;
  q.name = name;
  auto v = value;
  q.value = [v, s](const Vec& x) { return s * v(x); };
  if (gradient) {
    auto g = gradient;
    q.gradient = [g, s](const Vec& x) { return Vec(s * g(x)); };
  }
  if (hessian) {
    auto h = hessian;
    q.hessian = [h, s](const Vec& x) { return Mat(s * h(x)); };
  }
  return q;
}

double apply_L(const CoefficientField& coef, const Jet& jet, const Vec& x) {
  Vec b = coef.drift(x);
  Mat a = coef.diffusion(x);
  return b.dot(jet.grad) + 0.5 * (a.cwiseProduct(jet.hess)).sum();
}

double apply_L(const CoefficientField& coef, const TestFunction& f, const Vec& x) {
  return apply_L(coef, f.jet(x, 2), x);
}

double apply_L_star(const CoefficientField& coef, const Density& p, const Vec& x, DerivativeMode mode) {
  const int J = static_cast<int>(x.size());
  if (use_analytic(coef, p, mode)) {
    Mat a = coef.diffusion(x);
    Vec b = coef.drift(x);
    Mat db = coef.drift_jacobian(x);
    auto da = coef.diffusion_gradient(x);
    auto d2a = coef.diffusion_hessian(x);
    double pv = p.value(x);
    Vec gp = p.gradient(x);
    Mat Hp = p.hessian(x);
    double two = 0.0, one = 0.0;
    for (int i = 0; i < J; ++i) {
      for (int j = 0; j < J; ++j)
        two += d2a[i * J + j](i, j) * pv + da[i](i, j) * gp(j) + da[j](i, j) * gp(i) + a(i, j) * Hp(i, j);
      one += db(i, i) * pv + b(i) * gp(i);
    }
    return 0.5 * two - one;
  }
  // differentiate the products a_ij p and b_i p directly
  double h1 = fd_step1(x.norm()), h2 = fd_step2(x.norm());
  auto ap = [&](const Vec& y, int i, int j) { return coef.diffusion(y)(i, j) * p.value(y); };
  double one = 0.0, two = 0.0;
  for (int i = 0; i < J; ++i) {
    Vec e = unit(J, i) * h1;
    one += (coef.drift(x + e)(i) * p.value(x + e) - coef.drift(x - e)(i) * p.value(x - e)) / (2.0 * h1);
    Vec f = unit(J, i) * h2;
    two += (ap(x + f, i, i) - 2.0 * ap(x, i, i) + ap(x - f, i, i)) / (h2 * h2);
    for (int j = i + 1; j < J; ++j) {
      Vec g = unit(J, j) * h2;
      double m = (ap(x + f + g, i, j) - ap(x + f - g, i, j) - ap(x - f + g, i, j) + ap(x - f - g, i, j)) /
                 (4.0 * h2 * h2);
      two += 2.0 * m;
    }
  }
  return 0.5 * two - one;
}

double K_i(const CoefficientField& coef, const DomainSpec& d, const Vec& x, int i, DerivativeMode mode) {
  const int J = d.dim;
  Vec n = d.pieces.at(i).normal(x);
  Vec div = Vec::Zero(J);  // div(k) = Σ_j ∂a_kj/∂x_j
  bool analytic = mode != DerivativeMode::FiniteDifference && static_cast<bool>(coef.diffusion_gradient);
  if (mode == DerivativeMode::Analytic && !coef.diffusion_gradient)
    throw Error(ErrorCode::MissingDerivatives, "no analytic diffusion gradient");
  if (analytic) {
    auto da = coef.diffusion_gradient(x);
    for (int k = 0; k < J; ++k)
      for (int j = 0; j < J; ++j) div(k) += da[j](k, j);
  } else {
    double h = fd_step1(x.norm());
    for (int j = 0; j < J; ++j) {
      Vec e = unit(J, j) * h;
      Mat ap = coef.diffusion(x + e), am = coef.diffusion(x - e);
      for (int k = 0; k < J; ++k) div(k) += (ap(k, j) - am(k, j)) / (2.0 * h);
    }
  }
  return n.dot(div);
}

double face_residual(const CoefficientField& coef, const DomainSpec& d, const Density& p, const Vec& x, int i,
                     DerivativeMode mode) {
  if (i < 0 || i >= d.num_pieces()) throw Error(ErrorCode::InvalidArgument, "no such piece");
  if (!on_piece(d, i, x)) throw Error(ErrorCode::OffFace, "point is not on the face");
  const int J = d.dim;
  const BoundaryPiece& P = d.pieces[i];
  bool analytic = use_analytic(coef, p, mode);
  DerivativeMode m = analytic ? DerivativeMode::Analytic : DerivativeMode::FiniteDifference;
  double pv = p.value(x);
  Vec gp = density_gradient(p, x, analytic);
  Vec n = P.normal(x);
  Vec g = P.gamma(x);
  Mat a = coef.diffusion(x);
  Vec b = coef.drift(x);
  double K = K_i(coef, d, x, i, m);
  double div = 0.0;
  if (analytic && P.is_half_space()) {
    Vec w = n.dot(a * n) * g - a * n;
    auto da = coef.diffusion_gradient(x);
    double s = 0.0;
    for (int k = 0; k < J; ++k) s += n.dot(da[k] * n) * g(k) - (da[k] * n)(k);
    div = gp.dot(w) + pv * s;
  } else {
    auto W = [&](const Vec& y) {
      Vec ny = P.normal(y);
      Mat ay = coef.diffusion(y);
      return Vec(p.value(y) * (ny.dot(ay * ny) * P.gamma(y) - ay * ny));
    };
    double h = fd_step1(x.norm());
    for (int k = 0; k < J; ++k) {
      Vec e = unit(J, k) * h;
      div += (W(x + e)(k) - W(x - e)(k)) / (2.0 * h);
    }
  }
  return -2.0 * pv * n.dot(b) + n.dot(a * gp) + pv * K - div;
}

double edge_residual(const CoefficientField& coef, const DomainSpec& d, const Density& p, const Vec& x, int i,
                     int j) {
  if (i == j || i < 0 || j < 0 || i >= d.num_pieces() || j >= d.num_pieces())
    throw Error(ErrorCode::InvalidArgument, "edge needs two distinct pieces");
  if (!on_piece(d, i, x) || !on_piece(d, j, x)) throw Error(ErrorCode::OffEdge, "point is not on the edge");
  if (distance_to_V(d, x) <= 10.0 * d.active_tol(x)) throw Error(ErrorCode::OffEdge, "point lies in V");
  Vec ni = d.pieces[i].normal(x), nj = d.pieces[j].normal(x);
  Vec gi = d.pieces[i].gamma(x), gj = d.pieces[j].gamma(x);
  Mat a = coef.diffusion(x);
  double s = nj.dot(ni.dot(a * ni) * gi - a * ni) + ni.dot(nj.dot(a * nj) * gj - a * nj);
  return p.value(x) * s;
}

bool BarReport::pass() const {
  if (!interior_pass) return false;
  for (const auto& e : faces)
    if (!e.pass) return false;
  for (const auto& e : edges)
    if (!e.pass) return false;
  return true;
}

nlohmann::json BarReport::to_json() const {
  auto entry = [](const ResidualEntry& e) {
    return nlohmann::json{{"pieces", e.pieces}, {"residual", e.residual}, {"samples", e.samples},
                          {"tolerance", e.tolerance}, {"pass", e.pass}};
  };
  nlohmann::json j;
  j["interior"] = {{"residual", interior_residual}, {"samples", interior_samples},
                   {"tolerance", interior_tolerance}, {"pass", interior_pass}};
  j["faces"] = nlohmann::json::array();
  for (const auto& e : faces) j["faces"].push_back(entry(e));
  j["edges"] = nlohmann::json::array();
  for (const auto& e : edges) j["edges"].push_back(entry(e));
  j["mass"] = mass;
  j["tail_warning"] = tail_warning;
  j["scale"] = scale;
  j["sup_p"] = sup_p;
  j["analytic"] = analytic;
  j["pass"] = pass();
  return j;
}

BarReport verify_bar(const CoefficientField& coef, const DomainSpec& d, const Density& p, const BarPlan& plan) {
  BarReport rep;
  rep.analytic = use_analytic(coef, p, plan.mode);
  DerivativeMode mode = rep.analytic ? DerivativeMode::Analytic : DerivativeMode::FiniteDifference;

  std::vector<Vec> interior;
  for (auto& x : sample_domain(d, plan.interior, plan.seed))
    if (contains(d, x).location == Location::Interior) interior.push_back(x);

  std::vector<std::vector<Vec>> face_pts(d.num_pieces());
  for (int i = 0; i < d.num_pieces(); ++i) {
    Quadrature q = boundary_quadrature(d, i, std::max(1, plan.face));
    for (auto& x : q.points) {
      if (active_set(d, x).size() != 1) continue;  // smooth part: exactly one active piece
      if (distance_to_V(d, x) <= 10.0 * d.active_tol(x)) continue;
      if (!on_piece(d, i, x)) continue;
      face_pts[i].push_back(x);
    }
  }
  std::vector<std::pair<int, int>> pairs;
  std::vector<std::vector<Vec>> edge_pts;
  for (int i = 0; i < d.num_pieces(); ++i)
    for (int j = i + 1; j < d.num_pieces(); ++j) {
      pairs.push_back({i, j});
      edge_pts.push_back(edge_points(d, i, j, std::max(1, plan.edge), plan.seed));
    }

  // scale = sup |p| · (1 + |b| + |a|) over the samples
  double sup_p = 0.0, sup_c = 0.0;
  auto probe = [&](const Vec& x) {
    sup_p = std::max(sup_p, std::abs(p.value(x)));
    sup_c = std::max(sup_c, coef.drift(x).norm() + coef.diffusion(x).norm());
  };
  for (auto& x : interior) probe(x);
  for (auto& v : face_pts)
    for (auto& x : v) probe(x);
  for (auto& v : edge_pts)
    for (auto& x : v) probe(x);
  rep.sup_p = sup_p;
  rep.scale = sup_p * (1.0 + sup_c);
  double tol = plan.tol_override >= 0 ? plan.tol_override
               : rep.analytic         ? plan.tol_analytic
                                      : plan.tol_fd * rep.scale;

  std::vector<double> r(interior.size());
  parallel_for(interior.size(), plan.threads, [&](std::size_t k) { r[k] = apply_L_star(coef, p, interior[k], mode); });
  rep.interior_residual = sup_abs(r);
  rep.interior_samples = static_cast<int>(interior.size());
  rep.interior_tolerance = tol;
  rep.interior_pass = rep.interior_residual <= tol;

  for (int i = 0; i < d.num_pieces(); ++i) {
    const auto& pts = face_pts[i];
    std::vector<double> fr(pts.size());
    parallel_for(pts.size(), plan.threads, [&](std::size_t k) { fr[k] = face_residual(coef, d, p, pts[k], i, mode); });
    ResidualEntry e;
    e.pieces = {i};
    e.residual = sup_abs(fr);
    e.samples = static_cast<int>(pts.size());
    e.tolerance = tol;
    e.pass = e.residual <= tol;
    rep.faces.push_back(e);
  }
  for (size_t k = 0; k < pairs.size(); ++k) {
    const auto& pts = edge_pts[k];
    std::vector<double> er(pts.size());
    parallel_for(pts.size(), plan.threads, [&](std::size_t m) {
      er[m] = edge_residual(coef, d, p, pts[m], pairs[k].first, pairs[k].second);
    });
    ResidualEntry e;
    e.pieces = {pairs[k].first, pairs[k].second};
    e.residual = sup_abs(er);
    e.samples = static_cast<int>(pts.size());
    e.tolerance = tol;
    e.pass = e.residual <= tol;
    rep.edges.push_back(e);
  }

  int res = capped_resolution(d.dim, plan.mass_resolution);
  rep.mass = integrate_box(d, p.value, res, d.lo, d.hi);
  if (!d.bounded) {
    Vec span = d.hi - d.lo;
    double m2 = integrate_box(d, p.value, std::max(res, capped_resolution(d.dim, 2 * res)), Vec(d.lo - 0.5 * span),
                              Vec(d.hi + 0.5 * span));
    rep.tail_warning = std::abs(m2 - rep.mass) > 1e-3 * std::max(std::abs(m2), 1e-300);
  }
  return rep;
}

double integrate_box(const DomainSpec& d, const ScalarField& f, int resolution, const Vec& lo, const Vec& hi) {
  int res = capped_resolution(d.dim, resolution);
  double s = 0.0;
  grid_visit(d, res, lo, hi, [&](const Vec& x, double cell) { s += f(x) * cell; });
  return s;
}

NormalizedDensity normalize_density(const Density& p, const DomainSpec& d, int resolution) {
  int res = capped_resolution(d.dim, resolution);
  double m = integrate_box(d, p.value, res, d.lo, d.hi);
  if (!(m > 1e-300)) throw Error(ErrorCode::ZeroMass, "density has no mass on the domain");
  if (!d.bounded) {
    Vec span = d.hi - d.lo;
    double m2 = integrate_box(d, p.value, capped_resolution(d.dim, 2 * res), Vec(d.lo - 0.5 * span),
                              Vec(d.hi + 0.5 * span));
    if (!std::isfinite(m2) || (m2 - m) > 0.05 * m2)
      throw Error(ErrorCode::DivergentMass, "mass keeps growing with the integration box");
  }
  if (!std::isfinite(m)) throw Error(ErrorCode::DivergentMass, "mass is not finite");
  NormalizedDensity out;
  out.mass = m;
  out.density = p.scaled(1.0 / m);
  return out;
}

Measure density_measure(const Density& p, const DomainSpec& d, int resolution) {
  auto build = [&](int res) {
    Measure m;
    m.kind = Measure::Kind::Quadrature;
    double total = 0.0;
    grid_visit(d, res, d.lo, d.hi, [&](const Vec& x, double cell) {
      double w = p.value(x) * cell;
      if (w == 0.0) return;
      m.points.push_back(x);
      m.weights.push_back(w);
      total += w;
    });
    if (!(total > 0)) throw Error(ErrorCode::ZeroMass, "density has no mass on the grid");
    for (auto& w : m.weights) w /= total;
    return m;
  };
  int res = capped_resolution(d.dim, resolution);
  Measure m = build(res);
  if (res >= 4) {
    auto c = std::make_shared<Measure>(build(res / 2));
    if (res >= 8) c->coarse = std::make_shared<Measure>(build(res / 4));
    m.coarse = c;
  }
  if (!d.bounded) {
    Vec span = d.hi - d.lo;
    double in = integrate_box(d, p.value, res, d.lo, d.hi);
    auto outside = [&](const Vec& x) {
      for (int k = 0; k < d.dim; ++k)
        if (x(k) < d.lo(k) || x(k) > d.hi(k)) return p.value(x);
      return 0.0;
    };
    double out = integrate_box(d, outside, res, Vec(d.lo - 0.5 * span), Vec(d.hi + 0.5 * span));
    if (in > 0) m.tail = std::max(0.0, out / in);
  }
  return m;
}

Measure dirac_measure(const Vec& x) {
  Measure m;
  m.kind = Measure::Kind::Quadrature;
  m.points = {x};
  m.weights = {1.0};
  return m;
}

namespace {

std::vector<double> L_values(const CoefficientField& coef, const TestFunction& f, const Measure& pi, int threads) {
  const auto& info = f.info();
  bool local = std::isfinite(info.support_radius) && info.center.size() == coef.dim;
  std::vector<double> y(pi.points.size(), 0.0);
  parallel_for(pi.points.size(), threads, [&](std::size_t k) {
    const Vec& x = pi.points[k];
    if (pi.weights[k] == 0.0) return;
    if (local && (x - info.center).norm() >= info.support_radius) return;  // f is constant there
    y[k] = apply_L(coef, f, x);
  });
  return y;
}

}  // namespace

WeakResidual weak_residual(const CoefficientField& coef, const TestFunction& f, const Measure& pi,
                           const DomainSpec* check_domain, int threads) {
  if (check_domain) {
    HReport h = check_H(f.negated(), *check_domain, 400, 7);
    if (!h.pass) throw Error(ErrorCode::NotInH, "-f fails the membership check: " + h.to_json().dump());
  }
  WeakResidual out;
  out.id = f.info().id;
  if (pi.points.empty()) return out;
  std::vector<double> y = L_values(coef, f, pi, threads);
  double W = 0.0, s = 0.0, sabs = 0.0, ymax = 0.0;
  for (size_t k = 0; k < y.size(); ++k) {
    ymax = std::max(ymax, std::abs(y[k]));
    W += pi.weights[k];
    s += pi.weights[k] * y[k];
    sabs += std::abs(pi.weights[k] * y[k]);
  }
  // summation round-off
  const double fp = 64.0 * kEps * sabs, trunc = pi.tail * ymax;
  if (!(W > 0)) throw Error(ErrorCode::ZeroMass, "measure has no mass");
  if (pi.kind == Measure::Kind::Quadrature) {
    out.value = s;
    double err = 0.0;
    auto sum = [&](const Measure& m) {
      std::vector<double> yc = L_values(coef, f, m, threads);
      double acc = 0.0;
      for (size_t k = 0; k < yc.size(); ++k) acc += m.weights[k] * yc[k];
      return acc;
    };
    if (pi.coarse) {
      double sc = sum(*pi.coarse);
      err = std::abs(s - sc);
      // fine and half grids can agree by accident when the integrand has kinks
      if (pi.coarse->coarse) err = std::max(err, std::abs(sc - sum(*pi.coarse->coarse)) / 4.0);
    }
    out.error = err + pi.floor + fp + trunc;
  } else {
    // batch means over the stored order (time order for occupation measures)
    double mean = s / W, v = 0.0;
    const size_t n = y.size();
    const size_t nb = n >= 400 ? 20 : n;
    for (size_t b = 0; b < nb; ++b) {
      size_t lo = b * n / nb, hi = (b + 1) * n / nb;
      double wb = 0.0, sb = 0.0;
      for (size_t k = lo; k < hi; ++k) {
        wb += pi.weights[k];
        sb += pi.weights[k] * y[k];
      }
      if (wb > 0) v += (wb / W) * (wb / W) * (sb / wb - mean) * (sb / wb - mean);
    }
    if (nb < n) v *= static_cast<double>(nb) / (nb - 1);
    out.value = mean;
    out.error = std::sqrt(v) + pi.floor + fp / W + trunc;
  }
  return out;
}

}  // namespace refdiff
