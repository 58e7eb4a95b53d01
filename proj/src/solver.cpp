#include "refdiff/solver.hpp"

#include "refdiff/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace refdiff {

namespace {

double boundary_distance(const DomainSpec& d, const Vec& x) {
  double m = kInf;
  for (const auto& p : d.pieces) m = std::min(m, p.distance(x));
  return m;
}

Jet fd_jet(const std::function<double(const Vec&)>& f, const Vec& x, int order) {
  Jet j;
  j.value = f(x);
  if (order < 1) return j;
  const int J = static_cast<int>(x.size());
  double h1 = fd_step1(x.norm()), h2 = fd_step2(x.norm());
  j.grad.resize(J);
  for (int i = 0; i < J; ++i) {
    Vec e = unit(J, i) * h1;
    j.grad(i) = (f(x + e) - f(x - e)) / (2.0 * h1);
  }
  if (order < 2) return j;
  j.hess.resize(J, J);
  for (int i = 0; i < J; ++i) {
    Vec e = unit(J, i) * h2;
    j.hess(i, i) = (f(x + e) - 2.0 * j.value + f(x - e)) / (h2 * h2);
    for (int k = i + 1; k < J; ++k) {
      Vec g = unit(J, k) * h2;
      double m = (f(x + e + g) - f(x + e - g) - f(x - e + g) + f(x - e - g)) / (4.0 * h2 * h2);
      j.hess(i, k) = j.hess(k, i) = m;
    }
  }
  return j;
}

// (1 - s)^4 on [0, 1): smooth enough for ℒ, no plateau
struct Poly4 {
  double value(double s) const { return s >= 1.0 ? 0.0 : std::pow(1.0 - s, 4); }
  double d1(double s) const { return s >= 1.0 ? 0.0 : -4.0 * std::pow(1.0 - s, 3); }
  double d2(double s) const { return s >= 1.0 ? 0.0 : 12.0 * (1.0 - s) * (1.0 - s); }
};

// (1 - t^2)^4, even in t so the normal derivative vanishes on the face
struct EvenPoly4 {
  double value(double t) const { return std::abs(t) >= 1.0 ? 0.0 : std::pow(1.0 - t * t, 4); }
  double d1(double t) const { return std::abs(t) >= 1.0 ? 0.0 : -8.0 * t * std::pow(1.0 - t * t, 3); }
  double d2(double t) const {
    if (std::abs(t) >= 1.0) return 0.0;
    double u = 1.0 - t * t;
    return -8.0 * u * u * u + 48.0 * t * t * u * u;
  }
};

class PolyBump : public TestFunctionImpl {
 public:
  PolyBump(Vec c, double rho) : c_(std::move(c)), rho_(rho) {}
  Jet jet(const Vec& x, int order) const override {
    const int J = static_cast<int>(x.size());
    Vec dx = x - c_;
    double s = dx.squaredNorm() / (rho_ * rho_);
    Jet j;
    j.value = p_.value(s);
    if (order < 1) return j;
    Vec ds = 2.0 * dx / (rho_ * rho_);
    j.grad = p_.d1(s) * ds;
    if (order < 2) return j;
    j.hess = p_.d2(s) * ds * ds.transpose() + p_.d1(s) * (2.0 / (rho_ * rho_)) * Mat::Identity(J, J);
    return j;
  }

 private:
  Vec c_;
  double rho_;
  Poly4 p_;
};

class FaceBumpFlat : public TestFunctionImpl {
 public:
  FaceBumpFlat(Vec n, double c0, Vec gamma, Vec c, double rho)
      : n_(std::move(n)), c0_(c0), g_(std::move(gamma)), c_(std::move(c)), rho_(rho) {
    const int J = static_cast<int>(n_.size());
    P_ = Mat::Identity(J, J) - g_ * n_.transpose();
    nn_ = n_.norm();
  }
  Jet jet(const Vec& x, int order) const override {
    const int J = static_cast<int>(x.size());
    double phi = n_.dot(x) - c0_;
    Vec pi = x - phi * g_;
    Vec dp = pi - c_;
    double s = dp.squaredNorm() / (rho_ * rho_);
    double t = phi / (nn_ * rho_);
    Jet j;
    double ps = psi_.value(s), ct = chi_.value(t);
    j.value = ps * ct;
    if (order < 1) return j;
    Vec ds = 2.0 * P_.transpose() * dp / (rho_ * rho_);
    Vec dt = n_ / (nn_ * rho_);
    double ps1 = psi_.d1(s), ct1 = chi_.d1(t);
    j.grad = ps1 * ct * ds + ps * ct1 * dt;
    if (order < 2) return j;
    Mat d2s = 2.0 * P_.transpose() * P_ / (rho_ * rho_);
    j.hess = psi_.d2(s) * ct * ds * ds.transpose() + ps1 * ct * d2s +
             ps1 * ct1 * (ds * dt.transpose() + dt * ds.transpose()) + ps * chi_.d2(t) * dt * dt.transpose();
    (void)J;
    return j;
  }

 private:
  Vec n_;
  double c0_;
  Vec g_, c_;
  double rho_;
  Poly4 psi_;
  EvenPoly4 chi_;
  Mat P_;
  double nn_;
};

class FaceBumpCurved : public TestFunctionImpl {
 public:
  FaceBumpCurved(const BoundaryPiece& piece, Vec c, double rho)
      : piece_(piece), c_(std::move(c)), rho_(rho) {}
  double value(const Vec& x) const {
    double t = piece_.distance(x) / rho_;
    if (t >= 1.0) return 0.0;
    double s = (piece_.project(x) - c_).squaredNorm() / (rho_ * rho_);
    return psi_.value(s) * chi_.value(t);
  }
  Jet jet(const Vec& x, int order) const override {
    return fd_jet([this](const Vec& y) { return value(y); }, x, order);
  }

 private:
  BoundaryPiece piece_;
  Vec c_;
  double rho_;
  Poly4 psi_;
  EvenPoly4 chi_;
};

class QuadraticCutoff : public TestFunctionImpl {
 public:
  QuadraticCutoff(int k, Vec c, double rho) : k_(k), c_(std::move(c)), rho_(rho), xi_(cutoff(Cutoff::Kind::Xi, {})) {}
  Jet jet(const Vec& x, int order) const override {
    const int J = static_cast<int>(x.size());
    Vec dx = x - c_;
    double u = dx.squaredNorm() / (rho_ * rho_);
    double q = dx(k_) * dx(k_);
    Jet j;
    double X = xi_.value(u);
    j.value = q * X;
    if (order < 1) return j;
    Vec dq = Vec::Zero(J);
    dq(k_) = 2.0 * dx(k_);
    Vec du = 2.0 * dx / (rho_ * rho_);
    Vec dX = xi_.d1(u) * du;
    j.grad = dq * X + q * dX;
    if (order < 2) return j;
    Mat d2q = Mat::Zero(J, J);
    d2q(k_, k_) = 2.0;
    Mat d2X = xi_.d2(u) * du * du.transpose() + xi_.d1(u) * (2.0 / (rho_ * rho_)) * Mat::Identity(J, J);
    j.hess = d2q * X + dq * dX.transpose() + dX * dq.transpose() + q * d2X;
    return j;
  }

 private:
  int k_;
  Vec c_;
  double rho_;
  Cutoff xi_;
};

// Boundary point admissible as a face-bump center: one active piece, clear of 𝒱 and the others.
double face_clearance(const DomainSpec& d, const Vec& c, int piece) {
  auto act = active_set(d, c);
  if (act.size() != 1 || act[0] != piece) return 0.0;
  return boundary_clearance(d, c, act);
}

}  // namespace

TestFunction face_bump(const DomainSpec& d, int piece, const Vec& c, double rho) {
  if (piece < 0 || piece >= d.num_pieces()) throw Error(ErrorCode::InvalidArgument, "no such piece");
  if (!(rho > 0)) throw Error(ErrorCode::InvalidArgument, "face bump radius must be positive");
  const BoundaryPiece& P = d.pieces[piece];
  TestFunctionInfo info;
  info.kind = "face_bump";
  info.center = c;
  info.claims_H = info.claims_negH = P.is_half_space();
  info.outside_value = 0.0;
  info.bound_r = rho;
  info.id = function_id("face_bump[" + std::to_string(piece) + "]", c, rho);
  std::shared_ptr<const TestFunctionImpl> impl;
  if (P.is_half_space()) {
    Vec g = P.gamma_const();
    info.support_radius = rho * (1.0 + g.norm() / P.n().norm()) + 1e-12;
    impl = std::make_shared<FaceBumpFlat>(P.n(), P.offset(), g, c, rho);
  } else {
    info.support_radius = 3.0 * rho;
    impl = std::make_shared<FaceBumpCurved>(P, c, rho);
  }
  return TestFunction(impl, info);
}

TestFunction poly_bump(const DomainSpec& d, const Vec& c, double rho) {
  double clear = std::min(boundary_distance(d, c), distance_to_V(d, c));
  if (!(rho > 0) || rho >= clear) throw Error(ErrorCode::TooClose, "polynomial bump support reaches the boundary");
  TestFunctionInfo info;
  info.kind = "poly_bump";
  info.center = c;
  info.support_radius = rho;
  info.claims_H = info.claims_negH = true;
  info.outside_value = 0.0;
  info.bound_r = rho;
  info.id = function_id("poly_bump", c, rho);
  return TestFunction(std::make_shared<PolyBump>(c, rho), info);
}

TestFunction quadratic_cutoff(int dim, int k, const Vec& c, double rho) {
  if (k < 0 || k >= dim || !(rho > 0)) throw Error(ErrorCode::InvalidArgument, "bad quadratic cutoff");
  TestFunctionInfo info;
  info.kind = "quadratic";
  info.center = c;
  info.support_radius = rho;
  info.outside_value = 0.0;
  info.bound_r = rho;
  info.id = function_id("quadratic[" + std::to_string(k) + "]", c, rho);
  return TestFunction(std::make_shared<QuadraticCutoff>(k, c, rho), info);
}

Grid make_grid(const DomainSpec& d, const GridSpec& spec) {
  Grid g;
  const int J = d.dim;
  if (spec.kind == GridSpec::Kind::Polar) {
    if (J != 2 || spec.n.size() != 2) throw Error(ErrorCode::InvalidArgument, "polar grids need J = 2 and {rings, angles}");
    int nr = spec.n[0], na = spec.n[1];
    if (nr < 1 || na < 1) throw Error(ErrorCode::InvalidArgument, "grid counts must be positive");
    Vec c = spec.center.size() == 2 ? spec.center : Vec(Vec::Zero(2));
    double dr = spec.radius / nr, da = 2.0 * M_PI / na;
    g.spacing = dr;
    for (int i = 0; i < nr; ++i) {
      double r = (i + 0.5) * dr;
      for (int k = 0; k < na; ++k) {
        double a = (k + 0.5) * da;
        Vec x(2);
        x << c(0) + r * std::cos(a), c(1) + r * std::sin(a);
        if (contains(d, x).location != Location::Interior) continue;
        if (boundary_distance(d, x) < 0.5 * dr - 1e-12) continue;
        g.points.push_back(x);
        g.volumes.push_back(r * dr * da);
      }
    }
    return g;
  }
  std::vector<int> n = spec.n;
  if (n.empty()) n = {50};
  if (static_cast<int>(n.size()) == 1) n.assign(J, n[0]);
  if (static_cast<int>(n.size()) != J) throw Error(ErrorCode::InvalidArgument, "grid counts do not match dimension");
  for (int k : n)
    if (k < 1) throw Error(ErrorCode::InvalidArgument, "grid counts must be positive");
  Vec lo = spec.lo.size() == J ? spec.lo : d.lo, hi = spec.hi.size() == J ? spec.hi : d.hi;
  Vec h(J);
  for (int k = 0; k < J; ++k) h(k) = (hi(k) - lo(k)) / n[k];
  g.spacing = h.maxCoeff();
  double cell = h.prod();
  std::vector<int> idx(J, 0);
  while (true) {
    Vec x(J);
    for (int k = 0; k < J; ++k) x(k) = lo(k) + (idx[k] + 0.5) * h(k);
    if (contains(d, x).location == Location::Interior && boundary_distance(d, x) >= 0.5 * g.spacing - 1e-12 &&
        distance_to_V(d, x) > 0.0) {
      g.points.push_back(x);
      g.volumes.push_back(cell);
    }
    int k = 0;
    while (k < J && ++idx[k] == n[k]) idx[k++] = 0;
    if (k == J) break;
  }
  return g;
}

std::vector<TestFunction> make_solver_family(const DomainSpec& d, const CoefficientField& coef, const FamilySpec& spec,
                                             const Vec* lo_in, const Vec* hi_in) {
  const int J = d.dim;
  Vec lo = lo_in ? *lo_in : d.lo, hi = hi_in ? *hi_in : d.hi;
  std::vector<TestFunction> fam;
  int m = std::max(2, spec.interior);
  double hs = ((hi - lo) / (m - 1)).maxCoeff();
  double rho = spec.radius > 0 ? spec.radius : 8.0 * hs;
  Vec elo = lo.array() - 0.5 * rho, ehi = hi.array() + 0.5 * rho;
  Vec step = (ehi - elo) / (m - 1);

  if (spec.interior > 0) {
    std::vector<int> idx(J, 0);
    while (true) {
      Vec x(J);
      for (int k = 0; k < J; ++k) x(k) = elo(k) + idx[k] * step(k);
      if (contains(d, x).location == Location::Interior) {
        double clear = std::min(boundary_distance(d, x), distance_to_V(d, x));
        double r = std::min(rho, 0.95 * clear);
        if (r >= 0.25 * rho) {
          fam.push_back(spec.poly ? poly_bump(d, x, r) : interior_bump(d, x, r * r));
        }
      }
      int k = 0;
      while (k < J && ++idx[k] == m) idx[k++] = 0;
      if (k == J) break;
    }
  }

  auto centers = [&](int piece, int count) {
    std::vector<Vec> out;
    if (count <= 0) return out;
    DomainSpec box = d;
    box.lo = lo;
    box.hi = hi;
    Quadrature q = boundary_quadrature(box, piece, count);
    return q.points;
  };
  for (int i = 0; i < d.num_pieces(); ++i) {
    double gn = d.pieces[i].is_half_space() ? d.pieces[i].gamma_const().norm() : 1.0;
    for (const auto& c : centers(i, spec.face)) {
      double clear = face_clearance(d, c, i);
      if (!(clear > 0)) continue;
      for (double f : {1.0, 0.5}) {
        double r = std::min(f * rho, 0.9 * clear / (1.0 + gn));
        if (r < 0.1 * rho) continue;
        fam.push_back(face_bump(d, i, c, r));
      }
    }
    for (const auto& c : centers(i, spec.boundary)) {
      double clear = face_clearance(d, c, i);
      if (!(clear > 0)) continue;
      double r = std::min(rho, 0.9 * clear);
      for (int tries = 0; tries < 6; ++tries, r *= 0.5) {
        try {
          fam.push_back(boundary_bump(d, c, r));
          break;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::RadiusTooLarge) break;
        }
      }
    }
    for (const auto& c : centers(i, spec.quadratic)) {
      double clear = face_clearance(d, c, i);
      if (!(clear > 0)) continue;
      double r = std::min(rho, 0.9 * clear);
      for (int k = 0; k < J; ++k) fam.push_back(quadratic_cutoff(J, k, c, r));
    }
  }
  for (const auto& v : d.V)
    for (const auto& [delta, eps] : spec.v_params) {
      try {
        fam.push_back(g_delta_eps(d, v, delta, eps, &coef));
      } catch (const Error&) {
      }
    }
  return fam;
}

Orientation orient_function(const DomainSpec& d, const TestFunction& f, const ConstraintOptions& opt,
                            const std::vector<Vec>& extra, std::uint64_t salt) {
  const auto& info = f.info();
  bool local = std::isfinite(info.support_radius) && info.center.size() == d.dim;
  std::vector<Vec> ys;
  if (!local || boundary_distance(d, info.center) < info.support_radius) {
    try {
      ys = local ? sample_boundary(d, opt.flux_samples, opt.seed + salt, &info.center, info.support_radius)
                 : sample_boundary(d, opt.flux_samples, opt.seed + salt);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SamplingFailure) throw;
    }
  }
  double fmax = -kInf, fmin = kInf, gscale = 0.0;
  for (const auto& y : ys) {
    Vec g = f.gradient(y);
    gscale = std::max(gscale, g.norm());
    for (int i : active_set(d, y)) {
      double fl = d.pieces[i].gamma(y).dot(g);
      fmax = std::max(fmax, fl);
      fmin = std::min(fmin, fl);
    }
  }
  for (size_t j = 0; j < extra.size(); j += std::max<size_t>(1, extra.size() / 64))
    gscale = std::max(gscale, f.gradient(extra[j]).norm());
  double tol = opt.flux_tol * std::max(gscale, 1e-300);
  bool any = fmax > -kInf;
  bool zero = !any || (std::abs(fmax) <= tol && std::abs(fmin) <= tol);
  bool inH = !any || fmax <= tol, negH = !any || fmin >= -tol;
  if ((info.claims_negH && !negH && !info.claims_H) || (info.claims_H && !inH && !info.claims_negH))
    throw Error(ErrorCode::NotInH, info.id + ": sampled flux contradicts the claimed membership");
  Orientation o;
  o.max_flux = any ? std::max(std::abs(fmax), std::abs(fmin)) : 0.0;
  if (zero) o.type = RowType::Equality;
  else if (negH) o.type = RowType::Inequality;
  else if (inH) {
    o.type = RowType::Inequality;
    o.sign = -1.0;
  } else {
    throw Error(ErrorCode::NotInH, info.id + ": neither f nor -f lies in H");
  }
  return o;
}

Constraints build_constraints(const DomainSpec& d, const CoefficientField& coef, const Grid& grid,
                              const std::vector<TestFunction>& family, const ConstraintOptions& opt) {
  const size_t K = family.size(), n = grid.points.size();
  Constraints c;
  c.M = Eigen::MatrixXd::Zero(K, n);
  c.types.assign(K, RowType::Equality);
  c.ids.resize(K);
  c.scale.assign(K, 1.0);
  std::vector<std::string> errors(K);

  parallel_for(K, opt.threads, [&](size_t k) {
    const TestFunction& f = family[k];
    const auto& info = f.info();
    c.ids[k] = info.id;
    bool local = std::isfinite(info.support_radius) && info.center.size() == d.dim;
    Orientation o;
    try {
      o = orient_function(d, f, opt, grid.points, k);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotInH) throw;
      errors[k] = e.what();
      return;
    }
    c.types[k] = o.type;
    for (size_t j = 0; j < n; ++j) {
      const Vec& x = grid.points[j];
      if (local && (x - info.center).norm() >= info.support_radius) continue;
      c.M(k, j) = o.sign * apply_L(coef, f, x);
    }
    if (opt.normalize_rows) {
      double mx = c.M.row(k).cwiseAbs().maxCoeff();
      if (mx > 0) {
        c.M.row(k) /= mx;
        c.scale[k] = 1.0 / mx;
      }
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) throw Error(ErrorCode::NotInH, e);
  return c;
}

Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  if (n == 0) return v;
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    css += u[k];
    double t = (css - 1.0) / (k + 1);
    if (u[k] - t > 0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0);
}

namespace {

struct Objective {
  const Constraints& c;
  double we, wi;
  double operator()(const Eigen::VectorXd& w, Eigen::VectorXd* grad) const {
    Eigen::VectorXd r = c.M * w;
    double f = 0.0;
    for (Eigen::Index k = 0; k < r.size(); ++k) {
      if (c.types[k] == RowType::Equality) {
        f += we * r(k) * r(k);
        r(k) *= we;
      } else if (r(k) > 0) {
        f += wi * r(k) * r(k);
        r(k) *= wi;
      } else {
        r(k) = 0.0;
      }
    }
    if (grad) *grad = 2.0 * c.M.transpose() * r;
    return f;
  }
};

}  // namespace

GridMeasure solve_constraints(const Constraints& c, const Grid& grid, const SolverConfig& cfg) {
  const Eigen::Index n = static_cast<Eigen::Index>(grid.points.size());
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "empty grid");
  if (c.M.rows() > 0 && c.M.cols() != n) throw Error(ErrorCode::InvalidArgument, "constraint matrix does not match grid");
  GridMeasure gm;
  gm.points = grid.points;
  gm.volumes = grid.volumes;
  gm.types = c.types;
  gm.ids = c.ids;
  Objective F{c, cfg.eq_weight, cfg.ineq_weight};
  // start from the normalised cell volumes (uniform weights when volumes are absent)
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / n), g, gn;
  if (static_cast<Eigen::Index>(grid.volumes.size()) == n) {
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(grid.volumes.data(), n);
    if (v.minCoeff() >= 0 && v.sum() > 0) w = v / v.sum();
  }
  double f = c.M.rows() > 0 ? F(w, &g) : 0.0;
  gm.trace.push_back(f);
  if (c.M.rows() > 0 && f > 0) {
    double step = 1.0 / std::max(1e-300, c.M.squaredNorm() * 2.0 * std::max(cfg.eq_weight, cfg.ineq_weight));
    step = std::max(step, 1e-12);
    for (int it = 0; it < cfg.max_iter; ++it) {
      Eigen::VectorXd wn;
      double fn = f;
      bool accepted = false;
      for (int bt = 0; bt < 60; ++bt) {
        wn = project_simplex(w - step * g);
        fn = F(wn, &gn);
        if (fn <= f - 1e-4 * g.dot(w - wn)) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
      Eigen::VectorXd s = wn - w, y = gn - g;
      double sy = s.dot(y);
      double improvement = f - fn;
      w = wn;
      f = fn;
      g = gn;
      gm.trace.push_back(f);
      gm.iterations = it + 1;
      if (improvement < cfg.min_improvement || f == 0.0) break;
      step = sy > 0 ? std::min(1e12, s.squaredNorm() / sy) : step * 2.0;
    }
  }
  w = w.cwiseMax(0.0);
  w /= w.sum();
  gm.weights.assign(w.data(), w.data() + n);
  gm.objective = c.M.rows() > 0 ? F(w, nullptr) : 0.0;
  if (c.M.rows() > 0) {
    Eigen::VectorXd r = c.M * w;
    gm.residuals.assign(r.data(), r.data() + r.size());
  }
  gm.feasible = gm.objective <= cfg.tol;
  if (cfg.strict && !gm.feasible)
    throw Error(ErrorCode::Infeasible, "objective " + std::to_string(gm.objective) + " above tolerance");
  return gm;
}

GridMeasure solve_stationary(const DomainSpec& d, const CoefficientField& coef, const SolverConfig& cfg) {
  Grid grid = make_grid(d, cfg.grid);
  Vec lo, hi;
  if (cfg.grid.kind == GridSpec::Kind::Polar) {
    Vec c = cfg.grid.center.size() == 2 ? cfg.grid.center : Vec(Vec::Zero(2));
    lo = c.array() - cfg.grid.radius;
    hi = c.array() + cfg.grid.radius;
  } else {
    lo = cfg.grid.lo.size() == d.dim ? cfg.grid.lo : d.lo;
    hi = cfg.grid.hi.size() == d.dim ? cfg.grid.hi : d.hi;
  }
  auto fam = make_solver_family(d, coef, cfg.family, &lo, &hi);
  Constraints c = build_constraints(d, coef, grid, fam, cfg.constraints);
  return solve_constraints(c, grid, cfg);
}

Measure GridMeasure::measure() const {
  Measure m;
  m.kind = Measure::Kind::Quadrature;
  m.points = points;
  m.weights = weights;
  return m;
}

nlohmann::json GridMeasure::report() const {
  int neq = 0;
  for (auto t : types) neq += t == RowType::Equality;
  return {{"points", points.size()},     {"functions", types.size()}, {"equality_rows", neq},
          {"objective", objective},      {"iterations", iterations},  {"feasible", feasible},
          {"trace_first", trace.empty() ? 0.0 : trace.front()}, {"trace_last", trace.empty() ? 0.0 : trace.back()}};
}

double l1_to_density(const GridMeasure& m, const Density& p) {
  std::vector<double> q(m.points.size());
  double tot = 0.0;
  for (size_t j = 0; j < q.size(); ++j) tot += q[j] = p.value(m.points[j]) * m.volumes[j];
  if (!(tot > 0)) throw Error(ErrorCode::ZeroMass, "density has no mass on the grid");
  double l1 = 0.0;
  for (size_t j = 0; j < q.size(); ++j) l1 += std::abs(m.weights[j] - q[j] / tot);
  return l1;
}

ResidualReport residual_report(const GridMeasure& m, const CoefficientField& coef, const DomainSpec& d,
                               const std::vector<TestFunction>& holdout, const ConstraintOptions& opt) {
  ResidualReport rep;
  if (holdout.empty()) return rep;
  Grid g;
  g.points = m.points;
  g.volumes = m.volumes;
  ConstraintOptions o = opt;
  o.normalize_rows = false;
  Constraints c = build_constraints(d, coef, g, holdout, o);
  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(m.weights.data(), m.weights.size());
  Eigen::VectorXd r = c.M * w;
  for (size_t k = 0; k < holdout.size(); ++k) {
    WeakResidual e;
    e.id = c.ids[k];
    e.value = r(k);
    rep.entries.push_back(e);
    rep.types.push_back(c.types[k]);
    double v = c.types[k] == RowType::Equality ? std::abs(r(k)) : std::max(0.0, r(k));
    rep.max_violation = std::max(rep.max_violation, v);
  }
  return rep;
}

}  // namespace refdiff
