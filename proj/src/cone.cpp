#include "refdiff/linalg.hpp"
#include "refdiff/rng.hpp"
#include "refdiff/testfn.hpp"

#include <algorithm>
#include <cmath>

namespace refdiff {

namespace {

Vec rotate2(const Vec& u, double a) {
  Vec r(2);
  r << std::cos(a) * u(0) - std::sin(a) * u(1), std::sin(a) * u(0) + std::cos(a) * u(1);
  return r;
}

double cross2(const Vec& a, const Vec& b) { return a(0) * b(1) - a(1) * b(0); }

double ray_distance(const Vec& z, const Vec& u, Vec* nearest) {
  double a = z.dot(u);
  if (a <= 0) {
    *nearest = Vec::Zero(z.size());
    return z.norm();
  }
  *nearest = a * u;
  return (z - *nearest).norm();
}

// max over the simplex of min_i <n_i, Σ μ_k g_k>
double separation_margin(const std::vector<Vec>& normals, const std::vector<Vec>& gens) {
  Eigen::MatrixXd M(gens.size(), normals.size());
  for (size_t k = 0; k < gens.size(); ++k)
    for (size_t i = 0; i < normals.size(); ++i) M(k, i) = normals[i].dot(gens[k]);
  return linalg::simplex_margin(M).t;
}

std::vector<Vec> fattened_generators(const std::vector<Vec>& base, double delta) {
  std::vector<Vec> out;
  const int J = static_cast<int>(base[0].size());
  for (const auto& b : base)
    for (int j = 0; j < J; ++j)
      for (double sgn : {-1.0, 1.0}) out.push_back(b + sgn * delta * unit(J, j));
  return out;
}

}  // namespace

double ConeModel::distance(const Vec& z, Vec* grad) const {
  switch (kind) {
    case Kind::Ray: {
      double a = -z.dot(axis);
      if (a <= 0) {
        if (grad) *grad = Vec::Zero(dim);
        return 0.0;
      }
      if (grad) *grad = -axis;
      return a;
    }
    case Kind::Circular: {
      double a = z.dot(axis);
      Vec radial = z - a * axis;
      double rho = radial.norm();
      double phi = std::atan2(rho, a);
      if (phi <= half_angle) {
        if (grad) *grad = Vec::Zero(dim);
        return 0.0;
      }
      if (phi >= half_angle + M_PI / 2) {
        double n = z.norm();
        if (grad) *grad = z / n;
        return n;
      }
      double cs = std::cos(half_angle), sn = std::sin(half_angle);
      if (grad) *grad = cs * (radial / rho) - sn * axis;
      return rho * cs - a * sn;
    }
    case Kind::Sector: {
      if (cross2(ray_lo, z) >= 0 && cross2(z, ray_hi) >= 0) {
        if (grad) *grad = Vec::Zero(dim);
        return 0.0;
      }
      Vec p1, p2;
      double d1 = ray_distance(z, ray_lo, &p1), d2 = ray_distance(z, ray_hi, &p2);
      const Vec& p = d1 <= d2 ? p1 : p2;
      double dd = std::min(d1, d2);
      if (grad) *grad = dd > 0 ? Vec((z - p) / dd) : Vec(Vec::Zero(dim));
      return dd;
    }
    case Kind::Polyhedral: {
      Vec p = linalg::project_cone(generators, z);
      Vec q = z - p;
      double dd = q.norm();
      double scale = 1e-13 * (1.0 + z.norm());
      if (dd <= scale) {
        if (grad) *grad = Vec::Zero(dim);
        return 0.0;
      }
      if (grad) *grad = q / dd;
      return dd;
    }
  }
  return 0.0;
}

double ConeModel::inradius(const Vec& p) const {
  switch (kind) {
    case Kind::Ray:
      return p.dot(axis) > 0 ? p.norm() : -1.0;
    case Kind::Circular: {
      double ang = std::acos(std::clamp(p.dot(axis) / p.norm(), -1.0, 1.0));
      return std::sin(std::clamp(half_angle - ang, -M_PI / 2, M_PI / 2));
    }
    case Kind::Sector: {
      double a_lo = std::atan2(cross2(ray_lo, p), ray_lo.dot(p));
      double a_hi = std::atan2(cross2(p, ray_hi), ray_hi.dot(p));
      return std::sin(std::clamp(std::min(a_lo, a_hi), -M_PI / 2, M_PI / 2));
    }
    case Kind::Polyhedral: {
      double best = -kInf;
      double r0 = delta / std::sqrt(static_cast<double>(dim));
      for (const auto& b : base) best = std::max(best, r0 - (p / p.norm() - b).norm());
      return best;
    }
  }
  return 0.0;
}

ConeModel make_cone(const std::vector<Vec>& gammas, double delta) {
  if (gammas.empty()) throw Error(ErrorCode::InvalidArgument, "cone needs generators");
  ConeModel c;
  c.dim = static_cast<int>(gammas[0].size());
  for (const auto& g : gammas) {
    double n = g.norm();
    if (!(n > 0)) throw Error(ErrorCode::InvalidArgument, "zero generator");
    c.base.push_back(-g / n);
  }
  c.delta = delta;
  if (c.dim == 1) {
    c.kind = ConeModel::Kind::Ray;
    c.axis = c.base[0];
    return c;
  }
  if (c.base.size() == 1) {
    c.kind = ConeModel::Kind::Circular;
    c.axis = c.base[0];
    c.half_angle = std::asin(std::clamp(delta, 0.0, 0.99));
    return c;
  }
  if (c.dim == 2 && c.base.size() == 2) {
    c.kind = ConeModel::Kind::Sector;
    Vec lo = c.base[0], hi = c.base[1];
    if (cross2(lo, hi) < 0) std::swap(lo, hi);
    double psi = std::asin(std::clamp(delta, 0.0, 0.99));
    c.ray_lo = rotate2(lo, -psi);
    c.ray_hi = rotate2(hi, psi);
    return c;
  }
  c.kind = ConeModel::Kind::Polyhedral;
  auto gens = fattened_generators(c.base, delta);
  c.generators.resize(c.dim, static_cast<Eigen::Index>(gens.size()));
  for (size_t k = 0; k < gens.size(); ++k) c.generators.col(static_cast<Eigen::Index>(k)) = gens[k];
  return c;
}

// ---------------------------------------------------------------------------

MollifiedConeDistance::MollifiedConeDistance(ConeModel cone, double eta, double lambda, double eps)
    : cone_(std::move(cone)), eta_(eta), lambda_(lambda), eps_(eps) {
  if (!(eta > 0 && eta < lambda && eps > 0)) throw Error(ErrorCode::BandEmpty, "need 0 < eta < lambda, eps > 0");
  w_ = std::min({eta / 4.0, eps / 2.0, eta * std::sqrt(eps) / 2.0});
  static const double node[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
  static const double wt[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
  const int J = cone_.dim;
  int total = 1;
  for (int k = 0; k < J; ++k) total *= 4;
  double sum = 0;
  for (int idx = 0; idx < total; ++idx) {
    Vec s(J);
    double w = 1.0;
    int t = idx;
    for (int k = 0; k < J; ++k) {
      s(k) = node[t % 4];
      w *= wt[t % 4];
      t /= 4;
    }
    double rr = s.squaredNorm();
    if (rr >= 1.0) continue;
    double kw = (1.0 - rr) * (1.0 - rr) * (1.0 - rr);
    offsets_.push_back(w_ * s);
    weights_.push_back(w * kw);
    sum += w * kw;
  }
  for (auto& w : weights_) w /= sum;
  // property 3 on 𝒦 = the base generators of K_x
  theta_ = kInf;
  for (const auto& b : cone_.base) theta_ = std::min(theta_, cone_.inradius(b));
}

double MollifiedConeDistance::value_grad(const Vec& z, Vec* grad) const {
  double v = 0.0;
  if (grad) *grad = Vec::Zero(z.size());
  Vec g;
  for (size_t k = 0; k < offsets_.size(); ++k) {
    v += weights_[k] * cone_.distance(z - offsets_[k], grad ? &g : nullptr);
    if (grad) *grad += weights_[k] * g;
  }
  return v;
}

double MollifiedConeDistance::value(const Vec& z) const { return value_grad(z, nullptr); }

Vec MollifiedConeDistance::gradient(const Vec& z) const {
  Vec g;
  value_grad(z, &g);
  return g;
}

Mat MollifiedConeDistance::hessian(const Vec& z) const {
  const int J = static_cast<int>(z.size());
  double hs = w_ / 8.0;
  Mat H(J, J);
  for (int k = 0; k < J; ++k) {
    Vec e = unit(J, k) * hs;
    H.col(k) = (gradient(z + e) - gradient(z - e)) / (2.0 * hs);
  }
  return 0.5 * (H + H.transpose());
}

MollifiedConeDistance mollified_cone_distance(const ConeModel& cone, double eta, double lambda, double eps) {
  return MollifiedConeDistance(cone, eta, lambda, eps);
}

// ---------------------------------------------------------------------------

double boundary_clearance(const DomainSpec& d, const Vec& x, const std::vector<int>& active) {
  double c = distance_to_V(d, x);
  for (int j = 0; j < d.num_pieces(); ++j) {
    if (std::find(active.begin(), active.end(), j) != active.end()) continue;
    c = std::min(c, std::abs(d.pieces[j].distance(x)));
  }
  return c;
}

namespace {

bool piece_convex(const BoundaryPiece& p) {
  return p.is_half_space() || (p.params().is_object() && p.params().value("convex", false));
}

}  // namespace

BumpShape make_bump_shape(const DomainSpec& d, const Vec& x) {
  BumpShape s;
  s.pieces = active_set(d, x);
  if (distance_to_V(d, x) <= d.active_tol(x)) throw Error(ErrorCode::NotInU, "boundary bump requested on V");
  const int J = d.dim;
  std::vector<Vec> normals, gammas;
  for (int i : s.pieces) {
    normals.push_back(d.pieces[i].normal(x));
    gammas.push_back(d.pieces[i].gamma(x));
  }
  auto iu = in_U_vectors(normals, gammas);
  if (!iu.in) throw Error(ErrorCode::NotInU, "x is not in U");
  std::vector<Vec> base;
  for (const auto& g : gammas) base.push_back(-g / g.norm());
  double t0 = separation_margin(normals, base);
  if (!(t0 < 0)) throw Error(ErrorCode::NotInU, "separation LP has no margin");

  ConeModel cone;
  double tstar = t0, dmax = 1.0;
  if (J == 1) {
    cone = make_cone(gammas, 0.0);
  } else if (base.size() == 1) {
    double A = std::acos(std::clamp(normals[0].dot(base[0]), -1.0, 1.0));
    double psi = A - std::acos(t0 / 2.0);
    psi = std::min(psi, std::asin(0.99));
    cone = make_cone(gammas, std::sin(psi));
    tstar = std::cos(A - psi);
  } else {
    // largest fattening keeping at least half the margin, by bisection
    auto margin_at = [&](double delta) {
      ConeModel c = make_cone(gammas, delta);
      std::vector<Vec> gens;
      if (c.kind == ConeModel::Kind::Sector) {
        gens = {c.ray_lo, c.ray_hi};
      } else {
        for (Eigen::Index k = 0; k < c.generators.cols(); ++k) gens.push_back(c.generators.col(k));
      }
      return separation_margin(normals, gens);
    };
    double lo = 0.0, hi = 0.5;
    if (margin_at(hi) <= t0 / 2) {
      lo = hi;
    } else {
      for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        if (margin_at(mid) <= t0 / 2) lo = mid;
        else hi = mid;
      }
    }
    if (!(lo > 0)) throw Error(ErrorCode::NotInU, "no admissible cone fattening");
    cone = make_cone(gammas, lo);
    tstar = margin_at(lo);
    if (cone.kind == ConeModel::Kind::Polyhedral) dmax = std::sqrt(1.0 + lo * lo);
  }
  s.delta = cone.delta;
  s.beta = -tstar / (2.0 * dmax) * (1.0 - 1e-9);

  bool curved = false, convex = true;
  for (int i : s.pieces) {
    curved = curved || !d.pieces[i].is_half_space();
    convex = convex && piece_convex(d.pieces[i]);
  }

  // R_x: sampled check that x + t·K_{x,δ} leaves Ḡ for t in (0, R]
  s.R = 0.9;
  if (!convex) {
    std::vector<Vec> dirs = cone.base;
    CounterRng rng(7, 0, 0, 0);
    for (int k = 0; k < 64; ++k) {
      Vec c = Vec::Zero(J);
      for (const auto& b : cone.base) c += rng.uniform() * b;
      Vec jitter = rng.normal_vec(J) * (0.5 * cone.delta);
      c = c / c.norm() + jitter;
      if (cone.distance(c) <= 1e-12) dirs.push_back(c / c.norm());
    }
    auto ok = [&](double R) {
      for (const auto& u : dirs)
        for (int k = 1; k <= 64; ++k) {
          double t = R * k / 64.0;
          if (min_piece_value(d, Vec(x + t * u)) >= 0) return false;
        }
      return true;
    };
    double lo = 0.0, hi = 0.9;
    if (ok(hi)) {
      lo = hi;
    } else {
      for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        if (ok(mid)) lo = mid;
        else hi = mid;
      }
    }
    if (!(lo > 0)) throw Error(ErrorCode::NotInU, "cannot certify the truncated cone");
    s.R = lo;
  }
  s.exact_support = convex;

  s.lambda = 0.9 / (2.5 * (1.0 + 1.0 / (2.0 * s.beta)));
  s.eta = s.lambda / 2.0;
  s.eps = std::min(s.lambda / 12.0, s.eta / 2.0);
  s.ell = MollifiedConeDistance(cone, s.eta, s.lambda, s.eps);
  Vec q = Vec::Zero(J);
  for (const auto& b : cone.base) q += b;
  s.q = q / q.norm();
  s.shift = s.lambda * (s.R / 2.0) * s.q;
  double w = s.ell.width();
  s.core_ratio = 1.25 * s.lambda - w;
  s.half_ratio = 19.0 / 12.0 * s.lambda - w;
  s.theta = s.ell.theta();

  if (curved) {
    // radius on which -γ_i(y)/|γ_i(y)| stays well inside the fattened cone
    double target = 0.5 * s.theta;
    Vec diag = d.hi - d.lo;
    double cap = std::min(boundary_clearance(d, x, s.pieces), diag.norm());
    auto pts = sample_boundary(d, 4000, 11, &x, cap);
    std::sort(pts.begin(), pts.end(), [&](const Vec& a, const Vec& b) { return (a - x).norm() < (b - x).norm(); });
    s.curvature_radius = cap;
    for (const auto& y : pts) {
      bool bad = false;
      for (int i : s.pieces) {
        if (std::abs(d.pieces[i].value(y)) > d.active_tol(y)) continue;
        Vec g = d.pieces[i].gamma(y);
        if (cone.inradius(Vec(-g / g.norm())) < target) bad = true;
      }
      if (bad) {
        s.curvature_radius = (y - x).norm();
        break;
      }
    }
    s.theta = target;
    s.ell.set_theta(target);
  }

  Cutoff zeta = cutoff(Cutoff::Kind::Zeta, {s.lambda});
  double z1 = zeta.max_d1(), z2 = zeta.max_d2();
  s.A = std::max({1.0, z1, z2 * J + z1 * static_cast<double>(J * J) * s.ell.hessian_bound()});
  return s;
}

namespace {

class BoundaryBumpImpl : public TestFunctionImpl {
 public:
  BoundaryBumpImpl(std::shared_ptr<const BumpShape> shape, Vec x, double r)
      : shape_(std::move(shape)), x_(std::move(x)), r_(r), zeta_(cutoff(Cutoff::Kind::Zeta, {shape_->lambda})) {}

  Jet jet(const Vec& y, int order) const override {
    const int J = static_cast<int>(y.size());
    Jet j;
    j.value = 0.0;
    if (order >= 1) j.grad = Vec::Zero(J);
    if (order >= 2) j.hess = Mat::Zero(J, J);
    Vec u = y - x_;
    if (u.norm() >= r_) return j;
    Vec k = u / r_ + shape_->shift;
    double w = shape_->ell.width();
    double dist = shape_->ell.cone().distance(k);
    if (dist - w >= zeta_.hi()) return j;
    if (dist + w <= zeta_.lo()) {
      j.value = 1.0;
      return j;
    }
    Vec g;
    double L = shape_->ell.value_grad(k, order >= 1 ? &g : nullptr);
    j.value = zeta_.value(L);
    if (order >= 1) j.grad = (zeta_.d1(L) / r_) * g;
    if (order >= 2) {
      double z1 = zeta_.d1(L), z2 = zeta_.d2(L);
      if (z1 != 0.0 || z2 != 0.0) {
        Mat H = shape_->ell.hessian(k);
        j.hess = (z2 * (g * g.transpose()) + z1 * H) / (r_ * r_);
      }
    }
    return j;
  }

 private:
  std::shared_ptr<const BumpShape> shape_;
  Vec x_;
  double r_;
  Cutoff zeta_;
};

}  // namespace

TestFunction boundary_bump_from_shape(std::shared_ptr<const BumpShape> shape, const Vec& x, double r) {
  TestFunctionInfo info;
  info.kind = "boundary_bump";
  info.id = function_id(info.kind, x, r);
  info.center = x;
  info.support_radius = r;
  info.claims_H = true;
  info.claims_negH = false;
  info.outside_value = 0.0;
  info.bound_A = shape->A;
  info.bound_r = r;
  return TestFunction(std::make_shared<BoundaryBumpImpl>(std::move(shape), x, r), info);
}

TestFunction boundary_bump(const DomainSpec& d, const Vec& x, double r) {
  auto shape = std::make_shared<BumpShape>(make_bump_shape(d, x));
  double rx = std::min(boundary_clearance(d, x, shape->pieces), shape->curvature_radius);
  if (!(r > 0 && r < rx)) throw Error(ErrorCode::RadiusTooLarge, "boundary bump radius must lie in (0, r_x)");
  if (!shape->exact_support) {
    // sampled continuity check: g must already vanish on Ḡ near the sphere |y - x| = r
    Cutoff zeta = cutoff(Cutoff::Kind::Zeta, {shape->lambda});
    std::vector<Vec> pts;
    try {
      pts = sample_domain(d, 400, 5, &x, r);
    } catch (const Error&) {
    }
    auto bpts = sample_boundary(d, 400, 6, &x, r);
    pts.insert(pts.end(), bpts.begin(), bpts.end());
    for (const auto& y : pts) {
      if ((y - x).norm() < 0.8 * r) continue;
      Vec k = (y - x) / r + shape->shift;
      if (shape->ell.value(k) < zeta.hi())
        throw Error(ErrorCode::RadiusTooLarge, "support of the boundary bump not certified at this radius");
    }
  }
  TestFunction f = boundary_bump_from_shape(shape, x, r);
  f.mutable_info().v_constant_radius = std::max(0.0, distance_to_V(d, x) - r);
  return f;
}

}  // namespace refdiff
