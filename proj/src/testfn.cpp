#include "refdiff/testfn.hpp"

#include <algorithm>
#include <cmath>

namespace refdiff {

namespace {

class AffineImpl : public TestFunctionImpl {
 public:
  AffineImpl(std::shared_ptr<const TestFunctionImpl> base, double a, double c) : base_(std::move(base)), a_(a), c_(c) {}
  Jet jet(const Vec& y, int order) const override {
    Jet j = base_->jet(y, order);
    j.value = a_ * j.value + c_;
    if (order >= 1) j.grad *= a_;
    if (order >= 2) j.hess *= a_;
    return j;
  }

 private:
  std::shared_ptr<const TestFunctionImpl> base_;
  double a_, c_;
};

class ConstantImpl : public TestFunctionImpl {
 public:
  ConstantImpl(int dim, double c) : dim_(dim), c_(c) {}
  Jet jet(const Vec&, int order) const override {
    Jet j;
    j.value = c_;
    if (order >= 1) j.grad = Vec::Zero(dim_);
    if (order >= 2) j.hess = Mat::Zero(dim_, dim_);
    return j;
  }

 private:
  int dim_;
  double c_;
};

class LambdaImpl : public TestFunctionImpl {
 public:
  LambdaImpl(std::function<double(const Vec&)> f, std::function<Vec(const Vec&)> g, std::function<Mat(const Vec&)> h)
      : f_(std::move(f)), g_(std::move(g)), h_(std::move(h)) {}
  Jet jet(const Vec& y, int order) const override {
    Jet j;
    j.value = f_(y);
    if (order >= 1) j.grad = g_(y);
    if (order >= 2) j.hess = h_(y);
    return j;
  }

 private:
  std::function<double(const Vec&)> f_;
  std::function<Vec(const Vec&)> g_;
  std::function<Mat(const Vec&)> h_;
};

Jet zero_jet(int dim, int order, double value = 0.0) {
  Jet j;
  j.value = value;
  if (order >= 1) j.grad = Vec::Zero(dim);
  if (order >= 2) j.hess = Mat::Zero(dim, dim);
  return j;
}

class InteriorBumpImpl : public TestFunctionImpl {
 public:
  InteriorBumpImpl(Vec x, double r) : x_(std::move(x)), r_(r), xi_(Cutoff::Kind::Xi, 0.5, 1.0) {}
  Jet jet(const Vec& y, int order) const override {
    const int J = static_cast<int>(y.size());
    Vec u = y - x_;
    double z = u.squaredNorm() / r_;
    if (z >= 1.0) return zero_jet(J, order);
    Jet j;
    j.value = xi_.value(z);
    if (order >= 1) j.grad = (2.0 * xi_.d1(z) / r_) * u;
    if (order >= 2) {
      j.hess = (4.0 * xi_.d2(z) / (r_ * r_)) * (u * u.transpose());
      j.hess.diagonal().array() += 2.0 * xi_.d1(z) / r_;
    }
    return j;
  }

 private:
  Vec x_;
  double r_;
  Cutoff xi_;
};

class RidgeImpl : public TestFunctionImpl {
 public:
  // g(y) = prof(<v, y - x>) on |y - x| < radius, constant `outside` beyond
  RidgeImpl(Vec x, Vec v, std::shared_ptr<const Profile1D> prof, double radius, double outside)
      : x_(std::move(x)), v_(std::move(v)), prof_(std::move(prof)), radius_(radius), outside_(outside) {}
  Jet jet(const Vec& y, int order) const override {
    const int J = static_cast<int>(y.size());
    Vec u = y - x_;
    if (u.norm() >= radius_) return zero_jet(J, order, outside_);
    double h = v_.dot(u);
    Jet j;
    j.value = prof_->value(h);
    if (order >= 1) j.grad = prof_->d1(h) * v_;
    if (order >= 2) j.hess = prof_->d2(h) * (v_ * v_.transpose());
    return j;
  }

 private:
  Vec x_, v_;
  std::shared_ptr<const Profile1D> prof_;
  double radius_, outside_;
};

class VRampProfile : public Profile1D {
 public:
  // s = (2/κ)·max(0, r - h)/r fed into the increasing ramp on [0, 2]
  VRampProfile(double r, double kappa) : r_(r), k_(kappa), ramp_(Cutoff::Kind::Ramp, 0.0, 2.0) {}
  double value(double h) const override { return ramp_.value(arg(h)); }
  double d1(double h) const override { return ramp_.d1(arg(h)) * (-2.0 / (k_ * r_)); }
  double d2(double h) const override {
    double f = 2.0 / (k_ * r_);
    return ramp_.d2(arg(h)) * f * f;
  }

 private:
  double arg(double h) const { return (2.0 / k_) * std::max(0.0, r_ - h) / r_; }
  double r_, k_;
  Cutoff ramp_;
};

double interior_clearance(const DomainSpec& d, const Vec& x) {
  double m = kInf;
  for (const auto& p : d.pieces) m = std::min(m, p.distance(x));
  return m;
}

}  // namespace

TestFunction TestFunction::affine(double a, double c) const {
  TestFunctionInfo inf = info_;
  inf.id = info_.id.empty() ? "" : (a == -1.0 && c == 0.0 ? "-" + info_.id : info_.id + "*");
  if (a > 0) {
    inf.claims_H = info_.claims_H;
    inf.claims_negH = info_.claims_negH;
  } else if (a < 0) {
    inf.claims_H = info_.claims_negH;
    inf.claims_negH = info_.claims_H;
  } else {
    inf.claims_H = inf.claims_negH = true;
  }
  inf.outside_value = a * info_.outside_value + c;
  inf.bound_A = std::abs(a) * info_.bound_A;
  return TestFunction(std::make_shared<AffineImpl>(impl_, a, c), inf);
}

TestFunction constant_function(int dim, double c) {
  TestFunctionInfo info;
  info.kind = "constant";
  info.id = "const";
  info.center = Vec::Zero(dim);
  info.support_radius = 0.0;
  info.claims_H = info.claims_negH = true;
  info.outside_value = c;
  info.v_constant_radius = kInf;
  return TestFunction(std::make_shared<ConstantImpl>(dim, c), info);
}

TestFunction lambda_function(std::string id, int dim, std::function<double(const Vec&)> f,
                             std::function<Vec(const Vec&)> grad, std::function<Mat(const Vec&)> hess,
                             TestFunctionInfo info) {
  if (info.kind.empty()) info.kind = "lambda";
  info.id = std::move(id);
  if (info.center.size() == 0) info.center = Vec::Zero(dim);
  return TestFunction(std::make_shared<LambdaImpl>(std::move(f), std::move(grad), std::move(hess)), info);
}

std::string function_id(const std::string& kind, const Vec& x, double r) {
  std::string s = kind + "(";
  char buf[32];
  for (int k = 0; k < x.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%s%.6g", k ? "," : "", x(k));
    s += buf;
  }
  std::snprintf(buf, sizeof buf, ";%.6g)", r);
  return s + buf;
}

TestFunction interior_bump(const DomainSpec& d, const Vec& x, double r) {
  if (!(r > 0)) throw Error(ErrorCode::InvalidArgument, "interior_bump needs r > 0");
  double clr = interior_clearance(d, x);
  double s = std::sqrt(r);
  if (!(s < clr)) throw Error(ErrorCode::TooClose, "sqrt(r) must be below dist(x, boundary)");
  TestFunctionInfo info;
  info.kind = "interior_bump";
  info.id = function_id(info.kind, x, r);
  info.center = x;
  info.support_radius = s;
  info.claims_H = info.claims_negH = true;
  info.outside_value = 0.0;
  info.v_constant_radius = std::max(0.0, distance_to_V(d, x) - s);
  Cutoff xi(Cutoff::Kind::Xi, 0.5, 1.0);
  const int J = d.dim;
  info.bound_A = std::max({1.0, 2.0 * xi.max_d1(), (4.0 * xi.max_d2() + 2.0 * xi.max_d1()) * J});
  info.bound_r = s;
  return TestFunction(std::make_shared<InteriorBumpImpl>(x, r), info);
}

TestFunction v_bump(const DomainSpec& d, const VPoint& v, double r) {
  v.validate();
  double rmax = v.r / v.c2;
  if (!(r > 0 && r < rmax)) throw Error(ErrorCode::RadiusTooLarge, "v_bump needs r in (0, r_x/c2)");
  for (const auto& w : d.V) {
    double dist = (w.x - v.x).norm();
    if (dist > 1e-12 && v.c2 * r >= dist) throw Error(ErrorCode::RadiusTooLarge, "support reaches another point of V");
  }
  double c1 = v.c1 < 1.0 ? v.c1 : 0.5;
  double kappa = 1.0 - c1;
  TestFunctionInfo info;
  info.kind = "v_bump";
  info.id = function_id(info.kind, v.x, r);
  info.center = v.x;
  info.support_radius = v.c2 * r;
  info.claims_H = true;
  info.claims_negH = false;
  info.outside_value = 0.0;
  info.v_constant_radius = c1 * r;
  const int J = d.dim;
  info.bound_A = std::max({1.0, 1.875 / kappa, (10.0 / std::sqrt(3.0)) * J / (kappa * kappa)});
  info.bound_r = r;
  auto prof = std::make_shared<VRampProfile>(r, kappa);
  // the ridge radius is the declared support; values beyond it are already 0 on Ḡ
  return TestFunction(std::make_shared<RidgeImpl>(v.x, v.v, prof, kInf, 0.0), info);
}

TestFunction g_delta_eps(const DomainSpec& d, const VPoint& v, double delta, double eps,
                         const CoefficientField* coef, double w, GDeltaEpsInfo* out) {
  v.validate();
  auto prof = std::make_shared<VProfile>(v_profile(delta, eps, w));
  double eps0 = v.r;
  for (const auto& u : d.V) {
    double dist = (u.x - v.x).norm();
    if (dist > 1e-12) eps0 = std::min(eps0, dist);
  }
  if (!(eps + std::sqrt(eps) < v.alpha * eps0))
    throw Error(ErrorCode::BadParameters, "need eps + sqrt(eps) < alpha * eps0");
  double reach = (eps + std::sqrt(eps)) / v.alpha;  // h >= eps + sqrt(eps) beyond this radius
  TestFunctionInfo info;
  info.kind = "g_delta_eps";
  info.id = function_id("g_delta_eps[" + std::to_string(delta) + "]", v.x, eps);
  info.center = v.x;
  info.support_radius = reach;
  info.claims_H = false;
  info.claims_negH = true;
  info.outside_value = prof->final_value();
  info.v_constant_radius = std::max(0.0, delta - prof->width());
  info.bound_A = prof->final_value();
  info.bound_r = 1.0;
  if (out) {
    out->sup_bound = prof->final_value();
    out->grad_bound = 2.0 * eps;
    double vav = 1.0;
    if (coef) {
      Mat a = coef->diffusion(v.x);
      vav = v.v.dot(a * v.v);
    }
    out->second_order_lower = 2.0 * std::min(v.alpha, vav);
    out->kappa = prof->kappa();
    out->band_lo = delta + 2.0 * std::sqrt(delta);
    out->band_hi = eps / 2.0;
  }
  double radius = std::isfinite(v.r) ? v.r : kInf;
  return TestFunction(std::make_shared<RidgeImpl>(v.x, v.v, prof, radius, prof->final_value()), info);
}

// ---------------------------------------------------------------------------

nlohmann::json HReport::to_json() const {
  return {{"pass", pass},
          {"worst_flux", worst_flux},
          {"worst_v_variation", worst_v_variation},
          {"worst_outside", worst_outside},
          {"boundary_samples", boundary_samples}};
}

HReport check_H(const TestFunction& f, const DomainSpec& d, int samples, std::uint64_t seed, double tol) {
  HReport rep;
  auto pts = sample_boundary(d, samples, seed);
  for (const auto& v : d.V) pts.push_back(v.x);
  for (const auto& y : pts) {
    std::vector<int> act;
    try {
      act = active_set(d, y);
    } catch (const Error&) {
      continue;
    }
    if (distance_to_V(d, y) < 1e-12) continue;  // flux is irrelevant on 𝒱 itself
    Vec g = f.gradient(y);
    for (int i : act) rep.worst_flux = std::max(rep.worst_flux, d.pieces[i].gamma(y).dot(g));
    ++rep.boundary_samples;
  }
  if (rep.worst_flux > tol) rep.pass = false;

  const auto& info = f.info();
  for (size_t k = 0; k < d.V.size(); ++k) {
    const Vec& c = d.V[k].x;
    double rad = info.v_constant_radius > 0 ? std::min(info.v_constant_radius, 1.0) * 0.999 : 1e-6;
    std::vector<Vec> near;
    try {
      near = sample_domain(d, std::max(8, samples / 20), seed + 17 + k, &c, rad);
    } catch (const Error&) {
    }
    auto b = sample_boundary(d, std::max(8, samples / 20), seed + 31 + k, &c, rad);
    near.insert(near.end(), b.begin(), b.end());
    double f0 = f.value(c);
    for (const auto& y : near) {
      Jet j = f.jet(y, 1);
      rep.worst_v_variation = std::max(rep.worst_v_variation, std::abs(j.value - f0) + j.grad.norm());
    }
  }
  if (rep.worst_v_variation > std::max(tol, 1e-12)) rep.pass = false;

  if (std::isfinite(info.support_radius) && info.center.size() == d.dim) {
    std::vector<Vec> far;
    try {
      far = sample_domain(d, std::max(16, samples / 4), seed + 101);
    } catch (const Error&) {
    }
    for (const auto& y : far) {
      if ((y - info.center).norm() <= info.support_radius * (1 + 1e-12)) continue;
      rep.worst_outside = std::max(rep.worst_outside, std::abs(f.value(y) - info.outside_value));
    }
    if (rep.worst_outside > 1e-12 * (1.0 + std::abs(info.outside_value))) rep.pass = false;
  }
  return rep;
}

}  // namespace refdiff
