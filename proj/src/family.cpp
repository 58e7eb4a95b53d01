#include "refdiff/rng.hpp"
#include "refdiff/testfn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace refdiff {

namespace {

constexpr double kInteriorHalf = 0.8660254037844386;  // ξ > 1/2 on |y-x| < √(3/4)·s

struct Lattice {
  std::vector<int> S;
  int m = 0;
  Vec p0;
  Eigen::MatrixXd E;  // J×m orthonormal basis of the affine hull
  std::shared_ptr<const BumpShape> shape;  // null for the interior
  double core = kInteriorHalf;
  double A = 0.0;
};

struct Explicit {
  Family::Center c;
  std::shared_ptr<const BumpShape> shape;
};

Eigen::MatrixXd null_basis(const std::vector<Vec>& rows, int J) {
  if (rows.empty()) return Eigen::MatrixXd::Identity(J, J);
  Eigen::MatrixXd N(rows.size(), J);
  for (size_t i = 0; i < rows.size(); ++i) N.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(N, Eigen::ComputeFullV);
  int rank = 0;
  for (Eigen::Index k = 0; k < svd.singularValues().size(); ++k)
    if (svd.singularValues()(k) > 1e-10) ++rank;
  return svd.matrixV().rightCols(J - rank);
}

}  // namespace

struct Family::Impl {
  DomainSpec d;
  double N = 1, eps = 0.1;
  FamilyOptions opt;
  int levels = 1;
  bool lattice_mode = true;
  std::vector<Lattice> lat;
  std::vector<Explicit> expl;
  std::vector<Family::Center> vcenters;
  std::vector<VPoint> vpoints;
  std::vector<double> vradius;
  double bmax = 0, amax = 0;
  FamilyConstants consts;
  double cover_h = 0;

  double s_level(int k) const { return 0.5 * eps * std::pow(opt.q, k); }
  double D_level(int k) const { return s_level(k) / opt.kappa; }

  double clearance(const Lattice& L, const Vec& y) const {
    double c = L.S.empty() ? kInf : distance_to_V(d, y);
    for (int j = 0; j < d.num_pieces(); ++j) {
      if (std::find(L.S.begin(), L.S.end(), j) != L.S.end()) continue;
      c = std::min(c, d.pieces[j].distance(y));
    }
    return c;
  }

  // include range of level k for a lattice with core ratio c
  void range(const Lattice& L, int k, double* lo, double* hi) const {
    *lo = D_level(k);
    *hi = k == 0 ? kInf : D_level(k - 1) + L.core * (s_level(k - 1) + s_level(k));
  }

  void enumerate_lattice(const Lattice& L, int k, const Vec& y, double R,
                         const std::function<void(const Family::Center&)>& fn) const {
    const int J = d.dim;
    double s = s_level(k);
    if (L.m == 0) {
      if (k != 0) return;
      double clr = clearance(L, L.p0);
      double sv = std::min(0.5 * eps, opt.kappa * clr);
      if ((L.p0 - y).norm() < R && L.p0.norm() <= N + eps) fn({L.p0, sv, -2, 0});
      return;
    }
    double h = 1.6 * L.core * s / std::sqrt(static_cast<double>(L.m));
    Eigen::VectorXd u = L.E.transpose() * Eigen::VectorXd(y - L.p0);
    Vec foot = L.p0 + Vec(L.E * u);
    double dA = (y - foot).norm();
    if (dA >= R) return;
    double rr = std::sqrt(R * R - dA * dA);
    std::vector<long long> lo(L.m), hi(L.m), idx(L.m);
    for (int a = 0; a < L.m; ++a) {
      lo[a] = static_cast<long long>(std::floor((u(a) - rr) / h));
      hi[a] = static_cast<long long>(std::ceil((u(a) + rr) / h));
    }
    double rlo, rhi;
    range(L, k, &rlo, &rhi);
    idx = lo;
    while (true) {
      Eigen::VectorXd w(L.m);
      for (int a = 0; a < L.m; ++a) w(a) = static_cast<double>(idx[a]) * h;
      Vec x = L.p0 + Vec(L.E * w);
      if ((x - y).norm() < R && x.norm() <= N + eps) {
        double clr = clearance(L, x);
        if (clr >= rlo && clr < rhi) fn({x, s, 0, k});
      }
      int a = 0;
      while (a < L.m && ++idx[a] > hi[a]) {
        idx[a] = lo[a];
        ++a;
      }
      if (a == L.m) break;
    }
    (void)J;
  }

  // visit every center whose support could meet B_R(y) (R = 0 means containing y)
  void visit(const Vec& y, double R, const std::function<void(const Family::Center&, const Lattice*,
                                                               const BumpShape*)>& fn) const {
    for (size_t v = 0; v < vcenters.size(); ++v) {
      const auto& c = vcenters[v];
      if ((c.x - y).norm() < c.s + R) fn(c, nullptr, nullptr);
    }
    for (const auto& e : expl)
      if ((e.c.x - y).norm() < e.c.s + R) fn(e.c, nullptr, e.shape.get());
    for (size_t li = 0; li < lat.size(); ++li) {
      const Lattice& L = lat[li];
      double cy = clearance(L, y);
      for (int k = 0; k < levels; ++k) {
        double s = s_level(k);
        if (L.m == 0 && k > 0) break;
        double rlo, rhi;
        range(L, k, &rlo, &rhi);
        if (L.m > 0 && (cy + s + R <= rlo || cy - s - R >= rhi)) continue;
        enumerate_lattice(L, k, y, (L.m == 0 ? kInf : s + R), [&](const Family::Center& c0) {
          Family::Center c = c0;
          c.stratum = static_cast<int>(li);
          if ((c.x - y).norm() < c.s + R) fn(c, &L, L.shape.get());
        });
      }
    }
  }

  Jet eval(const Family::Center& c, const Lattice* L, const BumpShape* shape, const Vec& y, int order) const {
    if (c.stratum == -1) {
      for (size_t v = 0; v < vcenters.size(); ++v)
        if (vcenters[v].x == c.x) return v_bump(d, vpoints[v], vradius[v]).jet(y, order);
    }
    if (shape) {
      auto sp = std::shared_ptr<const BumpShape>(std::shared_ptr<const BumpShape>{}, shape);
      return boundary_bump_from_shape(sp, c.x, c.s).jet(y, order);
    }
    (void)L;
    // interior: ξ(|y - x|²/s²)
    Cutoff xi(Cutoff::Kind::Xi, 0.5, 1.0);
    const int J = static_cast<int>(y.size());
    Jet j;
    j.value = 0.0;
    if (order >= 1) j.grad = Vec::Zero(J);
    if (order >= 2) j.hess = Mat::Zero(J, J);
    Vec u = y - c.x;
    double r = c.s * c.s;
    double z = u.squaredNorm() / r;
    if (z >= 1.0) return j;
    j.value = xi.value(z);
    if (order >= 1) j.grad = (2.0 * xi.d1(z) / r) * u;
    if (order >= 2) {
      j.hess = (4.0 * xi.d2(z) / (r * r)) * (u * u.transpose());
      j.hess.diagonal().array() += 2.0 * xi.d1(z) / r;
    }
    return j;
  }

  TestFunction make_bump(const Family::Center& c, const BumpShape* shape) const {
    if (c.stratum == -1) {
      for (size_t v = 0; v < vcenters.size(); ++v)
        if (vcenters[v].x == c.x) return v_bump(d, vpoints[v], vradius[v]);
    }
    if (shape) {
      auto sp = std::shared_ptr<const BumpShape>(std::shared_ptr<const BumpShape>{}, shape);
      return boundary_bump_from_shape(sp, c.x, c.s);
    }
    return interior_bump(d, c.x, c.s * c.s);
  }
};

namespace {

class MemberImpl : public TestFunctionImpl {
 public:
  MemberImpl(std::shared_ptr<const Family::Impl> f, Vec z) : f_(std::move(f)), z_(std::move(z)) {}
  Jet jet(const Vec& y, int order) const override {
    const int J = static_cast<int>(y.size());
    Jet acc;
    acc.value = 0.0;
    if (order >= 1) acc.grad = Vec::Zero(J);
    if (order >= 2) acc.hess = Mat::Zero(J, J);
    f_->visit(y, 0.0, [&](const Family::Center& c, const Lattice* L, const BumpShape* shape) {
      if ((c.x - z_).norm() < f_->eps + c.s) return;
      Jet j = f_->eval(c, L, shape, y, order);
      acc.value += j.value;
      if (order >= 1) acc.grad += j.grad;
      if (order >= 2) acc.hess += j.hess;
    });
    return acc;
  }

 private:
  std::shared_ptr<const Family::Impl> f_;
  Vec z_;
};

}  // namespace

std::pair<long long, Vec> Family::cover_center(const Vec& x) const {
  const auto& f = *impl_;
  const int J = f.d.dim;
  double h = f.cover_h;
  long long M = static_cast<long long>(std::ceil((f.N + f.eps) / h)) + 2;
  std::vector<long long> base(J);
  for (int k = 0; k < J; ++k) base[k] = static_cast<long long>(std::llround(x(k) / h));
  long long best = -1;
  Vec bestz;
  int total = 1;
  for (int k = 0; k < J; ++k) total *= 3;
  for (int t = 0; t < total; ++t) {
    int q = t;
    Vec z(J);
    long long idx = 0;
    for (int k = 0; k < J; ++k) {
      long long ik = base[k] + (q % 3) - 1;
      q /= 3;
      z(k) = static_cast<double>(ik) * h;
      idx = idx * (2 * M + 1) + (ik + M);
    }
    if ((z - x).norm() < 0.5 * f.eps && (best < 0 || idx < best)) {
      best = idx;
      bestz = z;
    }
  }
  return {best, bestz};
}

TestFunction Family::member(const Vec& x) const {
  auto cz = cover_center(x);
  TestFunctionInfo info;
  info.kind = "family_member";
  info.id = "f[" + std::to_string(cz.first) + "]";
  info.center = x;
  info.support_radius = impl_->N + 2.0 * impl_->eps;
  info.claims_H = true;
  info.claims_negH = false;
  info.outside_value = 0.0;
  info.v_constant_radius = (1.0 - impl_->opt.kappa) * impl_->D_level(impl_->levels - 1);
  for (double r : impl_->vradius) info.v_constant_radius = std::min(info.v_constant_radius, 0.5 * r);
  info.bound_A = impl_->consts.C;
  return TestFunction(std::make_shared<MemberImpl>(impl_, cz.second), info);
}

std::vector<Family::Center> Family::centers_near(const Vec& y) const {
  std::vector<Center> out;
  impl_->visit(y, 0.0, [&](const Center& c, const Lattice*, const BumpShape*) { out.push_back(c); });
  return out;
}

double Family::total(const Vec& y) const {
  double s = 0;
  impl_->visit(y, 0.0, [&](const Center& c, const Lattice* L, const BumpShape* shape) {
    s += impl_->eval(c, L, shape, y, 0).value;
  });
  return s;
}

double Family::eps() const { return impl_->eps; }
double Family::N() const { return impl_->N; }
FamilyConstants Family::constants() const { return impl_->consts; }

std::vector<TestFunction> Family::bumps_near(const Vec& center, double radius, std::size_t max_count) const {
  std::vector<std::pair<double, TestFunction>> found;
  impl_->visit(center, radius, [&](const Center& c, const Lattice*, const BumpShape* shape) {
    if ((c.x - center).norm() > radius) return;
    found.push_back({-c.s, impl_->make_bump(c, shape)});
  });
  std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<TestFunction> out;
  for (auto& p : found) {
    if (out.size() >= max_count) break;
    out.push_back(p.second);
  }
  return out;
}

nlohmann::json Family::manifest() const {
  const auto& f = *impl_;
  nlohmann::json j;
  j["N"] = f.N;
  j["eps"] = f.eps;
  j["c"] = f.consts.c;
  j["C"] = f.consts.C;
  j["levels"] = f.levels;
  j["kappa"] = f.opt.kappa;
  j["q"] = f.opt.q;
  j["cover_spacing"] = f.cover_h;
  j["b_max"] = f.bmax;
  j["a_max"] = f.amax;
  nlohmann::json strata = nlohmann::json::array();
  for (const auto& L : f.lat) {
    nlohmann::json s;
    s["pieces"] = L.S;
    s["dim"] = L.m;
    s["core_ratio"] = L.core;
    s["A"] = L.A;
    if (L.shape) {
      s["delta"] = L.shape->delta;
      s["beta"] = L.shape->beta;
      s["R"] = L.shape->R;
      s["lambda"] = L.shape->lambda;
      s["eta"] = L.shape->eta;
      s["theta"] = L.shape->theta;
      s["width"] = L.shape->ell.width();
    }
    strata.push_back(s);
  }
  j["strata"] = strata;
  nlohmann::json vs = nlohmann::json::array();
  for (size_t v = 0; v < f.vcenters.size(); ++v)
    vs.push_back({{"x", std::vector<double>(f.vcenters[v].x.data(), f.vcenters[v].x.data() + f.vcenters[v].x.size())},
                  {"r", f.vradius[v]},
                  {"support", f.vcenters[v].s}});
  j["V_bumps"] = vs;
  nlohmann::json ex = nlohmann::json::array();
  for (const auto& e : f.expl)
    ex.push_back({{"x", std::vector<double>(e.c.x.data(), e.c.x.data() + e.c.x.size())}, {"r", e.c.s}});
  j["boundary_centers"] = ex;
  return j;
}

Family assemble_family(const DomainSpec& d, const CoefficientField& coef, double N, double eps, FamilyOptions opt) {
  if (!(N > 0 && eps > 0 && eps < 1)) throw Error(ErrorCode::BadParameters, "need N > 0 and 0 < eps < 1");
  if (!(opt.kappa > 0 && opt.kappa < 1 && opt.q > 0 && opt.q < 1 && opt.depth > 0))
    throw Error(ErrorCode::BadParameters, "family options out of range");
  auto f = std::make_shared<Family::Impl>();
  f->d = d;
  f->N = N;
  f->eps = eps;
  f->opt = opt;
  const int J = d.dim;
  f->levels = 1;
  while (f->D_level(f->levels - 1) > opt.depth * eps) ++f->levels;
  f->cover_h = 0.99 * eps / std::sqrt(static_cast<double>(J));

  // 𝒱 bumps
  for (const auto& v : d.V) {
    double r = eps / (2.0 * v.c2);
    r = std::min(r, 0.99 * v.r / v.c2);
    for (const auto& w : d.V) {
      double dist = (w.x - v.x).norm();
      if (dist > 1e-12) r = std::min(r, 0.49 * dist / v.c2);
    }
    f->vpoints.push_back(v);
    f->vradius.push_back(r);
    f->vcenters.push_back({v.x, v.c2 * r, -1, 0});
  }

  Cutoff xi(Cutoff::Kind::Xi, 0.5, 1.0);
  double A_int = std::max({1.0, 2.0 * xi.max_d1(), (4.0 * xi.max_d2() + 2.0 * xi.max_d1()) * J});

  Lattice interior;
  interior.m = J;
  interior.p0 = Vec::Zero(J);
  interior.E = Eigen::MatrixXd::Identity(J, J);
  interior.core = kInteriorHalf;
  interior.A = A_int;
  f->lat.push_back(interior);

  if (d.polyhedral()) {
    for (const auto& st : polyhedral_strata(d)) {
      if (st.in_V) continue;
      if (!in_U(d, st.point).in) throw Error(ErrorCode::NotInU, "stratum outside U and not in V");
      Lattice L;
      L.S = st.pieces;
      std::vector<Vec> rows;
      for (int i : st.pieces) rows.push_back(d.pieces[i].n());
      L.E = null_basis(rows, J);
      L.m = static_cast<int>(L.E.cols());
      L.p0 = st.point;
      auto shape = std::make_shared<BumpShape>(make_bump_shape(d, st.point));
      L.shape = shape;
      L.core = shape->half_ratio;
      L.A = shape->A;
      f->lat.push_back(L);
    }
  } else {
    bool cusp = d.name == "cusp";
    if (!d.bounded && !cusp) throw Error(ErrorCode::UnboundedUnsupported, "curved unbounded domain");
    for (int i = 0; i < d.num_pieces(); ++i) {
      const auto& piece = d.pieces[i];
      if (piece.is_half_space()) throw Error(ErrorCode::UnboundedUnsupported, "mixed curved/flat domains");
      if (!piece.chart()) throw Error(ErrorCode::ChartMissing, "curved piece needs a chart for the family");
      const Chart& ch = *piece.chart();
      double t = ch.t0;
      double stop_level = opt.depth * eps;
      while (t < ch.t1) {
        Vec p = ch.point(t);
        double step_len;
        std::vector<int> act;
        try {
          act = active_set(d, p);
        } catch (const Error&) {
          act.clear();
        }
        double clr = boundary_clearance(d, p, act);
        if (act.size() != 1 || clr < stop_level || p.norm() > N + eps) {
          step_len = std::max(stop_level, 0.25 * std::max(clr, 0.0));
          if (p.norm() > N + eps) step_len = std::max(step_len, 0.1 * eps);
        } else {
          auto shape = std::make_shared<BumpShape>(make_bump_shape(d, p));
          double s = std::min({0.5 * eps, opt.kappa * clr, 0.9 * shape->curvature_radius});
          f->expl.push_back({{p, s, -3, 0}, shape});
          step_len = 1.4 * shape->half_ratio * s;
        }
        double sp = ch.speed(t);
        t += step_len / std::max(sp, 1e-12);
      }
    }
  }

  // coefficient bounds on the relevant region
  {
    std::vector<Vec> pts;
    Vec c0 = Vec::Zero(J);
    try {
      pts = sample_domain(d, 2000, 3, &c0, N + 2 * eps);
    } catch (const Error&) {
    }
    auto bp = sample_boundary(d, 500, 4, &c0, N + 2 * eps);
    pts.insert(pts.end(), bp.begin(), bp.end());
    for (const auto& y : pts) {
      f->bmax = std::max(f->bmax, coef.drift(y).norm());
      f->amax = std::max(f->amax, coef.diffusion(y).cwiseAbs().maxCoeff());
    }
  }

  // C(N, ε): overlap count × per-bump bound over the finest admissible window of levels
  double C = 0;
  auto term = [&](double A, double r) { return f->bmax * A / r + 0.5 * f->amax * A / (r * r); };
  for (const auto& L : f->lat) {
    if (L.m == 0) {
      double clr = f->clearance(L, L.p0);
      C += term(L.A, std::min(0.5 * eps, opt.kappa * clr));
      continue;
    }
    double ratio = (1.0 / opt.q + L.core * (1.0 / opt.q + 1.0) + opt.kappa) / (1.0 - opt.kappa);
    int win = static_cast<int>(std::floor(std::log(ratio) / std::log(1.0 / opt.q))) + 2;
    double best = 0;
    for (int k0 = 0; k0 < f->levels; ++k0) {
      double sum = 0;
      for (int k = k0; k < std::min(f->levels, k0 + win); ++k) {
        double s = f->s_level(k);
        double h = 1.6 * L.core * s / std::sqrt(static_cast<double>(L.m));
        double n = std::pow(2.0 * s / h + 1.0, L.m);
        sum += n * term(L.A, s);
      }
      best = std::max(best, sum);
    }
    C += best;
  }
  for (size_t v = 0; v < f->vpoints.size(); ++v) {
    double c1 = f->vpoints[v].c1 < 1.0 ? f->vpoints[v].c1 : 0.5;
    double kap = 1.0 - c1;
    double A = std::max({1.0, 1.875 / kap, (10.0 / std::sqrt(3.0)) * J / (kap * kap)});
    C += term(A, f->vradius[v]);
  }
  if (!f->expl.empty()) {
    double worst = 0;
    for (const auto& e : f->expl) {
      double sum = 0;
      for (const auto& o : f->expl)
        if ((o.c.x - e.c.x).norm() < e.c.s + o.c.s) sum += term(o.shape->A, o.c.s);
      worst = std::max(worst, sum);
    }
    C += worst;
  }
  f->consts.c = 0.5;
  f->consts.C = C;
  return Family(f);
}

}  // namespace refdiff
