#include "refdiff/model.hpp"

#include "refdiff/linalg.hpp"
#include "refdiff/rng.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace refdiff {

const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptyActiveSet: return "EmptyActiveSet";
    case ErrorCode::LPFailure: return "LPFailure";
    case ErrorCode::SamplingFailure: return "SamplingFailure";
    case ErrorCode::ParallelNormals: return "ParallelNormals";
    case ErrorCode::ChartMissing: return "ChartMissing";
    case ErrorCode::BadThresholds: return "BadThresholds";
    case ErrorCode::TooClose: return "TooClose";
    case ErrorCode::BadParameters: return "BadParameters";
    case ErrorCode::RadiusTooLarge: return "RadiusTooLarge";
    case ErrorCode::QPFailure: return "QPFailure";
    case ErrorCode::BandEmpty: return "BandEmpty";
    case ErrorCode::NotInU: return "NotInU";
    case ErrorCode::UnboundedUnsupported: return "UnboundedUnsupported";
    case ErrorCode::MissingDerivatives: return "MissingDerivatives";
    case ErrorCode::OffFace: return "OffFace";
    case ErrorCode::OffEdge: return "OffEdge";
    case ErrorCode::NotInH: return "NotInH";
    case ErrorCode::ZeroMass: return "ZeroMass";
    case ErrorCode::DivergentMass: return "DivergentMass";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::IllPosedParameters: return "IllPosedParameters";
    case ErrorCode::NoClosedForm: return "NoClosedForm";
  }
  return "Unknown";
}

// ---------------------------------------------------------------------------
// BoundaryPiece

BoundaryPiece BoundaryPiece::half_space(const Vec& normal, double offset, const Vec& gamma) {
  if (normal.size() != gamma.size()) throw Error(ErrorCode::InvalidArgument, "normal/gamma size mismatch");
  if (std::abs(normal.norm() - 1.0) > 1e-12) throw Error(ErrorCode::InvalidArgument, "half-space normal is not unit");
  double ng = normal.dot(gamma);
  if (!(ng > 0.0)) throw Error(ErrorCode::InvalidArgument, "reflection direction must satisfy <n, gamma> > 0");
  BoundaryPiece p;
  p.kind_ = Kind::HalfSpace;
  p.n_ = normal;
  p.c_ = offset;
  p.g_ = gamma / ng;
  return p;
}

BoundaryPiece BoundaryPiece::smooth(std::string ref, nlohmann::json params, ScalarField phi, VectorField grad,
                                    VectorField gamma, ScalarField signed_distance, std::optional<Chart> chart) {
  BoundaryPiece p;
  p.kind_ = Kind::Smooth;
  p.ref_ = std::move(ref);
  p.params_ = std::move(params);
  p.phi_ = std::move(phi);
  p.grad_ = std::move(grad);
  p.gamma_ = std::move(gamma);
  p.sdist_ = std::move(signed_distance);
  p.chart_ = std::move(chart);
  return p;
}

double BoundaryPiece::value(const Vec& x) const {
  if (kind_ == Kind::HalfSpace) return n_.dot(x) - c_;
  return phi_(x);
}

Vec BoundaryPiece::grad(const Vec& x) const {
  if (kind_ == Kind::HalfSpace) return n_;
  return grad_(x);
}

Vec BoundaryPiece::normal(const Vec& x) const {
  if (kind_ == Kind::HalfSpace) return n_;
  Vec g = grad_(x);
  double nrm = g.norm();
  if (nrm == 0.0) throw Error(ErrorCode::InvalidArgument, "vanishing gradient of a smooth piece");
  return g / nrm;
}

Vec BoundaryPiece::gamma(const Vec& x) const {
  if (kind_ == Kind::HalfSpace) return g_;
  Vec g = gamma_(x);
  double ng = normal(x).dot(g);
  if (!(ng > 0.0)) throw Error(ErrorCode::InvalidArgument, "reflection field has <n, gamma> <= 0");
  return g / ng;
}

double BoundaryPiece::distance(const Vec& x) const {
  if (kind_ == Kind::HalfSpace) return n_.dot(x) - c_;
  if (sdist_) return sdist_(x);
  return phi_(x) / grad_(x).norm();
}

Vec BoundaryPiece::project(const Vec& y) const {
  if (kind_ == Kind::HalfSpace) return y - (n_.dot(y) - c_) * n_;
  Vec x = y;
  for (int it = 0; it < 60; ++it) {
    double f = phi_(x);
    Vec g = grad_(x);
    double g2 = g.squaredNorm();
    if (g2 == 0.0) break;
    Vec step = (f / g2) * g;
    x -= step;
    if (step.norm() < 1e-15 * (1.0 + x.norm())) break;
  }
  return x;
}

// ---------------------------------------------------------------------------

void VPoint::validate() const {
  if (x.size() == 0 || v.size() != x.size()) throw Error(ErrorCode::InvalidArgument, "VPoint dimension mismatch");
  if (std::abs(v.norm() - 1.0) > 1e-12) throw Error(ErrorCode::InvalidArgument, "VPoint direction must be unit");
  if (!(r > 0.0)) throw Error(ErrorCode::InvalidArgument, "VPoint radius must be positive");
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "VPoint alpha must be positive");
  // c1 = 1 is admitted (the GPS constants are stated that way)
  if (!(c1 > 0.0 && c1 <= 1.0 && c2 > 1.0)) throw Error(ErrorCode::InvalidArgument, "VPoint needs 0 < c1 <= 1 < c2");
}

bool DomainSpec::polyhedral() const {
  return std::all_of(pieces.begin(), pieces.end(), [](const BoundaryPiece& p) { return p.is_half_space(); });
}

void DomainSpec::validate() const {
  if (dim <= 0 || dim > kMaxDim) throw Error(ErrorCode::InvalidArgument, "unsupported dimension");
  if (pieces.empty()) throw Error(ErrorCode::InvalidArgument, "domain has no boundary pieces");
  if (lo.size() != dim || hi.size() != dim) throw Error(ErrorCode::InvalidArgument, "bounding box dimension");
  for (const auto& v : V) {
    v.validate();
    if (contains(*this, v.x).location != Location::Boundary)
      throw Error(ErrorCode::InvalidArgument, "declared V point is not on the boundary");
  }
}

CoefficientField CoefficientField::constant_field(const Vec& b, const Mat& sigma) {
  CoefficientField c;
  c.dim = static_cast<int>(b.size());
  c.noise_dim = static_cast<int>(sigma.cols());
  c.drift = [b](const Vec&) { return b; };
  c.dispersion = [sigma](const Vec&) { return sigma; };
  const int J = c.dim;
  c.drift_jacobian = [J](const Vec&) { return Mat(Mat::Zero(J, J)); };
  c.diffusion_gradient = [J](const Vec&) { return std::vector<Mat>(J, Mat::Zero(J, J)); };
  c.diffusion_hessian = [J](const Vec&) { return std::vector<Mat>(J * J, Mat::Zero(J, J)); };
  c.bounded = true;
  c.constant = true;
  return c;
}

// ---------------------------------------------------------------------------

Classification contains(const DomainSpec& d, const Vec& x) {
  Classification c;
  c.values.reserve(d.pieces.size());
  double mn = kInf;
  for (const auto& p : d.pieces) {
    double v = p.value(x);
    c.values.push_back(v);
    mn = std::min(mn, v);
  }
  double tol = d.active_tol(x);
  if (mn > tol)
    c.location = Location::Interior;
  else if (mn >= -tol)
    c.location = Location::Boundary;
  else
    c.location = Location::Exterior;
  return c;
}

double min_piece_value(const DomainSpec& d, const Vec& x) {
  double mn = kInf;
  for (const auto& p : d.pieces) mn = std::min(mn, p.value(x));
  return mn;
}

std::vector<int> active_set(const DomainSpec& d, const Vec& x, double tol) {
  if (tol < 0) tol = d.active_tol(x);
  std::vector<int> I;
  for (int i = 0; i < d.num_pieces(); ++i)
    if (std::abs(d.pieces[i].value(x)) <= tol) I.push_back(i);
  if (I.empty()) throw Error(ErrorCode::EmptyActiveSet, "point is not on the boundary");
  return I;
}

std::vector<Vec> direction_cone(const DomainSpec& d, const Vec& x) {
  std::vector<Vec> out;
  for (int i : active_set(d, x)) out.push_back(d.pieces[i].gamma(x));
  return out;
}

InUResult in_U_vectors(const std::vector<Vec>& normals, const std::vector<Vec>& gammas, double tol) {
  const int k = static_cast<int>(normals.size());
  const int q = static_cast<int>(gammas.size());
  Eigen::MatrixXd M(k, q);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < q; ++j) M(i, j) = normals[i].dot(gammas[j]);
  auto mr = linalg::simplex_margin(M);
  InUResult r;
  r.margin = mr.t;
  r.in = mr.t > tol;
  Vec n = Vec::Zero(normals.front().size());
  for (int i = 0; i < k; ++i) n += mr.weights(i) * normals[i];
  double nn = n.norm();
  r.certificate = nn > 0 ? Vec(n / nn) : n;
  return r;
}

InUResult in_U(const DomainSpec& d, const Vec& x, double tol) {
  auto I = active_set(d, x);
  std::vector<Vec> ns, gs;
  for (int i : I) {
    ns.push_back(d.pieces[i].normal(x));
    gs.push_back(d.pieces[i].gamma(x));
  }
  return in_U_vectors(ns, gs, tol);
}

std::vector<Stratum> polyhedral_strata(const DomainSpec& d) {
  if (!d.polyhedral()) throw Error(ErrorCode::InvalidArgument, "strata enumeration needs a polyhedral domain");
  const int m = d.num_pieces();
  const int J = d.dim;
  if (m > 16) throw Error(ErrorCode::InvalidArgument, "too many pieces for stratum enumeration");
  std::vector<Stratum> out;
  for (unsigned mask = 1; mask < (1u << m); ++mask) {
    std::vector<int> S, notS;
    for (int i = 0; i < m; ++i) (mask & (1u << i) ? S : notS).push_back(i);
    // variables: x+ (J), x- (J), t+, t-
    const int nv = 2 * J + 2;
    Eigen::VectorXd c = Eigen::VectorXd::Zero(nv);
    c(2 * J) = 1.0;
    c(2 * J + 1) = -1.0;
    const int nub = static_cast<int>(notS.size()) + 2 * J + 2;
    Eigen::MatrixXd Aub = Eigen::MatrixXd::Zero(nub, nv);
    Eigen::VectorXd bub = Eigen::VectorXd::Zero(nub);
    int r = 0;
    for (int j : notS) {
      const Vec& n = d.pieces[j].n();
      for (int k = 0; k < J; ++k) {
        Aub(r, k) = -n(k);
        Aub(r, J + k) = n(k);
      }
      Aub(r, 2 * J) = 1.0;
      Aub(r, 2 * J + 1) = -1.0;
      bub(r) = -d.pieces[j].offset();
      ++r;
    }
    for (int k = 0; k < J; ++k) {
      Aub(r, k) = 1.0;
      Aub(r, J + k) = -1.0;
      bub(r++) = d.hi(k);
      Aub(r, k) = -1.0;
      Aub(r, J + k) = 1.0;
      bub(r++) = -d.lo(k);
    }
    Aub(r, 2 * J) = 1.0;
    bub(r++) = 1.0;
    Aub(r, 2 * J + 1) = 1.0;
    bub(r++) = 1.0;
    Eigen::MatrixXd Aeq = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(S.size()), nv);
    Eigen::VectorXd beq(static_cast<Eigen::Index>(S.size()));
    for (size_t q = 0; q < S.size(); ++q) {
      const Vec& n = d.pieces[S[q]].n();
      for (int k = 0; k < J; ++k) {
        Aeq(static_cast<Eigen::Index>(q), k) = n(k);
        Aeq(static_cast<Eigen::Index>(q), J + k) = -n(k);
      }
      beq(static_cast<Eigen::Index>(q)) = d.pieces[S[q]].offset();
    }
    auto res = linalg::linprog(c, Aub, bub, Aeq, beq);
    if (res.status == linalg::LPStatus::Infeasible) continue;
    if (res.status != linalg::LPStatus::Optimal) throw Error(ErrorCode::LPFailure, "stratum LP failed");
    double t = res.x(2 * J) - res.x(2 * J + 1);
    if (!(t > 1e-9)) continue;
    Stratum st;
    st.pieces = S;
    st.point = res.x.head(J) - res.x.segment(J, J);
    Eigen::MatrixXd N(J, static_cast<Eigen::Index>(S.size()));
    for (size_t q = 0; q < S.size(); ++q) N.col(static_cast<Eigen::Index>(q)) = d.pieces[S[q]].n();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(N);
    st.dim = J - static_cast<int>(lu.rank());
    if (st.dim == 0) {
      // snap vertex to the exact solution of its defining planes
      Eigen::VectorXd cc(static_cast<Eigen::Index>(S.size()));
      for (size_t q = 0; q < S.size(); ++q) cc(static_cast<Eigen::Index>(q)) = d.pieces[S[q]].offset();
      Eigen::VectorXd sol = N.transpose().completeOrthogonalDecomposition().solve(cc);
      st.point = sol;
    }
    for (const auto& v : d.V)
      if (st.dim == 0 && (v.x - st.point).norm() <= 1e-9 * (1.0 + v.x.norm())) st.in_V = true;
    out.push_back(std::move(st));
  }
  return out;
}

nlohmann::json CompletelySReport::to_json() const {
  nlohmann::json j;
  j["all_pass"] = all_pass;
  j["samples"] = samples;
  j["strata"] = nlohmann::json::array();
  for (const auto& s : strata) {
    nlohmann::json e;
    e["pieces"] = s.pieces;
    e["point"] = std::vector<double>(s.point.data(), s.point.data() + s.point.size());
    e["dim"] = s.dim;
    e["in_V"] = s.in_V;
    e["pass"] = s.pass;
    e["margin"] = s.margin;
    j["strata"].push_back(e);
  }
  return j;
}

CompletelySReport check_completely_S(const DomainSpec& d, int samples, std::uint64_t seed) {
  CompletelySReport rep;
  if (d.polyhedral()) {
    rep.strata = polyhedral_strata(d);
    for (auto& s : rep.strata) {
      auto r = in_U(d, s.point);
      s.pass = r.in;
      s.margin = r.margin;
      rep.all_pass = rep.all_pass && r.in;
    }
    return rep;
  }
  std::vector<Vec> pts = sample_boundary(d, samples, seed);
  for (const auto& v : d.V) pts.push_back(v.x);
  rep.samples = static_cast<int>(pts.size());
  std::map<std::vector<int>, Stratum> groups;
  for (const auto& x : pts) {
    auto I = active_set(d, x);
    auto r = in_U(d, x);
    auto it = groups.find(I);
    if (it == groups.end()) {
      Stratum s;
      s.pieces = I;
      s.point = x;
      s.dim = d.dim - static_cast<int>(I.size());
      s.pass = r.in;
      s.margin = r.margin;
      for (const auto& v : d.V)
        if ((v.x - x).norm() <= 1e-9 * (1.0 + v.x.norm())) s.in_V = true;
      groups.emplace(I, s);
    } else if (r.margin < it->second.margin) {
      it->second.margin = r.margin;
      it->second.point = x;
      it->second.pass = r.in;
    }
    rep.all_pass = rep.all_pass && r.in;
  }
  for (auto& [k, s] : groups) rep.strata.push_back(s);
  return rep;
}

// ---------------------------------------------------------------------------

double distance_to_V(const DomainSpec& d, const Vec& x) {
  double m = kInf;
  for (const auto& v : d.V) m = std::min(m, (v.x - x).norm());
  return m;
}

namespace {

bool in_box(const DomainSpec& d, const Vec& x, double slack = 0.0) {
  for (int k = 0; k < d.dim; ++k)
    if (x(k) < d.lo(k) - slack || x(k) > d.hi(k) + slack) return false;
  return true;
}

Vec draw_in_region(const DomainSpec& d, CounterRng& rng, const Vec* center, double radius) {
  const int J = d.dim;
  if (center) {
    Vec g = rng.normal_vec(J);
    double nrm = g.norm();
    double rad = radius * std::pow(rng.uniform(), 1.0 / J);
    return *center + (rad / nrm) * g;
  }
  Vec x(J);
  for (int k = 0; k < J; ++k) x(k) = d.lo(k) + (d.hi(k) - d.lo(k)) * rng.uniform();
  return x;
}

struct Target {
  std::vector<int> pieces;
  double weight;
  Eigen::MatrixXd N;  // normals as columns (polyhedral)
  Eigen::VectorXd c;
};

Vec project_affine(const Target& t, const Vec& y) {
  Eigen::VectorXd r = t.N.transpose() * Eigen::VectorXd(y) - t.c;
  Eigen::VectorXd lam = (t.N.transpose() * t.N).completeOrthogonalDecomposition().solve(r);
  Eigen::VectorXd x = Eigen::VectorXd(y) - t.N * lam;
  return Vec(x);
}

}  // namespace

std::vector<Vec> sample_domain(const DomainSpec& d, int count, std::uint64_t seed, const Vec* center, double radius) {
  CounterRng rng(seed, 0x51);
  double diag = (d.hi - d.lo).norm();
  double rad = std::min(radius, diag);
  std::vector<Vec> out;
  out.reserve(static_cast<size_t>(std::max(count, 0)));
  long tries = 0, cap = 2000L * std::max(count, 1) + 10000;
  while (static_cast<int>(out.size()) < count) {
    if (++tries > cap) throw Error(ErrorCode::SamplingFailure, "cannot populate the domain region");
    Vec y = draw_in_region(d, rng, center, rad);
    if (!in_box(d, y)) continue;
    if (contains(d, y).location == Location::Exterior) continue;
    out.push_back(y);
  }
  return out;
}

std::vector<Vec> sample_boundary(const DomainSpec& d, int count, std::uint64_t seed, const Vec* center,
                                 double radius) {
  CounterRng rng(seed, 0xb0);
  std::vector<Target> targets;
  if (d.polyhedral()) {
    for (const auto& s : polyhedral_strata(d)) {
      Target t;
      t.pieces = s.pieces;
      int codim = d.dim - s.dim;
      t.weight = codim == 1 ? 1.0 : (s.dim == 0 ? 0.05 : 0.3);
      t.N = Eigen::MatrixXd(d.dim, static_cast<Eigen::Index>(s.pieces.size()));
      t.c = Eigen::VectorXd(static_cast<Eigen::Index>(s.pieces.size()));
      for (size_t q = 0; q < s.pieces.size(); ++q) {
        t.N.col(static_cast<Eigen::Index>(q)) = d.pieces[s.pieces[q]].n();
        t.c(static_cast<Eigen::Index>(q)) = d.pieces[s.pieces[q]].offset();
      }
      targets.push_back(std::move(t));
    }
  } else {
    for (int i = 0; i < d.num_pieces(); ++i) targets.push_back(Target{{i}, 1.0, {}, {}});
  }
  double wsum = 0.0;
  for (const auto& t : targets) wsum += t.weight;
  double diag = (d.hi - d.lo).norm();
  double rad = std::min(radius, diag);
  std::vector<Vec> out;
  long tries = 0, cap = 5000L * std::max(count, 1) + 10000;
  while (static_cast<int>(out.size()) < count) {
    if (++tries > cap) throw Error(ErrorCode::SamplingFailure, "cannot populate the boundary region");
    double u = rng.uniform() * wsum;
    size_t ti = 0;
    while (ti + 1 < targets.size() && u > targets[ti].weight) {
      u -= targets[ti].weight;
      ++ti;
    }
    const Target& t = targets[ti];
    Vec x;
    const BoundaryPiece& p0 = d.pieces[t.pieces.front()];
    if (!d.polyhedral() && p0.chart() && !center) {
      const Chart& ch = *p0.chart();
      x = ch.point(ch.t0 + (ch.t1 - ch.t0) * rng.uniform());
    } else {
      Vec y = draw_in_region(d, rng, center, rad);
      x = d.polyhedral() ? project_affine(t, y) : p0.project(y);
    }
    if (!in_box(d, x, 1e-12)) continue;
    if (center && (x - *center).norm() > rad) continue;
    if (min_piece_value(d, x) < -d.active_tol(x)) continue;
    out.push_back(x);
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json Assumption2Report::to_json() const {
  nlohmann::json j;
  j["pass"] = pass;
  j["margin_angle"] = margin_angle;
  j["margin_reflect"] = margin_reflect;
  j["margin_ellipticity"] = margin_ellipticity;
  j["margin_inner"] = margin_inner;
  j["margin_outer"] = margin_outer;
  j["interior_samples"] = interior_samples;
  j["boundary_samples"] = boundary_samples;
  return j;
}

Assumption2Report check_assumption_2prime(const DomainSpec& d, const CoefficientField* coef, const VPoint& v,
                                          int samples, std::uint64_t seed) {
  v.validate();
  Assumption2Report rep;
  const double diag = (d.hi - d.lo).norm();
  const double rho = std::min(v.r, diag);
  const int nb = std::max(1, samples / 4);
  const int nradii = 8;
  const int per_r = std::max(1, (samples - nb) / (nradii + 1));
  std::vector<Vec> pts = sample_domain(d, per_r, seed, &v.x, rho);
  const double rmax = std::min(v.r, diag) / v.c2;
  for (int k = 1; k <= nradii; ++k) {
    double rr = rmax * k / nradii;
    auto extra = sample_domain(d, per_r, seed + 17 * k, &v.x, std::min(rho, 1.5 * v.c2 * rr));
    pts.insert(pts.end(), extra.begin(), extra.end());
  }
  rep.interior_samples = static_cast<int>(pts.size());
  std::vector<Vec> bpts = sample_boundary(d, nb, seed + 7, &v.x, rho);
  bpts.push_back(v.x);
  rep.boundary_samples = static_cast<int>(bpts.size());
  std::vector<Vec> all = pts;
  all.insert(all.end(), bpts.begin(), bpts.end());

  const double tol = 1e-12;
  for (const auto& y : all) {
    Vec dy = y - v.x;
    double ny = dy.norm();
    double h = v.v.dot(dy);
    if (ny > 1e-14) rep.margin_angle = std::min(rep.margin_angle, h / ny - v.alpha);
    if (coef) {
      Mat a = coef->diffusion(y);
      rep.margin_ellipticity = std::min(rep.margin_ellipticity, v.v.dot(a * v.v) - v.alpha);
    }
    for (int k = 1; k <= nradii; ++k) {
      double rr = rmax * k / nradii;
      if (ny < v.c1 * rr) rep.margin_inner = std::min(rep.margin_inner, (rr - h) / rr);
      if (h < rr) rep.margin_outer = std::min(rep.margin_outer, (v.c2 * rr - ny) / rr);
    }
  }
  for (const auto& y : bpts) {
    std::vector<int> I;
    try {
      I = active_set(d, y);
    } catch (const Error&) {
      continue;
    }
    for (int i : I) rep.margin_reflect = std::min(rep.margin_reflect, v.v.dot(d.pieces[i].gamma(y)));
  }
  rep.pass = rep.margin_angle >= -tol && rep.margin_reflect >= -1e-10 && rep.margin_ellipticity >= -tol &&
             rep.margin_inner > -tol && rep.margin_outer > -tol;
  return rep;
}

Vec edge_normal(const DomainSpec& d, int i, int j, const Vec& x) {
  Vec ni = d.pieces.at(i).normal(x), nj = d.pieces.at(j).normal(x);
  double c = ni.dot(nj);
  if (std::abs(c) >= 1.0 - 1e-12) throw Error(ErrorCode::ParallelNormals, "edge normals are parallel");
  return (nj - c * ni) / std::sqrt(1.0 - c * c);
}

Quadrature boundary_quadrature(const DomainSpec& d, int piece, int resolution) {
  if (piece < 0 || piece >= d.num_pieces()) throw Error(ErrorCode::InvalidArgument, "no such piece");
  if (resolution <= 0) throw Error(ErrorCode::InvalidArgument, "resolution must be positive");
  const BoundaryPiece& P = d.pieces[piece];
  const int J = d.dim;
  Quadrature q;
  auto keep = [&](const Vec& x, double w) {
    for (int k = 0; k < d.num_pieces(); ++k) {
      if (k == piece) continue;
      if (d.pieces[k].value(x) < -d.active_tol(x)) return;
    }
    if (!in_box(d, x, 1e-12)) return;
    q.points.push_back(x);
    q.weights.push_back(w);
  };
  if (!P.is_half_space()) {
    if (!P.chart()) throw Error(ErrorCode::ChartMissing, "curved piece without a parameterisation");
    const Chart& ch = *P.chart();
    double dt = (ch.t1 - ch.t0) / resolution;
    for (int k = 0; k < resolution; ++k) {
      double t = ch.t0 + (k + 0.5) * dt;
      keep(ch.point(t), ch.speed(t) * dt);
    }
    return q;
  }
  const Vec& n = P.n();
  Vec p0 = P.offset() * n;
  if (J == 1) {
    keep(p0, 1.0);
    return q;
  }
  // orthonormal basis of the plane
  Eigen::MatrixXd B = Eigen::MatrixXd(Eigen::VectorXd(n)).fullPivHouseholderQr().matrixQ();
  Eigen::MatrixXd U = B.rightCols(J - 1);
  if (J == 2) {
    // exact segment: clip the line by the box and the other half-spaces
    Vec t = U.col(0);
    double s0 = -kInf, s1 = kInf;
    auto clip = [&](double a, double b) {  // a*s + b >= 0
      if (std::abs(a) < 1e-15) {
        if (b < -1e-12) s1 = -kInf;
        return;
      }
      double s = -b / a;
      if (a > 0) s0 = std::max(s0, s); else s1 = std::min(s1, s);
    };
    for (int k = 0; k < J; ++k) {
      clip(t(k), p0(k) - d.lo(k));
      clip(-t(k), d.hi(k) - p0(k));
    }
    for (int k = 0; k < d.num_pieces(); ++k) {
      if (k == piece || !d.pieces[k].is_half_space()) continue;
      clip(d.pieces[k].n().dot(t), d.pieces[k].value(p0));
    }
    if (!(s1 > s0)) return q;
    double ds = (s1 - s0) / resolution;
    for (int k = 0; k < resolution; ++k) keep(p0 + (s0 + (k + 0.5) * ds) * t, ds);
    return q;
  }
  // J >= 3: tensor grid over the bounding rectangle of the projected box
  const int m = J - 1;
  Eigen::VectorXd umin = Eigen::VectorXd::Constant(m, kInf), umax = Eigen::VectorXd::Constant(m, -kInf);
  for (int corner = 0; corner < (1 << J); ++corner) {
    Vec c(J);
    for (int k = 0; k < J; ++k) c(k) = (corner & (1 << k)) ? d.hi(k) : d.lo(k);
    Eigen::VectorXd u = U.transpose() * Eigen::VectorXd(c - p0);
    umin = umin.cwiseMin(u);
    umax = umax.cwiseMax(u);
  }
  Eigen::VectorXd du = (umax - umin) / resolution;
  double cell = du.prod();
  std::vector<int> idx(m, 0);
  while (true) {
    Eigen::VectorXd u(m);
    for (int k = 0; k < m; ++k) u(k) = umin(k) + (idx[k] + 0.5) * du(k);
    keep(Vec(Eigen::VectorXd(p0) + U * u), cell);
    int k = 0;
    while (k < m && ++idx[k] == resolution) idx[k++] = 0;
    if (k == m) break;
  }
  return q;
}

// ---------------------------------------------------------------------------

static std::vector<double> to_vec(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nlohmann::json domain_to_json(const DomainSpec& d) {
  nlohmann::json j;
  j["dimension"] = d.dim;
  j["name"] = d.name;
  j["well_posed"] = d.well_posed;
  j["bounded"] = d.bounded;
  j["active_tol_scale"] = d.active_tol_scale;
  j["bbox"] = {{"lo", to_vec(d.lo)}, {"hi", to_vec(d.hi)}};
  j["pieces"] = nlohmann::json::array();
  for (const auto& p : d.pieces) {
    nlohmann::json e;
    if (p.is_half_space()) {
      e["kind"] = "half_space";
      e["normal"] = to_vec(p.n());
      e["offset"] = p.offset();
      e["gamma"] = to_vec(p.gamma_const());
    } else {
      e["kind"] = "smooth";
      e["phi_ref"] = p.ref();
      e["params"] = p.params();
      e["gamma"] = "builtin";
    }
    j["pieces"].push_back(e);
  }
  j["V"] = nlohmann::json::array();
  for (const auto& v : d.V) {
    j["V"].push_back({{"x", to_vec(v.x)}, {"v", to_vec(v.v)}, {"r", v.r == kInf ? nlohmann::json("inf") : nlohmann::json(v.r)},
                      {"alpha", v.alpha}, {"c1", v.c1}, {"c2", v.c2}});
  }
  return j;
}

}  // namespace refdiff
