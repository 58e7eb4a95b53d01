#include "refdiff/gallery.hpp"

#include <algorithm>
#include <cmath>

namespace refdiff {

namespace {

using nlohmann::json;

double num(const json& p, const char* key, double def) {
  if (!p.contains(key)) return def;
  const auto& v = p.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return std::stod(v.get<std::string>());
  throw Error(ErrorCode::InvalidArgument, std::string("parameter ") + key + " must be a number");
}

Vec vec(const json& p, const char* key, const Vec& def) {
  if (!p.contains(key)) return def;
  const auto& v = p.at(key);
  if (v.is_number()) return Vec::Constant(def.size(), v.get<double>());
  auto xs = v.get<std::vector<double>>();
  if (static_cast<int>(xs.size()) != def.size())
    throw Error(ErrorCode::InvalidArgument, std::string("parameter ") + key + " has the wrong length");
  Vec out(def.size());
  for (int k = 0; k < def.size(); ++k) out(k) = xs[k];
  return out;
}

Mat mat(const json& p, const char* key, const Mat& def) {
  if (!p.contains(key)) return def;
  if (p.at(key).is_number()) return Mat(p.at(key).get<double>() * Mat::Identity(def.rows(), def.cols()));
  auto rows = p.at(key).get<std::vector<std::vector<double>>>();
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.empty() ? 0 : rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

bool flag(const json& p, const char* key) { return p.contains(key) && p.at(key).get<bool>(); }

// ---------------------------------------------------------------------------
// builtin smooth pieces

BoundaryPiece disk_piece(const json& prm) {
  double R = num(prm, "radius", 1.0), th = num(prm, "theta", 0.0);
  if (!(R > 0)) throw Error(ErrorCode::InvalidArgument, "disk radius must be positive");
  json stored = {{"radius", R}, {"theta", th}, {"convex", true}};
  auto phi = [R](const Vec& x) { return (R * R - x.squaredNorm()) / (2.0 * R); };
  auto grad = [R](const Vec& x) { return Vec(-x / R); };
  double t = std::tan(th);
  auto gamma = [t](const Vec& x) {
    double r = x.norm();
    Vec n = r > 0 ? Vec(-x / r) : Vec(Vec::Zero(2));
    Vec tau(2);
    tau << -n(1), n(0);
    return Vec(n + t * tau);
  };
  auto sd = [R](const Vec& x) { return R - x.norm(); };
  Chart ch;
  ch.t0 = 0.0;
  ch.t1 = 2.0 * M_PI;
  ch.periodic = true;
  ch.point = [R](double s) {
    Vec p(2);
    p << R * std::cos(s), R * std::sin(s);
    return p;
  };
  ch.speed = [R](double) { return R; };
  return BoundaryPiece::smooth("disk", stored, phi, grad, gamma, sd, ch);
}

// distance from p to {(t, s·t^β): t >= 0} ∪ {(t, 0): t < 0}
double cusp_curve_distance(const Vec& p, double beta, double sgn) {
  auto f = [&](double t) {
    double dx = t - p(0), dy = sgn * std::pow(t, beta) - p(1);
    return dx * dx + dy * dy;
  };
  double T = std::max(1.0, 2.0 * p.norm());
  const int n = 400;
  int best = 0;
  double bv = f(0.0);
  for (int k = 1; k <= n; ++k) {
    double v = f(T * k / n);
    if (v < bv) {
      bv = v;
      best = k;
    }
  }
  double a = T * std::max(0, best - 1) / n, b = T * std::min(n, best + 1) / n;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a), d = a + g * (b - a);
  for (int it = 0; it < 100; ++it) {
    if (f(c) < f(d)) b = d;
    else a = c;
    c = b - g * (b - a);
    d = a + g * (b - a);
  }
  double dcurve = std::sqrt(std::min(bv, f(0.5 * (a + b))));
  double dline = p(0) < 0 ? std::abs(p(1)) : p.norm();
  return std::min(dcurve, dline);
}

BoundaryPiece cusp_piece(bool upper, const json& prm) {
  double beta = num(prm, "beta", 2.0), th = num(prm, "theta", 0.0), X = num(prm, "X", 1.0);
  json stored = {{"beta", beta}, {"theta", th}, {"X", X}, {"convex", false}};
  double sg = upper ? 1.0 : -1.0;  // upper piece: y <= x^β, lower piece: y >= -x^β
  auto phi = [beta, sg](const Vec& x) {
    double xb = x(0) > 0 ? std::pow(x(0), beta) : 0.0;
    return xb - sg * x(1);
  };
  auto grad = [beta, sg](const Vec& x) {
    Vec g(2);
    g << (x(0) > 0 ? beta * std::pow(x(0), beta - 1.0) : 0.0), -sg;
    return g;
  };
  double t = std::tan(th);
  auto gamma = [beta, sg, t](const Vec& x) {
    double s = x(0) > 0 ? beta * std::pow(x(0), beta - 1.0) : 0.0;
    Vec n(2), tau(2);
    n << s, -sg;
    n /= n.norm();
    tau << -1.0, -sg * s;  // along the curve, towards the tip
    tau /= tau.norm();
    return Vec(n + t * tau);
  };
  auto sd = [beta, sg, phi](const Vec& x) {
    double d = cusp_curve_distance(x, beta, sg);
    return phi(x) >= 0 ? d : -d;
  };
  Chart ch;
  ch.t0 = 0.0;
  ch.t1 = X;
  ch.point = [beta, sg](double s) {
    Vec p(2);
    p << s, sg * std::pow(s, beta);
    return p;
  };
  ch.speed = [beta](double s) {
    double d = beta * std::pow(s, beta - 1.0);
    return std::sqrt(1.0 + d * d);
  };
  return BoundaryPiece::smooth(upper ? "cusp_upper" : "cusp_lower", stored, phi, grad, gamma, sd, ch);
}

BoundaryPiece smooth_from_ref(const std::string& ref, const json& prm) {
  if (ref == "disk") return disk_piece(prm);
  if (ref == "cusp_upper") return cusp_piece(true, prm);
  if (ref == "cusp_lower") return cusp_piece(false, prm);
  throw Error(ErrorCode::InvalidArgument, "unknown smooth piece '" + ref + "'");
}

// ---------------------------------------------------------------------------
}  // namespace

// densities

Density exp_density(double theta) {
  Density p;
  p.name = "exp(" + std::to_string(theta) + ")";
  p.value = [theta](const Vec& x) { return theta * std::exp(-theta * x(0)); };
  p.gradient = [theta](const Vec& x) {
    Vec g(1);
    g(0) = -theta * theta * std::exp(-theta * x(0));
    return g;
  };
  p.hessian = [theta](const Vec& x) {
    Mat h(1, 1);
    h(0, 0) = theta * theta * theta * std::exp(-theta * x(0));
    return h;
  };
  return p;
}

Density product_density(const Vec& theta) {
  Density p;
  p.name = "product_exp";
  p.value = [theta](const Vec& x) {
    double v = 1.0;
    for (int i = 0; i < theta.size(); ++i) v *= theta(i) * std::exp(-theta(i) * x(i));
    return v;
  };
  auto val = p.value;
  p.gradient = [theta, val](const Vec& x) { return Vec(-theta * val(x)); };
  p.hessian = [theta, val](const Vec& x) { return Mat(theta * theta.transpose() * val(x)); };
  return p;
}

Density uniform_density(int dim, double c) {
  Density p;
  p.name = "uniform";
  p.value = [c](const Vec&) { return c; };
  p.gradient = [dim](const Vec&) { return Vec(Vec::Zero(dim)); };
  p.hessian = [dim](const Vec&) { return Mat(Mat::Zero(dim, dim)); };
  return p;
}

namespace {

void certify_density(const ExampleSystem& s) {
  BarPlan plan;
  plan.interior = 200;
  plan.face = 24;
  plan.edge = 24;
  plan.mode = DerivativeMode::Analytic;
  plan.mass_resolution = 64;
  BarReport r = verify_bar(s.coef, s.domain, *s.density, plan);
  if (!r.pass()) throw Error(ErrorCode::InvalidArgument, "closed-form density of " + s.name + " fails the BAR check");
}

// ---------------------------------------------------------------------------

ExampleSystem make_halfline(const json& p) {
  ExampleSystem s;
  double b = num(p, "b", -1.0), sigma = num(p, "sigma", 1.0), L = num(p, "L", 20.0);
  if (!(sigma > 0 && L > 0)) throw Error(ErrorCode::InvalidArgument, "halfline needs sigma > 0 and L > 0");
  s.name = "halfline";
  s.params = {{"b", b}, {"sigma", sigma}, {"L", L}};
  DomainSpec& d = s.domain;
  d.dim = 1;
  d.name = "halfline";
  Vec n(1), g(1);
  n << 1.0;
  g << 1.0;
  d.pieces.push_back(BoundaryPiece::half_space(n, 0.0, g));
  d.lo = Vec::Zero(1);
  d.hi = Vec::Constant(1, L);
  d.bounded = false;
  Vec bv(1);
  bv << b;
  Mat sg(1, 1);
  sg << sigma;
  s.coef = CoefficientField::constant_field(bv, sg);
  s.condition = "none (one-dimensional normal reflection)";
  if (b < 0) s.density = exp_density(2.0 * std::abs(b) / (sigma * sigma));
  return s;
}

ExampleSystem make_disk(const json& p) {
  ExampleSystem s;
  double R = num(p, "radius", 1.0), th = num(p, "theta", 0.0);
  if (!(std::abs(th) < M_PI / 2)) throw Error(ErrorCode::IllPosedParameters, "disk needs |theta| < pi/2");
  Vec b = vec(p, "b", Vec::Zero(2));
  Mat sg = mat(p, "sigma", Mat::Identity(2, 2));
  s.name = "disk";
  s.params = {{"radius", R}, {"theta", th}, {"b", std::vector<double>(b.data(), b.data() + 2)}};
  DomainSpec& d = s.domain;
  d.dim = 2;
  d.name = "disk";
  d.pieces.push_back(disk_piece({{"radius", R}, {"theta", th}}));
  d.lo = Vec::Constant(2, -R);
  d.hi = Vec::Constant(2, R);
  d.bounded = true;
  s.coef = CoefficientField::constant_field(b, sg);
  s.condition = "|grad phi| >= 1 on the boundary (phi = (R^2 - |x|^2)/(2R))";
  Mat a = sg * sg.transpose();
  if (b.norm() == 0.0 && th == 0.0 && (a - Mat::Identity(2, 2)).norm() < 1e-14)
    s.density = uniform_density(2, 1.0 / (M_PI * R * R));
  return s;
}

ExampleSystem make_orthant(const json& p) {
  ExampleSystem s;
  int J = static_cast<int>(num(p, "J", 2));
  if (J < 1 || J > kMaxDim) throw Error(ErrorCode::InvalidArgument, "orthant dimension out of range");
  double L = num(p, "L", 10.0);
  Vec b = vec(p, "b", Vec::Constant(J, -1.0));
  Mat R = mat(p, "R", Mat::Identity(J, J));
  Mat sg = mat(p, "sigma", Mat::Identity(J, J));
  if (R.rows() != J || R.cols() != J) throw Error(ErrorCode::InvalidArgument, "R must be J x J (columns gamma^i)");
  s.name = "orthant";
  DomainSpec& d = s.domain;
  d.dim = J;
  d.name = "orthant";
  for (int i = 0; i < J; ++i) {
    if (!(R(i, i) > 0)) throw Error(ErrorCode::IllPosedParameters, "need <e_i, gamma^i> > 0");
    d.pieces.push_back(BoundaryPiece::half_space(unit(J, i), 0.0, Vec(R.col(i))));
  }
  d.lo = Vec::Zero(J);
  d.hi = Vec::Constant(J, L);
  d.bounded = false;
  s.coef = CoefficientField::constant_field(b, sg);
  auto rep = check_completely_S(d);
  s.well_posed = rep.all_pass;
  d.well_posed = rep.all_pass;
  s.condition = "reflection matrix is completely-S";
  json pr = json::object();
  pr["J"] = J;
  pr["L"] = L;
  pr["b"] = std::vector<double>(b.data(), b.data() + J);
  std::vector<std::vector<double>> rr(J, std::vector<double>(J));
  for (int i = 0; i < J; ++i)
    for (int j = 0; j < J; ++j) rr[i][j] = R(i, j);
  pr["R"] = rr;
  s.params = pr;
  Mat a = sg * sg.transpose();
  bool normal = (R - Mat::Identity(J, J)).norm() < 1e-14;
  if (normal && (a - Mat::Identity(J, J)).norm() < 1e-14 && (b.array() < 0).all())
    s.density = product_density(Vec(-2.0 * b));
  return s;
}

ExampleSystem make_gps(const json& p) {
  ExampleSystem s;
  int J = static_cast<int>(num(p, "J", 2));
  if (J < 2 || J > kMaxDim) throw Error(ErrorCode::InvalidArgument, "gps dimension out of range");
  Vec abar = vec(p, "alpha", Vec::Constant(J, 1.0 / J));
  if ((abar.array() <= 0).any() || std::abs(abar.sum() - 1.0) > 1e-9)
    throw Error(ErrorCode::IllPosedParameters, "gps needs alpha_i > 0 with sum alpha_i = 1");
  double L = num(p, "L", 2.0);
  Vec b = vec(p, "b", Vec::Constant(J, -1.0));
  Mat sg = mat(p, "sigma", Mat::Identity(J, J));
  s.name = "gps";
  s.params = {{"J", J}, {"alpha", std::vector<double>(abar.data(), abar.data() + J)}, {"L", L},
              {"b", std::vector<double>(b.data(), b.data() + J)}};
  DomainSpec& d = s.domain;
  d.dim = J;
  d.name = "gps";
  for (int i = 0; i < J; ++i) {
    Vec g(J);
    for (int j = 0; j < J; ++j) g(j) = i == j ? 1.0 : -abar(j) / (1.0 - abar(i));
    d.pieces.push_back(BoundaryPiece::half_space(unit(J, i), 0.0, g));
  }
  Vec dj = Vec::Constant(J, 1.0 / std::sqrt(static_cast<double>(J)));
  d.pieces.push_back(BoundaryPiece::half_space(dj, 0.0, dj));
  VPoint v;
  v.x = Vec::Zero(J);
  v.v = dj;
  v.r = kInf;
  v.alpha = 1.0 / std::sqrt(static_cast<double>(J));
  v.c1 = 1.0;
  v.c2 = std::sqrt(static_cast<double>(J));
  d.V.push_back(v);
  d.lo = Vec::Zero(J);
  d.hi = Vec::Constant(J, L);
  d.bounded = false;
  s.coef = CoefficientField::constant_field(b, sg);
  s.condition = "alpha_i > 0, sum alpha_i = 1";
  return s;
}

ExampleSystem make_wedge(const json& p) {
  ExampleSystem s;
  double zeta = num(p, "zeta", M_PI / 2), t1 = num(p, "theta1", M_PI / 4), t2 = num(p, "theta2", M_PI / 4);
  double L = num(p, "L", 2.0);
  bool force = flag(p, "force");
  if (!(zeta > 0 && zeta < M_PI)) throw Error(ErrorCode::IllPosedParameters, "wedge angle must lie in (0, pi)");
  if (!(std::abs(t1) < M_PI / 2 && std::abs(t2) < M_PI / 2))
    throw Error(ErrorCode::IllPosedParameters, "reflection angles must lie in (-pi/2, pi/2)");
  double alpha = (t1 + t2) / zeta;
  s.condition = "alpha = (theta1 + theta2)/zeta < 2";
  s.well_posed = alpha < 2.0;
  if (!s.well_posed && !force)
    throw Error(ErrorCode::IllPosedParameters, "wedge needs alpha = (theta1 + theta2)/zeta < 2, got " +
                                                   std::to_string(alpha));
  Vec b = vec(p, "b", Vec::Zero(2));
  Mat sg = mat(p, "sigma", Mat::Identity(2, 2));
  s.name = "wedge";
  s.params = {{"zeta", zeta}, {"theta1", t1}, {"theta2", t2}, {"L", L}, {"alpha", alpha},
              {"b", std::vector<double>(b.data(), b.data() + 2)}};
  DomainSpec& d = s.domain;
  d.dim = 2;
  d.name = "wedge";
  d.well_posed = s.well_posed;
  Vec n1(2), tg1(2), n2(2), tg2(2);
  n1 << 0.0, 1.0;
  tg1 << 1.0, 0.0;
  n2 << std::sin(zeta), -std::cos(zeta);
  tg2 << std::cos(zeta), std::sin(zeta);
  d.pieces.push_back(BoundaryPiece::half_space(n1, 0.0, Vec(n1 - std::tan(t1) * tg1)));
  d.pieces.push_back(BoundaryPiece::half_space(n2, 0.0, Vec(n2 - std::tan(t2) * tg2)));
  if (alpha >= 1.0 - 1e-12) {
    VPoint v;
    v.x = Vec::Zero(2);
    v.v = Vec(2);
    v.v << std::cos(t1), std::sin(t1);  // perpendicular to γ¹, pointing into G
    v.r = kInf;
    v.alpha = std::min(std::cos(t1), std::cos(zeta - t1));
    v.c1 = 0.5;
    double c2 = std::max(1.0 / std::cos(t1), 1.0 / std::cos(zeta - t1));
    for (double sv : {std::sin(zeta + t1), std::sin(t1)})
      if (sv > 0) c2 = std::max(c2, 1.0 / sv);
    v.c2 = c2;
    d.V.push_back(v);
  }
  d.lo = Vec(2);
  d.hi = Vec(2);
  d.lo << std::min(0.0, L * std::cos(zeta)), 0.0;
  d.hi << L, L;
  d.bounded = false;
  s.coef = CoefficientField::constant_field(b, sg);
  return s;
}

ExampleSystem make_cusp(const json& p) {
  ExampleSystem s;
  double beta = num(p, "beta", 2.0), t1 = num(p, "theta1", 0.0), t2 = num(p, "theta2", 0.0), X = num(p, "X", 1.0);
  bool force = flag(p, "force");
  if (!(beta > 1)) throw Error(ErrorCode::IllPosedParameters, "cusp needs beta > 1");
  if (!(std::abs(t1) < M_PI / 2 && std::abs(t2) < M_PI / 2))
    throw Error(ErrorCode::IllPosedParameters, "reflection angles must lie in (-pi/2, pi/2)");
  s.condition = "theta1 + theta2 <= 0";
  s.well_posed = t1 + t2 <= 0;
  if (!s.well_posed && !force)
    throw Error(ErrorCode::IllPosedParameters, "cusp needs theta1 + theta2 <= 0");
  Vec b = vec(p, "b", Vec::Zero(2));
  Mat sg = mat(p, "sigma", Mat::Identity(2, 2));
  s.name = "cusp";
  s.params = {{"beta", beta}, {"theta1", t1}, {"theta2", t2}, {"X", X}, {"experimental", true}};
  DomainSpec& d = s.domain;
  d.dim = 2;
  d.name = "cusp";
  d.well_posed = s.well_posed;
  d.pieces.push_back(cusp_piece(true, {{"beta", beta}, {"theta", t1}, {"X", X}}));
  d.pieces.push_back(cusp_piece(false, {{"beta", beta}, {"theta", t2}, {"X", X}}));
  VPoint v;
  v.x = Vec::Zero(2);
  v.v = Vec(2);
  v.v << std::cos(t1), -std::sin(t1);  // perpendicular to γ¹(0), pointing into G
  v.r = 0.5 * X;
  double ag = 1.0;
  for (int k = 1; k <= 2000; ++k) {
    double t = v.r * k / 2000.0;
    for (double sgn : {1.0, -1.0}) {
      Vec y(2);
      y << t, sgn * std::pow(t, beta);
      if (y.norm() <= v.r) ag = std::min(ag, v.v.dot(y) / y.norm());
    }
  }
  v.alpha = 0.99 * ag;
  v.c1 = 0.5;
  v.c2 = 1.01 / ag;
  d.V.push_back(v);
  d.lo = Vec(2);
  d.hi = Vec(2);
  d.lo << 0.0, -std::pow(X, beta);
  d.hi << X, std::pow(X, beta);
  d.bounded = false;
  s.coef = CoefficientField::constant_field(b, sg);
  return s;
}

}  // namespace

ExampleSystem make_example(const std::string& name, const nlohmann::json& params) {
  const json& p = params.is_null() ? json::object() : params;
  ExampleSystem s;
  if (name == "halfline") s = make_halfline(p);
  else if (name == "disk") s = make_disk(p);
  else if (name == "orthant") s = make_orthant(p);
  else if (name == "gps") s = make_gps(p);
  else if (name == "wedge") s = make_wedge(p);
  else if (name == "cusp") s = make_cusp(p);
  else throw Error(ErrorCode::InvalidArgument, "unknown example '" + name + "'");
  s.domain.well_posed = s.well_posed;
  s.domain.validate();
  if (s.density) certify_density(s);
  return s;
}

Density closed_form_density(const std::string& name, const nlohmann::json& params) {
  ExampleSystem s = make_example(name, params);
  if (!s.density) throw Error(ErrorCode::NoClosedForm, "no closed-form density for " + name + " with these parameters");
  return *s.density;
}

DomainSpec domain_from_json(const nlohmann::json& j) {
  DomainSpec d;
  d.dim = j.at("dimension").get<int>();
  d.name = j.value("name", std::string());
  d.well_posed = j.value("well_posed", true);
  d.bounded = j.value("bounded", false);
  d.active_tol_scale = j.value("active_tol_scale", 1e-9);
  auto rd = [&](const json& a) {
    auto xs = a.get<std::vector<double>>();
    if (static_cast<int>(xs.size()) != d.dim) throw Error(ErrorCode::InvalidArgument, "vector of wrong dimension");
    Vec v(d.dim);
    for (int k = 0; k < d.dim; ++k) v(k) = xs[k];
    return v;
  };
  for (const auto& pc : j.at("pieces")) {
    std::string kind = pc.value("kind", std::string("half_space"));
    if (kind == "half_space") {
      d.pieces.push_back(BoundaryPiece::half_space(rd(pc.at("normal")), pc.value("offset", 0.0), rd(pc.at("gamma"))));
    } else if (kind == "smooth") {
      d.pieces.push_back(smooth_from_ref(pc.at("phi_ref").get<std::string>(), pc.value("params", json::object())));
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown piece kind '" + kind + "'");
    }
  }
  if (j.contains("V")) {
    for (const auto& vj : j.at("V")) {
      VPoint v;
      v.x = rd(vj.at("x"));
      v.v = rd(vj.at("v"));
      const auto& r = vj.at("r");
      v.r = r.is_string() ? kInf : r.get<double>();
      v.alpha = vj.at("alpha").get<double>();
      v.c1 = vj.at("c1").get<double>();
      v.c2 = vj.at("c2").get<double>();
      d.V.push_back(v);
    }
  }
  if (j.contains("bbox")) {
    d.lo = rd(j.at("bbox").at("lo"));
    d.hi = rd(j.at("bbox").at("hi"));
  } else {
    d.lo = Vec::Constant(d.dim, -10.0);
    d.hi = Vec::Constant(d.dim, 10.0);
  }
  d.validate();
  return d;
}

CoefficientField coef_from_json(const nlohmann::json& j, int dim) {
  Vec b = vec(j, "drift", Vec::Zero(dim));
  Mat s = mat(j, "sigma", Mat::Identity(dim, dim));
  if (s.rows() != dim) throw Error(ErrorCode::InvalidArgument, "sigma must have J rows");
  return CoefficientField::constant_field(b, s);
}

}  // namespace refdiff
