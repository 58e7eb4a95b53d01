#pragma once

#include "refdiff/model.hpp"

#include <memory>
#include <string>
#include <vector>

namespace refdiff {

struct Jet {
  double value = 0.0;
  Vec grad;
  Mat hess;
};

struct TestFunctionInfo {
  std::string kind;
  std::string id;
  Vec center;
  double support_radius = kInf;
  bool claims_H = false;
  bool claims_negH = false;
  bool constant_near_V = true;
  double outside_value = 0.0;
  double v_constant_radius = 0.0;  // radius of the balls around 𝒱 on which f is constant (0 = unknown)
  // reported bound triple: |f| <= A, |∇f| <= A/r, Σ|∂²f| <= A/r²
  double bound_A = 0.0, bound_r = 0.0;
};

class TestFunctionImpl {
 public:
  virtual ~TestFunctionImpl() = default;
  /// order 0: value; 1: + gradient; 2: + Hessian. Unrequested parts may be left empty.
  virtual Jet jet(const Vec& y, int order) const = 0;
};

class TestFunction {
 public:
  TestFunction() = default;
  TestFunction(std::shared_ptr<const TestFunctionImpl> impl, TestFunctionInfo info)
      : impl_(std::move(impl)), info_(std::move(info)) {}

  double value(const Vec& y) const { return impl_->jet(y, 0).value; }
  Vec gradient(const Vec& y) const { return impl_->jet(y, 1).grad; }
  Mat hessian(const Vec& y) const { return impl_->jet(y, 2).hess; }
  Jet jet(const Vec& y, int order = 2) const { return impl_->jet(y, order); }

  const TestFunctionInfo& info() const { return info_; }
  TestFunctionInfo& mutable_info() { return info_; }
  bool valid() const { return static_cast<bool>(impl_); }

  /// a·f + c (membership flags follow the sign of a).
  TestFunction affine(double a, double c = 0.0) const;
  TestFunction negated() const { return affine(-1.0); }

 private:
  std::shared_ptr<const TestFunctionImpl> impl_;
  TestFunctionInfo info_;
};

/// "kind(x0,x1,...;r)" with 6 significant digits.
std::string function_id(const std::string& kind, const Vec& x, double r);

TestFunction constant_function(int dim, double c);
/// Function from explicit value/gradient/Hessian callbacks.
TestFunction lambda_function(std::string id, int dim, std::function<double(const Vec&)> f,
                             std::function<Vec(const Vec&)> grad, std::function<Mat(const Vec&)> hess,
                             TestFunctionInfo info = {});

// ---------------------------------------------------------------------------
// one-dimensional profiles

class Profile1D {
 public:
  virtual ~Profile1D() = default;
  virtual double value(double s) const = 0;
  virtual double d1(double s) const = 0;
  virtual double d2(double s) const = 0;
};

/// C² quintic smoothstep cutoff. Decreasing kinds equal 1 below `lo`, 0 above `hi`;
/// the increasing ramp equals 0 below `lo`, 1 above `hi`.
class Cutoff : public Profile1D {
 public:
  enum class Kind { Xi, Zeta, Ramp };
  Cutoff(Kind kind, double lo, double hi);
  double value(double s) const override;
  double d1(double s) const override;
  double d2(double s) const override;
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double max_d1() const;
  double max_d2() const;

 private:
  Kind kind_;
  double lo_, hi_;
};

/// ξ (thresholds 1/2, 1), ζ_x (thresholds 5λ/4, 23λ/12; pass {λ}) or the ramp of the 𝒱-bump.
Cutoff cutoff(Cutoff::Kind kind, const std::vector<double>& thresholds);

/// The piecewise profile l_{δ,ε} and its one-sided box mollification of width w (w = 0: exact).
class VProfile : public Profile1D {
 public:
  VProfile(double delta, double eps, double w);
  double value(double s) const override;
  double d1(double s) const override;
  double d2(double s) const override;

  double exact_value(double s) const;
  double exact_d1(double s) const;
  double exact_d2(double s) const;

  double delta() const { return delta_; }
  double eps() const { return eps_; }
  double width() const { return w_; }
  double kappa() const;         // |l''| <= 2√ε for s >= ε - κ
  double final_value() const;   // constant value for s >= ε + √ε
  double breakpoint(int k) const { return b_[k]; }

 private:
  double antideriv(double s) const;
  double delta_, eps_, w_;
  double c_, K_, C_;
  double b_[4];
  double Lb_[4];
};

VProfile v_profile(double delta, double eps, double w = -1.0);

/// Literal piecewise formula without the C1 repair; kept to document its jump.
double printed_profile(double delta, double eps, double s);

// ---------------------------------------------------------------------------
// bumps

TestFunction interior_bump(const DomainSpec& d, const Vec& x, double r);

struct GDeltaEpsInfo {
  double sup_bound = 0.0;      // final constant value (<= 5ε)
  double grad_bound = 0.0;     // sup l' (<= 2√ε)
  double second_order_lower = 0.0;  // 2 α_x
  double kappa = 0.0;
  double band_lo = 0.0, band_hi = 0.0;
};
TestFunction g_delta_eps(const DomainSpec& d, const VPoint& v, double delta, double eps,
                         const CoefficientField* coef = nullptr, double w = -1.0, GDeltaEpsInfo* out = nullptr);

TestFunction v_bump(const DomainSpec& d, const VPoint& v, double r);

struct ConeModel {
  enum class Kind { Ray, Circular, Sector, Polyhedral };
  Kind kind = Kind::Polyhedral;
  int dim = 0;
  std::vector<Vec> base;          // unit vectors -γ_i(x)/|γ_i(x)|, generators of K_x
  Vec axis;                       // Circular / Ray
  double half_angle = 0.0;        // Circular
  Vec ray_lo, ray_hi;             // Sector (2D): extreme unit rays, counter-clockwise from lo to hi
  Eigen::MatrixXd generators;     // Polyhedral fattened generators (columns)
  double delta = 0.0;             // fattening radius δ_x
  double R = 1.0;                 // truncation R_x

  /// Exact Euclidean distance to the (untruncated) fattened cone, optional unit gradient.
  double distance(const Vec& z, Vec* grad = nullptr) const;
  /// Distance of a unit vector p to the cone boundary when p is inside (negative when outside).
  double inradius(const Vec& p) const;
};

/// Build K_{x,δ} from reflection directions and normals.
ConeModel make_cone(const std::vector<Vec>& gammas, double delta);

class MollifiedConeDistance {
 public:
  MollifiedConeDistance() = default;
  MollifiedConeDistance(ConeModel cone, double eta, double lambda, double eps);
  double value(const Vec& z) const;
  Vec gradient(const Vec& z) const;
  Mat hessian(const Vec& z) const;
  /// value and gradient in one sweep
  double value_grad(const Vec& z, Vec* grad) const;
  double width() const { return w_; }
  double eta() const { return eta_; }
  double lambda() const { return lambda_; }
  double eps() const { return eps_; }
  double theta() const { return theta_; }
  void set_theta(double t) { theta_ = t; }
  double hessian_bound() const { return 3.0 / eta_ + 1.0; }
  const ConeModel& cone() const { return cone_; }

 private:
  ConeModel cone_;
  double eta_ = 0, lambda_ = 0, eps_ = 0, w_ = 0, theta_ = 0;
  std::vector<Vec> offsets_;
  std::vector<double> weights_;
};

MollifiedConeDistance mollified_cone_distance(const ConeModel& cone, double eta, double lambda, double eps);

/// Unit-scale data of a boundary bump (everything that does not depend on r; translation
/// invariant for polyhedral constant reflection).
struct BumpShape {
  std::vector<int> pieces;  // ℐ(x)
  double delta = 0, beta = 0, R = 0, lambda = 0, eta = 0, eps = 0, theta = 0;
  Vec q, shift;             // shift = λ (R/2) q
  MollifiedConeDistance ell;
  double core_ratio = 0;    // g = 1 on |y-x| <= core_ratio·r
  double half_ratio = 0;    // g > 1/2 on |y-x| < half_ratio·r
  double A = 0;
  double curvature_radius = kInf;  // curved pieces: radius on which the fattened cone covers -γ(y)
  bool exact_support = true;       // support bound certified analytically
};

BumpShape make_bump_shape(const DomainSpec& d, const Vec& x);
/// Clearance of a boundary point x: distance to 𝒱 and to every piece not active at x.
double boundary_clearance(const DomainSpec& d, const Vec& x, const std::vector<int>& active);

TestFunction boundary_bump(const DomainSpec& d, const Vec& x, double r);
TestFunction boundary_bump_from_shape(std::shared_ptr<const BumpShape> shape, const Vec& x, double r);

// ---------------------------------------------------------------------------
// membership

struct HReport {
  bool pass = true;
  double worst_flux = -kInf;        // max <γ_i(y), ∇f(y)>
  double worst_v_variation = 0.0;   // max |f(y) - f(v)| + |∇f(y)| on small balls around 𝒱
  double worst_outside = 0.0;       // max |f(y) - outside value| outside the support ball
  int boundary_samples = 0;
  nlohmann::json to_json() const;
};
HReport check_H(const TestFunction& f, const DomainSpec& d, int samples, std::uint64_t seed, double tol = 1e-10);

// ---------------------------------------------------------------------------
// f_{x,eps} family: zero near x and above 1/2 away from it

struct FamilyOptions {
  double kappa = 0.5;     // support radius / clearance for level lattices
  double q = 0.5;         // level ratio
  double depth = 1e-5;    // finest clearance level relative to ε
};

class Family;

struct FamilyConstants {
  double c = 0.5;
  double C = 0.0;
};

class Family {
 public:
  struct Center {
    Vec x;
    double s = 0;          // support radius
    int stratum = -1;      // -1: 𝒱 bump
    int level = 0;
  };
  struct Impl;

  Family() = default;
  explicit Family(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

  /// f_{x,ε}: the sum over centers far from the smallest-index cover center of x.
  TestFunction member(const Vec& x) const;
  /// All centers whose support contains y (with their bump functions).
  std::vector<Center> centers_near(const Vec& y) const;
  /// Sum of all bumps at y (used for coverage diagnostics).
  double total(const Vec& y) const;
  /// Index and location of the smallest-index cover center within ε/2 of x.
  std::pair<long long, Vec> cover_center(const Vec& x) const;

  double eps() const;
  double N() const;
  FamilyConstants constants() const;
  nlohmann::json manifest() const;
  /// Individual bumps whose centers lie within `radius` of `center` (at most max_count).
  std::vector<TestFunction> bumps_near(const Vec& center, double radius, std::size_t max_count) const;

 private:
  std::shared_ptr<const Impl> impl_;
};

Family assemble_family(const DomainSpec& d, const CoefficientField& coef, double N, double eps,
                       FamilyOptions opt = {});

}  // namespace refdiff
