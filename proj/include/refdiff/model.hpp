#pragma once

#include "refdiff/core.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace refdiff {

using ScalarField = std::function<double(const Vec&)>;
using VectorField = std::function<Vec(const Vec&)>;
using MatrixField = std::function<Mat(const Vec&)>;

/// Parameterisation of a curve piece (J = 2); used for quadrature and cover centers.
struct Chart {
  double t0 = 0.0, t1 = 1.0;
  bool periodic = false;
  std::function<Vec(double)> point;
  std::function<double(double)> speed;
};

class BoundaryPiece {
 public:
  enum class Kind { HalfSpace, Smooth };

  /// {x : <n, x> >= c}; gamma is rescaled so that <n, gamma> = 1.
  static BoundaryPiece half_space(const Vec& normal, double offset, const Vec& gamma);

  /// {x : phi(x) >= 0}; gamma(x) is rescaled pointwise by <n(x), gamma(x)>.
  /// `ref` names the builtin that produced it so the piece can be serialised.
  static BoundaryPiece smooth(std::string ref, nlohmann::json params, ScalarField phi, VectorField grad,
                              VectorField gamma, ScalarField signed_distance, std::optional<Chart> chart);

  Kind kind() const { return kind_; }
  bool is_half_space() const { return kind_ == Kind::HalfSpace; }
  bool constant_gamma() const { return kind_ == Kind::HalfSpace; }

  double value(const Vec& x) const;
  Vec grad(const Vec& x) const;
  Vec normal(const Vec& x) const;
  Vec gamma(const Vec& x) const;
  /// Signed distance to the piece's surface, positive on the admissible side.
  double distance(const Vec& x) const;
  /// Nearest point of the piece's surface (Newton along the gradient for smooth pieces).
  Vec project(const Vec& y) const;

  const Vec& n() const { return n_; }
  double offset() const { return c_; }
  const Vec& gamma_const() const { return g_; }
  const std::string& ref() const { return ref_; }
  const nlohmann::json& params() const { return params_; }
  const std::optional<Chart>& chart() const { return chart_; }

 private:
  Kind kind_ = Kind::HalfSpace;
  Vec n_, g_;
  double c_ = 0.0;
  std::string ref_;
  nlohmann::json params_;
  ScalarField phi_, sdist_;
  VectorField grad_, gamma_;
  std::optional<Chart> chart_;
};

struct VPoint {
  Vec x, v;
  double r = kInf, alpha = 0.0, c1 = 0.5, c2 = 2.0;
  /// Throws InvalidArgument when the field invariants are broken.
  void validate() const;
};

struct DomainSpec {
  int dim = 0;
  std::vector<BoundaryPiece> pieces;
  std::vector<VPoint> V;
  Vec lo, hi;  // sampling box
  bool well_posed = true;
  bool bounded = false;
  double active_tol_scale = 1e-9;
  std::string name;

  double active_tol(const Vec& x) const { return active_tol_scale * (1.0 + x.norm()); }
  bool polyhedral() const;
  int num_pieces() const { return static_cast<int>(pieces.size()); }
  /// Checks pieces nonempty, dimensions, and 𝒱 ⊂ ∂G.
  void validate() const;
};

struct CoefficientField {
  int dim = 0, noise_dim = 0;
  VectorField drift;
  MatrixField dispersion;
  // Optional analytic derivatives: db(i,j) = ∂b_i/∂x_j, da[m](k,l) = ∂a_kl/∂x_m,
  // d2a[m*J+n](k,l) = ∂²a_kl/∂x_m∂x_n.
  std::function<Mat(const Vec&)> drift_jacobian;
  std::function<std::vector<Mat>(const Vec&)> diffusion_gradient;
  std::function<std::vector<Mat>(const Vec&)> diffusion_hessian;
  bool bounded = true;
  bool constant = false;
  nlohmann::json meta;

  Mat diffusion(const Vec& x) const {
    Mat s = dispersion(x);
    return s * s.transpose();
  }
  bool has_analytic() const { return drift_jacobian && diffusion_gradient && diffusion_hessian; }

  static CoefficientField constant_field(const Vec& b, const Mat& sigma);
};

enum class Location { Interior, Boundary, Exterior };

struct Classification {
  Location location;
  std::vector<double> values;
};

Classification contains(const DomainSpec& d, const Vec& x);
double min_piece_value(const DomainSpec& d, const Vec& x);

std::vector<int> active_set(const DomainSpec& d, const Vec& x, double tol = -1.0);
std::vector<Vec> direction_cone(const DomainSpec& d, const Vec& x);

struct InUResult {
  bool in = false;
  Vec certificate;  // unit normal combination
  double margin = 0.0;
};
InUResult in_U(const DomainSpec& d, const Vec& x, double tol = 1e-9);
/// Same LP on explicit normals/directions.
InUResult in_U_vectors(const std::vector<Vec>& normals, const std::vector<Vec>& gammas, double tol = 1e-9);

struct Stratum {
  std::vector<int> pieces;
  Vec point;
  int dim = 0;  // dimension of the affine hull
  bool in_V = false;
  bool pass = false;
  double margin = 0.0;
};

/// Nonempty face-intersection strata of a polyhedral domain (exact active set per stratum).
std::vector<Stratum> polyhedral_strata(const DomainSpec& d);

struct CompletelySReport {
  std::vector<Stratum> strata;
  bool all_pass = true;
  int samples = 0;  // curved pieces: number of sampled boundary points
  nlohmann::json to_json() const;
};
CompletelySReport check_completely_S(const DomainSpec& d, int samples = 2000, std::uint64_t seed = 1);

struct Assumption2Report {
  bool pass = true;
  double margin_angle = kInf;       // (i)  min <v,y-x>/|y-x| - alpha
  double margin_reflect = kInf;     // (ii) min <v, gamma_i(y)>
  double margin_ellipticity = kInf; // (iii) min v'a(y)v - alpha
  double margin_inner = kInf;       // (iv) |y-x| < c1 r  =>  <v,y-x> < r, min (r - <v,y-x>)/r
  double margin_outer = kInf;       // (iv) <v,y-x> < r  =>  |y-x| < c2 r, min (c2 r - |y-x|)/r
  int interior_samples = 0, boundary_samples = 0;
  nlohmann::json to_json() const;
};
Assumption2Report check_assumption_2prime(const DomainSpec& d, const CoefficientField* coef, const VPoint& v,
                                          int samples, std::uint64_t seed);

Vec edge_normal(const DomainSpec& d, int i, int j, const Vec& x);

struct Quadrature {
  std::vector<Vec> points;
  std::vector<double> weights;
};
Quadrature boundary_quadrature(const DomainSpec& d, int piece, int resolution);

/// Uniform-ish samples on ∂G inside the box (optionally restricted to a ball).
std::vector<Vec> sample_boundary(const DomainSpec& d, int count, std::uint64_t seed,
                                 const Vec* center = nullptr, double radius = kInf);
/// Rejection samples of Ḡ inside the box (optionally restricted to a ball).
std::vector<Vec> sample_domain(const DomainSpec& d, int count, std::uint64_t seed, const Vec* center = nullptr,
                               double radius = kInf);

/// Distance from x to 𝒱 (infinite when 𝒱 is empty).
double distance_to_V(const DomainSpec& d, const Vec& x);

nlohmann::json domain_to_json(const DomainSpec& d);

}  // namespace refdiff
