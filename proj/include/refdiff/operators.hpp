#pragma once

#include "refdiff/model.hpp"
#include "refdiff/testfn.hpp"

#include <optional>
#include <string>
#include <vector>

namespace refdiff {

struct Density {
  std::string name;
  ScalarField value;
  VectorField gradient;  // optional
  MatrixField hessian;   // optional
  bool analytic() const { return static_cast<bool>(gradient) && static_cast<bool>(hessian); }
  Density scaled(double s) const;
};

enum class DerivativeMode { Auto, Analytic, FiniteDifference };

double apply_L(const CoefficientField& coef, const TestFunction& f, const Vec& x);
double apply_L(const CoefficientField& coef, const Jet& jet, const Vec& x);

double apply_L_star(const CoefficientField& coef, const Density& p, const Vec& x,
                    DerivativeMode mode = DerivativeMode::Auto);

/// <n^i(x), Σ_j ∂a_{·j}/∂x_j(x)>
double K_i(const CoefficientField& coef, const DomainSpec& d, const Vec& x, int i,
           DerivativeMode mode = DerivativeMode::Auto);

double face_residual(const CoefficientField& coef, const DomainSpec& d, const Density& p, const Vec& x, int i,
                     DerivativeMode mode = DerivativeMode::Auto);
double edge_residual(const CoefficientField& coef, const DomainSpec& d, const Density& p, const Vec& x, int i, int j);

struct BarPlan {
  int interior = 400;     // interior sample count
  int face = 64;          // quadrature resolution per piece
  int edge = 64;          // samples per edge
  DerivativeMode mode = DerivativeMode::Auto;
  double tol_analytic = 1e-6;
  double tol_fd = 1e-3;   // multiplied by scale
  double tol_override = -1.0;  // absolute tolerance for every condition when >= 0
  std::uint64_t seed = 1;
  int threads = 0;
  int mass_resolution = 0;  // 0: default
};

struct ResidualEntry {
  std::vector<int> pieces;
  double residual = 0.0;
  int samples = 0;
  double tolerance = 0.0;
  bool pass = true;
};

struct BarReport {
  double interior_residual = 0.0;
  int interior_samples = 0;
  double interior_tolerance = 0.0;
  bool interior_pass = true;
  std::vector<ResidualEntry> faces;
  std::vector<ResidualEntry> edges;
  double mass = 0.0;
  bool tail_warning = false;
  double scale = 0.0;
  double sup_p = 0.0;
  bool analytic = false;
  bool pass() const;
  nlohmann::json to_json() const;
};

BarReport verify_bar(const CoefficientField& coef, const DomainSpec& d, const Density& p, const BarPlan& plan = {});

struct Measure {
  std::vector<Vec> points;
  std::vector<double> weights;
  enum class Kind { Empirical, Quadrature } kind = Kind::Quadrature;
  /// quadrature measures: the same rule at half resolution (error estimate)
  std::shared_ptr<const Measure> coarse;
  double floor = 0.0;  // additive error floor
  double tail = 0.0;   // estimated mass outside the sampling box (enters the error times max |ℒf|)
};

struct WeakResidual {
  std::string id;
  double value = 0.0;
  double error = 0.0;
};

WeakResidual weak_residual(const CoefficientField& coef, const TestFunction& f, const Measure& pi,
                           const DomainSpec* check_domain = nullptr, int threads = 0);

struct NormalizedDensity {
  Density density;
  double mass = 0.0;
};

NormalizedDensity normalize_density(const Density& p, const DomainSpec& d, int resolution = 0);

/// Midpoint-grid quadrature of a density over Ḡ ∩ box (normalised), with a half-resolution companion.
Measure density_measure(const Density& p, const DomainSpec& d, int resolution);
/// Point mass.
Measure dirac_measure(const Vec& x);

double integrate_box(const DomainSpec& d, const ScalarField& f, int resolution, const Vec& lo, const Vec& hi);

}  // namespace refdiff
