#pragma once

#include "refdiff/model.hpp"
#include "refdiff/operators.hpp"
#include "refdiff/testfn.hpp"

#include <string>
#include <vector>

namespace refdiff {

struct GridSpec {
  enum class Kind { Box, Polar } kind = Kind::Box;
  std::vector<int> n;  // Box: points per dimension; Polar: {rings, angles}
  Vec lo, hi;          // Box: defaults to the domain's sampling box
  Vec center;          // Polar
  double radius = 1.0; // Polar
};

struct Grid {
  std::vector<Vec> points;
  std::vector<double> volumes;  // cell volumes (histogram oracle weights)
  double spacing = 0.0;
};

/// Interior grid; points within spacing/2 of ∂G are dropped.
Grid make_grid(const DomainSpec& d, const GridSpec& spec);

struct FamilySpec {
  int interior = 40;     // lattice points per dimension
  double radius = 0.0;   // bump support radius (0: 8 lattice spacings)
  int face = 8;          // flux-free face bumps per piece
  int boundary = 8;      // boundary bumps per piece
  int quadratic = 0;     // coordinate-quadratic functions times a cutoff, per piece
  std::vector<std::pair<double, double>> v_params;  // (δ, ε) for g_{δ,ε} at each point of 𝒱
  bool poly = true;      // interior bumps (1 - |x-c|^2/ρ^2)^4 instead of the ξ-cutoff bump
  std::uint64_t seed = 1;
};

/// Default family recipe; bounding box defaults to the domain box.
std::vector<TestFunction> make_solver_family(const DomainSpec& d, const CoefficientField& coef, const FamilySpec& spec,
                                             const Vec* lo = nullptr, const Vec* hi = nullptr);

/// Flux-free bump attached to a face: constant along γ near the face, so both signs lie in ℋ.
TestFunction face_bump(const DomainSpec& d, int piece, const Vec& c, double rho);
/// (1 - |x - c|^2/ρ^2)^4; throws TooClose unless the support stays inside G away from 𝒱.
TestFunction poly_bump(const DomainSpec& d, const Vec& c, double rho);
/// (x_k - c_k)^2 · ξ(|x - c|^2 / ρ^2).
TestFunction quadratic_cutoff(int dim, int k, const Vec& c, double rho);

enum class RowType { Inequality, Equality };

struct Constraints {
  Eigen::MatrixXd M;  // M(k, j) = ℒf_k(x_j)
  std::vector<RowType> types;
  std::vector<std::string> ids;
  std::vector<double> scale;  // per-row normalisation applied (1 when disabled)
};

struct ConstraintOptions {
  int flux_samples = 400;
  double flux_tol = 1e-7;  // relative to sup |∇f|
  bool normalize_rows = true;
  int threads = 0;
  std::uint64_t seed = 1;
};

struct Orientation {
  RowType type = RowType::Equality;
  double sign = 1.0;  // sign·f has -sign·f ∈ ℋ
  double max_flux = 0.0;
};
/// Sign and row type of f from sampled boundary fluxes; `extra` points only enter the gradient scale.
Orientation orient_function(const DomainSpec& d, const TestFunction& f, const ConstraintOptions& opt = {},
                            const std::vector<Vec>& extra = {}, std::uint64_t salt = 0);

/// Row types from sampled fluxes: equality when the flux vanishes, inequality for -f ∈ ℋ
/// (functions in ℋ are negated). Throws NotInH when neither sign is admissible.
Constraints build_constraints(const DomainSpec& d, const CoefficientField& coef, const Grid& grid,
                              const std::vector<TestFunction>& family, const ConstraintOptions& opt = {});

struct SolverConfig {
  GridSpec grid;
  FamilySpec family;
  ConstraintOptions constraints;
  double eq_weight = 1.0;
  double ineq_weight = 1.0;
  double tol = 1e-6;
  int max_iter = 10000;
  double min_improvement = 1e-12;
  bool strict = true;  // throw Infeasible when the final objective exceeds tol
};

struct GridMeasure {
  std::vector<Vec> points;
  std::vector<double> weights;
  std::vector<double> volumes;
  std::vector<double> residuals;  // (M w)_k
  std::vector<RowType> types;
  std::vector<std::string> ids;
  double objective = 0.0;
  std::vector<double> trace;  // objective per iteration
  int iterations = 0;
  bool feasible = true;
  Measure measure() const;
  nlohmann::json report() const;
};

/// Projected gradient (Armijo, Barzilai-Borwein steps) on the simplex.
GridMeasure solve_constraints(const Constraints& c, const Grid& grid, const SolverConfig& cfg);
GridMeasure solve_stationary(const DomainSpec& d, const CoefficientField& coef, const SolverConfig& cfg);

/// Σ_j |w_j - p(x_j)v_j / Σ_k p(x_k)v_k|: L1 distance to the cell-histogram of p.
double l1_to_density(const GridMeasure& m, const Density& p);

/// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v);

struct ResidualReport {
  std::vector<WeakResidual> entries;
  std::vector<RowType> types;
  double max_violation = 0.0;  // max over inequality rows of value, and over equality rows of |value|
};

ResidualReport residual_report(const GridMeasure& m, const CoefficientField& coef, const DomainSpec& d,
                               const std::vector<TestFunction>& holdout, const ConstraintOptions& opt = {});

}  // namespace refdiff
