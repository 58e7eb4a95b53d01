#pragma once

#include "refdiff/model.hpp"
#include "refdiff/operators.hpp"
#include "refdiff/rng.hpp"
#include "refdiff/testfn.hpp"

#include <optional>
#include <vector>

namespace refdiff {

struct ReflectResult {
  Vec x;
  std::vector<double> eta;  // pushing coefficients per piece
  int iterations = 0;
};

/// x = y + Σ η_i γ_i(x) ∈ Ḡ with η_i > 0 only on pieces active at x.
ReflectResult reflect(const DomainSpec& d, const Vec& y, double tol = 1e-10);

enum class Scheme {
  Euler,   // x_{k+1} = reflect(x_k + b dt + σ √dt ξ)
  Bridge,  // as Euler, with boundary crossings inside the step sampled from the Brownian bridge
};

struct SimOptions {
  double T = 1.0;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  std::uint64_t path = 0;
  int record_every = 1;
  std::vector<double> exit_radii;
  Scheme scheme = Scheme::Bridge;
  int max_halvings = 8;
  double tol = 1e-10;
  bool throw_on_failure = false;
};

struct Trajectory {
  double dt = 0.0;
  int record_every = 1;
  std::vector<double> t;
  std::vector<Vec> states;
  std::vector<std::vector<double>> pushing;  // cumulative, one row per record, one column per piece
  std::vector<double> exit_radii;
  std::vector<double> exit_times;  // NaN when the radius was never reached
  std::uint64_t seed = 0, path = 0;
  long steps = 0;
  long halved_steps = 0;
  std::vector<long> failed_steps;  // NoConvergence events after all halvings
};

/// One transition of the scheme, keyed by (seed, path, step).
class Stepper {
 public:
  Stepper(const DomainSpec& d, const CoefficientField& coef, Scheme scheme = Scheme::Bridge, double tol = 1e-10)
      : d_(d), coef_(coef), scheme_(scheme), tol_(tol) {}
  struct Result {
    Vec x;
    std::vector<double> eta;
    int halvings = 0;
    bool ok = true;
  };
  /// Step of size h from x; on NoConvergence the step is split in halves up to max_halvings times.
  Result step(const Vec& x, double h, std::uint64_t seed, std::uint64_t path, std::uint64_t k,
              int max_halvings = 8) const;

 private:
  Vec single(const Vec& x, double h, CounterRng& rng, std::vector<double>& eta) const;
  const DomainSpec& d_;
  const CoefficientField& coef_;
  Scheme scheme_;
  double tol_;
};

Trajectory simulate_path(const DomainSpec& d, const CoefficientField& coef, const Vec& x0, const SimOptions& opt);
Trajectory simulate_path(const DomainSpec& d, const CoefficientField& coef, const Vec& x0, double T, double dt,
                         std::uint64_t seed);

struct EmpiricalMeasure {
  std::vector<Vec> points;
  std::vector<double> weights;
  std::size_t discarded = 0;
  Measure measure() const;
};

EmpiricalMeasure occupation_measure(const Trajectory& traj, double burn_in);

struct BoundaryOccupation {
  double boundary = 0.0;  // fraction of time within ε of ∂G
  double V = 0.0;         // fraction of time within ε of 𝒱
};
BoundaryOccupation boundary_occupation(const DomainSpec& d, const Trajectory& traj, double eps, double burn_in = 0.0);

/// Endpoint after an Exponential(mean λ) time started from y.
Vec resolvent_sample(const DomainSpec& d, const CoefficientField& coef, const Vec& y, double lambda, double dt,
                     std::uint64_t seed, std::uint64_t path = 0, Scheme scheme = Scheme::Bridge);

struct Ensemble {
  Vec x0;
  int paths = 1000;
  double T = 1.0;
  double dt = 1e-3;
  std::vector<double> checkpoints;  // times in (0, T]; 0 is always included
  Scheme scheme = Scheme::Bridge;
  int threads = 0;
};

struct SubmartingaleCurve {
  std::vector<double> t, mean, se;
  bool nondecreasing = true;
  double worst_drop = 0.0;  // max over k of (m_k - m_{k+1}) / (2·combined se)
  nlohmann::json to_json() const;
};

/// m(t) = E[f(ω(t)) - ∫_0^t ℒf(ω(u)) du] with standard errors; verdict at 2 combined standard errors.
SubmartingaleCurve submartingale_estimate(const DomainSpec& d, const CoefficientField& coef, const TestFunction& f,
                                          const Ensemble& e, std::uint64_t seed, bool check_membership = true);

std::optional<double> first_exit(const Trajectory& traj, double r);

}  // namespace refdiff
