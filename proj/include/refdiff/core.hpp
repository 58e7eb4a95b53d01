#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace refdiff {

// Upper bound on the state dimension; keeps small vectors off the heap.
inline constexpr int kMaxDim = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

enum class ErrorCode {
  InvalidArgument,
  EmptyActiveSet,
  LPFailure,
  SamplingFailure,
  ParallelNormals,
  ChartMissing,
  BadThresholds,
  TooClose,
  BadParameters,
  RadiusTooLarge,
  QPFailure,
  BandEmpty,
  NotInU,
  UnboundedUnsupported,
  MissingDerivatives,
  OffFace,
  OffEdge,
  NotInH,
  ZeroMass,
  DivergentMass,
  NoConvergence,
  Infeasible,
  IllPosedParameters,
  NoClosedForm,
};

const char* to_string(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kEps = std::numeric_limits<double>::epsilon();

// Central-difference steps for first and second derivatives.
inline double fd_step1(double xnorm) { return std::cbrt(kEps) * (1.0 + xnorm); }
inline double fd_step2(double xnorm) { return std::pow(kEps, 0.25) * (1.0 + xnorm); }

inline Vec unit(int dim, int k) {
  Vec e = Vec::Zero(dim);
  e(k) = 1.0;
  return e;
}

}  // namespace refdiff
