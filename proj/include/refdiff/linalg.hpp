#pragma once

#include "refdiff/core.hpp"

namespace refdiff::linalg {

enum class LPStatus { Optimal, Infeasible, Unbounded, IterationLimit };

struct LPResult {
  LPStatus status = LPStatus::IterationLimit;
  double value = 0.0;
  Eigen::VectorXd x;
};

/// maximize c'x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0.
/// Dense two-phase tableau simplex with Bland's rule.
LPResult linprog(const Eigen::VectorXd& c, const Eigen::MatrixXd& A_ub, const Eigen::VectorXd& b_ub,
                 const Eigen::MatrixXd& A_eq, const Eigen::VectorXd& b_eq, int max_iter = 5000);

struct MarginResult {
  double t = 0.0;           // optimal margin
  Eigen::VectorXd weights;  // simplex weights s
};

/// max t over s in the simplex subject to sum_i s_i M(i, j) >= t for every column j.
/// Throws LPFailure if the solver does not reach optimality.
MarginResult simplex_margin(const Eigen::MatrixXd& M);

/// Lawson-Hanson: argmin_{x >= 0} |A x - b|.
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int max_iter = 0);

/// Euclidean projection of z onto the cone generated by the columns of G.
Vec project_cone(const Eigen::MatrixXd& G, const Vec& z);

}  // namespace refdiff::linalg
