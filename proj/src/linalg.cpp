#include "refdiff/linalg.hpp"

#include <algorithm>
#include <vector>

namespace refdiff::linalg {

namespace {

constexpr double kPivTol = 1e-11;

// Tableau rows 0..m-1 are constraints, row m is the objective (reduced costs, maximisation:
// entering column has negative entry). Last column is the rhs.
struct Tableau {
  Eigen::MatrixXd T;
  std::vector<int> basis;
  int m, n;

  void pivot(int r, int c) {
    T.row(r) /= T(r, c);
    for (int i = 0; i <= m; ++i) {
      if (i != r && T(i, c) != 0.0) T.row(i) -= T(i, c) * T.row(r);
    }
    basis[r] = c;
  }

  // Returns Optimal or Unbounded; Bland's rule on columns [0, ncols).
  LPStatus run(int ncols, int max_iter) {
    for (int it = 0; it < max_iter; ++it) {
      int enter = -1;
      for (int j = 0; j < ncols; ++j) {
        if (T(m, j) < -kPivTol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return LPStatus::Optimal;
      int leave = -1;
      double best = kInf;
      for (int i = 0; i < m; ++i) {
        if (T(i, enter) > kPivTol) {
          double ratio = T(i, n) / T(i, enter);
          if (ratio < best - 1e-14 || (std::abs(ratio - best) <= 1e-14 && leave >= 0 && basis[i] < basis[leave])) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) return LPStatus::Unbounded;
      pivot(leave, enter);
    }
    return LPStatus::IterationLimit;
  }
};

}  // namespace

LPResult linprog(const Eigen::VectorXd& c, const Eigen::MatrixXd& A_ub, const Eigen::VectorXd& b_ub,
                 const Eigen::MatrixXd& A_eq, const Eigen::VectorXd& b_eq, int max_iter) {
  const int nv = static_cast<int>(c.size());
  const int mu = static_cast<int>(A_ub.rows());
  const int me = static_cast<int>(A_eq.rows());
  const int m = mu + me;
  // columns: original vars | slacks (mu) | artificials (m)
  const int n = nv + mu + m;
  Tableau tb;
  tb.m = m;
  tb.n = n;
  tb.T = Eigen::MatrixXd::Zero(m + 1, n + 1);
  tb.basis.assign(m, -1);
  for (int i = 0; i < mu; ++i) {
    double sgn = b_ub(i) < 0 ? -1.0 : 1.0;
    tb.T.block(i, 0, 1, nv) = sgn * A_ub.row(i);
    tb.T(i, nv + i) = sgn;
    tb.T(i, n) = sgn * b_ub(i);
  }
  for (int i = 0; i < me; ++i) {
    double sgn = b_eq(i) < 0 ? -1.0 : 1.0;
    tb.T.block(mu + i, 0, 1, nv) = sgn * A_eq.row(i);
    tb.T(mu + i, n) = sgn * b_eq(i);
  }
  for (int i = 0; i < m; ++i) {
    tb.T(i, nv + mu + i) = 1.0;
    tb.basis[i] = nv + mu + i;
  }
  // phase 1: maximise -sum(artificials)
  for (int i = 0; i < m; ++i) tb.T.row(m) -= tb.T.row(i);
  for (int i = 0; i < m; ++i) tb.T(m, nv + mu + i) = 0.0;

  LPResult res;
  LPStatus st = tb.run(n, max_iter);
  if (st == LPStatus::IterationLimit) {
    res.status = st;
    return res;
  }
  double scale = 1.0 + b_ub.cwiseAbs().sum() + b_eq.cwiseAbs().sum();
  if (-tb.T(m, n) > 1e-9 * scale) {
    res.status = LPStatus::Infeasible;
    return res;
  }
  // drive remaining artificials out of the basis
  for (int i = 0; i < m; ++i) {
    if (tb.basis[i] >= nv + mu) {
      int col = -1;
      for (int j = 0; j < nv + mu; ++j) {
        if (std::abs(tb.T(i, j)) > 1e-9) {
          col = j;
          break;
        }
      }
      if (col >= 0) tb.pivot(i, col);
    }
  }
  // phase 2 objective row
  tb.T.row(m).setZero();
  for (int j = 0; j < nv; ++j) tb.T(m, j) = -c(j);
  for (int i = 0; i < m; ++i) {
    int b = tb.basis[i];
    if (b < nv && c(b) != 0.0) tb.T.row(m) += c(b) * tb.T.row(i);
  }
  // forbid artificial columns from re-entering
  for (int i = 0; i < m; ++i) tb.T(m, nv + mu + i) = 0.0;
  // zero out artificial columns for rows that stayed artificial (redundant constraints)
  st = tb.run(nv + mu, max_iter);
  res.status = st;
  if (st != LPStatus::Optimal) return res;
  res.x = Eigen::VectorXd::Zero(nv);
  for (int i = 0; i < m; ++i) {
    if (tb.basis[i] < nv) res.x(tb.basis[i]) = tb.T(i, n);
  }
  res.value = c.dot(res.x);
  return res;
}

MarginResult simplex_margin(const Eigen::MatrixXd& M) {
  // variables: s (k), t+ , t-
  const int k = static_cast<int>(M.rows());
  const int q = static_cast<int>(M.cols());
  Eigen::VectorXd c = Eigen::VectorXd::Zero(k + 2);
  c(k) = 1.0;
  c(k + 1) = -1.0;
  Eigen::MatrixXd A_ub = Eigen::MatrixXd::Zero(q + 1, k + 2);
  Eigen::VectorXd b_ub = Eigen::VectorXd::Zero(q + 1);
  for (int j = 0; j < q; ++j) {
    A_ub.block(j, 0, 1, k) = -M.col(j).transpose();
    A_ub(j, k) = 1.0;
    A_ub(j, k + 1) = -1.0;
  }
  // t- bounded so the LP cannot be unbounded below in degenerate inputs
  double bound = 1.0 + M.cwiseAbs().maxCoeff();
  A_ub(q, k + 1) = 1.0;
  b_ub(q) = bound;
  Eigen::MatrixXd A_eq = Eigen::MatrixXd::Zero(1, k + 2);
  A_eq.block(0, 0, 1, k).setOnes();
  Eigen::VectorXd b_eq = Eigen::VectorXd::Ones(1);
  LPResult r = linprog(c, A_ub, b_ub, A_eq, b_eq);
  if (r.status != LPStatus::Optimal) throw Error(ErrorCode::LPFailure, "margin LP did not reach optimality");
  MarginResult out;
  out.t = r.x(k) - r.x(k + 1);
  out.weights = r.x.head(k);
  return out;
}

Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int max_iter) {
  const int n = static_cast<int>(A.cols());
  if (max_iter <= 0) max_iter = 3 * n + 10;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(n, false);
  Eigen::VectorXd w = A.transpose() * (b - A * x);
  const double tol = 1e-14 * (1.0 + A.cwiseAbs().maxCoeff() * (1.0 + b.norm()));
  for (int outer = 0; outer < max_iter; ++outer) {
    int jmax = -1;
    double wmax = tol;
    for (int j = 0; j < n; ++j) {
      if (!passive[j] && w(j) > wmax) {
        wmax = w(j);
        jmax = j;
      }
    }
    if (jmax < 0) return x;
    passive[jmax] = true;
    for (int inner = 0; inner < max_iter; ++inner) {
      std::vector<int> P;
      for (int j = 0; j < n; ++j)
        if (passive[j]) P.push_back(j);
      Eigen::MatrixXd AP(A.rows(), static_cast<Eigen::Index>(P.size()));
      for (size_t k = 0; k < P.size(); ++k) AP.col(static_cast<Eigen::Index>(k)) = A.col(P[k]);
      Eigen::VectorXd zP = AP.colPivHouseholderQr().solve(b);
      if (inner == 0) {
        // newly added column rejected at once: numerically converged
        Eigen::Index last = static_cast<Eigen::Index>(std::find(P.begin(), P.end(), jmax) - P.begin());
        if (zP(last) <= 0) {
          passive[jmax] = false;
          return x;
        }
      }
      bool feasible = true;
      for (Eigen::Index k = 0; k < zP.size(); ++k)
        if (zP(k) <= 0) feasible = false;
      if (feasible) {
        x.setZero();
        for (size_t k = 0; k < P.size(); ++k) x(P[k]) = zP(static_cast<Eigen::Index>(k));
        break;
      }
      double alpha = kInf;
      for (size_t k = 0; k < P.size(); ++k) {
        double zk = zP(static_cast<Eigen::Index>(k));
        if (zk <= 0) {
          double xk = x(P[k]);
          alpha = std::min(alpha, xk / (xk - zk));
        }
      }
      for (size_t k = 0; k < P.size(); ++k) {
        double zk = zP(static_cast<Eigen::Index>(k));
        x(P[k]) += alpha * (zk - x(P[k]));
      }
      for (int j = 0; j < n; ++j) {
        if (passive[j] && x(j) <= 1e-15) {
          passive[j] = false;
          x(j) = 0.0;
        }
      }
    }
    w = A.transpose() * (b - A * x);
  }
  throw Error(ErrorCode::QPFailure, "NNLS iteration limit");
}

Vec project_cone(const Eigen::MatrixXd& G, const Vec& z) {
  Eigen::VectorXd zz = z;
  Eigen::VectorXd u = nnls(G, zz);
  Vec p = G * u;
  return p;
}

}  // namespace refdiff::linalg
