#pragma once

#include "doctest.h"

#include "refdiff/core.hpp"
#include "refdiff/rng.hpp"
#include "refdiff/testfn.hpp"

#include <cmath>
#include <cstdint>

namespace refdiff::test {

// Hand-rolled generators over the library's counter RNG.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed, 0x7e57) {}
  double uniform(double a, double b) { return a + (b - a) * rng_.uniform(); }
  int integer(int lo, int hi) { return lo + static_cast<int>(rng_.uniform() * (hi - lo + 1)); }
  double normal() { return rng_.normal(); }
  Vec point(const Vec& lo, const Vec& hi) {
    Vec x(lo.size());
    for (int k = 0; k < lo.size(); ++k) x(k) = uniform(lo(k), hi(k));
    return x;
  }
  Vec gaussian(int dim) {
    Vec x(dim);
    for (int k = 0; k < dim; ++k) x(k) = normal();
    return x;
  }
  Vec direction(int dim) {
    Vec x = gaussian(dim);
    return x / x.norm();
  }
  Mat spd(int dim, double floor = 0.1) {
    Mat m(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) m(i, j) = normal();
    return m * m.transpose() + floor * Mat::Identity(dim, dim);
  }

 private:
  CounterRng rng_;
};

inline Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}
inline Vec vec1(double a) {
  Vec v(1);
  v << a;
  return v;
}
inline Vec vec3(double a, double b, double c) {
  Vec v(3);
  v << a, b, c;
  return v;
}

// max relative deviation of gradient and Hessian from central differences of the lower order
struct FdCheck {
  double grad = 0.0, hess = 0.0, asym = 0.0;
};
inline FdCheck fd_check(const TestFunction& f, const Vec& y, double h = 1e-5) {
  FdCheck out;
  Jet j = f.jet(y, 2);
  const int J = static_cast<int>(y.size());
  for (int k = 0; k < J; ++k) {
    Vec e = unit(J, k) * h;
    double d = (f.value(y + e) - f.value(y - e)) / (2 * h);
    out.grad = std::max(out.grad, std::abs(d - j.grad(k)) / (1.0 + j.grad.norm()));
    Vec dg = (f.gradient(y + e) - f.gradient(y - e)) / (2 * h);
    for (int m = 0; m < J; ++m)
      out.hess = std::max(out.hess, std::abs(dg(m) - j.hess(m, k)) / (1.0 + j.hess.cwiseAbs().maxCoeff()));
  }
  out.asym = (j.hess - j.hess.transpose()).cwiseAbs().maxCoeff();
  return out;
}

}  // namespace refdiff::test
