#include "refdiff/testfn.hpp"

#include <algorithm>
#include <cmath>

namespace refdiff {

namespace {

double smooth_step(double t) {
  if (t <= 0) return 0.0;
  if (t >= 1) return 1.0;
  return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}
double smooth_step_d1(double t) {
  if (t <= 0 || t >= 1) return 0.0;
  double u = t * (1.0 - t);
  return 30.0 * u * u;
}
double smooth_step_d2(double t) {
  if (t <= 0 || t >= 1) return 0.0;
  return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
}

constexpr double kStepD1 = 1.875;
const double kStepD2 = 10.0 / std::sqrt(3.0);

}  // namespace

Cutoff::Cutoff(Kind kind, double lo, double hi) : kind_(kind), lo_(lo), hi_(hi) {
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi))
    throw Error(ErrorCode::BadThresholds, "cutoff thresholds must be finite and increasing");
}

double Cutoff::value(double s) const {
  double t = (s - lo_) / (hi_ - lo_);
  return kind_ == Kind::Ramp ? smooth_step(t) : 1.0 - smooth_step(t);
}
double Cutoff::d1(double s) const {
  double h = hi_ - lo_;
  double v = smooth_step_d1((s - lo_) / h) / h;
  return kind_ == Kind::Ramp ? v : -v;
}
double Cutoff::d2(double s) const {
  double h = hi_ - lo_;
  double v = smooth_step_d2((s - lo_) / h) / (h * h);
  return kind_ == Kind::Ramp ? v : -v;
}
double Cutoff::max_d1() const { return kStepD1 / (hi_ - lo_); }
double Cutoff::max_d2() const { return kStepD2 / ((hi_ - lo_) * (hi_ - lo_)); }

Cutoff cutoff(Cutoff::Kind kind, const std::vector<double>& th) {
  if (kind == Cutoff::Kind::Zeta && th.size() == 1) {
    if (!(th[0] > 0)) throw Error(ErrorCode::BadThresholds, "zeta needs lambda > 0");
    return Cutoff(kind, 1.25 * th[0], 23.0 / 12.0 * th[0]);
  }
  if (th.empty() && kind == Cutoff::Kind::Xi) return Cutoff(kind, 0.5, 1.0);
  if (th.size() != 2) throw Error(ErrorCode::BadThresholds, "expected two thresholds");
  return Cutoff(kind, th[0], th[1]);
}

// ---------------------------------------------------------------------------

VProfile::VProfile(double delta, double eps, double w) : delta_(delta), eps_(eps), w_(w) {
  if (!(delta > 0 && eps > 0 && eps < 1 && delta + std::sqrt(delta) < eps))
    throw Error(ErrorCode::BadParameters, "need 0 < delta, delta + sqrt(delta) < eps < 1");
  if (!(w >= 0 && w <= std::min(delta, eps / 2)))
    throw Error(ErrorCode::BadParameters, "mollification width must lie in [0, min(delta, eps/2)]");
  double sd = std::sqrt(delta), se = std::sqrt(eps);
  b_[0] = delta;
  b_[1] = delta + sd;
  b_[2] = eps;
  b_[3] = eps + se;
  c_ = 2.0 * (1.0 + sd) / (3.0 * sd);
  K_ = 2.0 / 3.0 * delta * (sd + 1.0) - b_[1] * b_[1];
  C_ = K_ + eps * eps + eps * se;
  // integrals of l over [b_k, b_{k+1}]
  Lb_[0] = c_ * std::pow(sd, 4) / 4.0;
  Lb_[1] = (b_[2] * b_[2] * b_[2] - b_[1] * b_[1] * b_[1]) / 3.0 + K_ * (b_[2] - b_[1]);
  Lb_[2] = C_ * se - se * (se * se * se) / 3.0;
  Lb_[3] = 0.0;
}

double VProfile::exact_value(double s) const {
  if (s <= b_[0]) return 0.0;
  if (s <= b_[1]) {
    double u = s - delta_;
    return c_ * u * u * u;
  }
  if (s <= b_[2]) return s * s + K_;
  if (s <= b_[3]) {
    double u = s - b_[3];
    return C_ - std::sqrt(eps_) * u * u;
  }
  return C_;
}

double VProfile::exact_d1(double s) const {
  if (s <= b_[0]) return 0.0;
  if (s <= b_[1]) {
    double u = s - delta_;
    return 3.0 * c_ * u * u;
  }
  if (s <= b_[2]) return 2.0 * s;
  if (s <= b_[3]) return -2.0 * std::sqrt(eps_) * (s - b_[3]);
  return 0.0;
}

double VProfile::exact_d2(double s) const {
  if (s <= b_[0]) return 0.0;
  if (s < b_[1]) return 6.0 * c_ * (s - delta_);
  if (s < b_[2]) return 2.0;
  if (s < b_[3]) return -2.0 * std::sqrt(eps_);
  return 0.0;
}

// ∫_{-inf}^{s} l, accumulated piecewise from the left breakpoint of s's piece.
double VProfile::antideriv(double s) const {
  if (s <= b_[0]) return 0.0;
  if (s <= b_[1]) {
    double u = s - delta_;
    return c_ * u * u * u * u / 4.0;
  }
  double acc = Lb_[0];
  if (s <= b_[2]) return acc + (s * s * s - b_[1] * b_[1] * b_[1]) / 3.0 + K_ * (s - b_[1]);
  acc += Lb_[1];
  if (s <= b_[3]) {
    double se = std::sqrt(eps_);
    double u = s - b_[3], u0 = b_[2] - b_[3];
    return acc + C_ * (s - b_[2]) - se * (u * u * u - u0 * u0 * u0) / 3.0;
  }
  acc += Lb_[2];
  return acc + C_ * (s - b_[3]);
}

double VProfile::value(double s) const {
  if (w_ == 0.0) return exact_value(s);
  if (s + w_ <= b_[0]) return 0.0;
  if (s >= b_[3]) return C_;
  if (s >= b_[1] && s + w_ <= b_[2]) {
    // quadratic piece: average in closed form
    double a = s, b = s + w_;
    return (a * a + a * b + b * b) / 3.0 + K_;
  }
  return (antideriv(s + w_) - antideriv(s)) / w_;
}

double VProfile::d1(double s) const {
  if (w_ == 0.0) return exact_d1(s);
  return (exact_value(s + w_) - exact_value(s)) / w_;
}

double VProfile::d2(double s) const {
  if (w_ == 0.0) return exact_d2(s);
  if (s >= b_[1] && s + w_ <= b_[2]) return 2.0;
  return (exact_d1(s + w_) - exact_d1(s)) / w_;
}

double VProfile::kappa() const {
  if (w_ == 0.0) return 0.0;
  double se = std::sqrt(eps_);
  return std::min(w_, 2.0 * se * w_ / (1.0 + se));
}

double VProfile::final_value() const { return C_; }

VProfile v_profile(double delta, double eps, double w) {
  if (w < 0) w = 0.5 * std::min(delta, eps);
  return VProfile(delta, eps, w);
}

double printed_profile(double delta, double eps, double s) {
  double sd = std::sqrt(delta), se = std::sqrt(eps);
  if (s <= delta) return 0.0;
  if (s <= delta + sd) return (2.0 * sd + 1.0) / (3.0 * sd) * std::pow(s - delta, 3);
  double base = 2.0 * delta * (sd + 1.0) - (delta + sd) * (delta + sd);
  if (s <= eps) return base + s * s;
  if (s <= eps + se) return base + eps * eps + eps * se - se * std::pow(s - eps - se, 2);
  return base + eps * eps + eps * se;
}

}  // namespace refdiff
