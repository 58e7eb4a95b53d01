#include "refdiff/simulate.hpp"

#include "refdiff/parallel.hpp"
#include "refdiff/stats.hpp"

#include <algorithm>
#include <cmath>

namespace refdiff {

namespace {

bool all_half_spaces(const DomainSpec& d) {
  for (const auto& p : d.pieces)
    if (!p.is_half_space()) return false;
  return true;
}

double vtol(double tol, const Vec& x) { return tol * (1.0 + x.norm()); }

// Solve the equalities n_k·(y + Σ_{i∈S} η_i γ_i) = c_k on S; false if singular or inconsistent.
bool solve_on(const DomainSpec& d, const Vec& y, const std::vector<int>& S, Eigen::VectorXd& eta) {
  const int m = static_cast<int>(S.size());
  Eigen::MatrixXd M(m, m);
  Eigen::VectorXd rhs(m);
  for (int a = 0; a < m; ++a) {
    const auto& Pk = d.pieces[S[a]];
    rhs(a) = -Pk.value(y);
    for (int b = 0; b < m; ++b) M(a, b) = Pk.n().dot(d.pieces[S[b]].gamma_const());
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(M);
  eta = cod.solve(rhs);
  return (M * eta - rhs).norm() <= 1e-9 * (1.0 + rhs.norm());
}

Vec apply_push(const DomainSpec& d, const Vec& y, const std::vector<int>& S, const Eigen::VectorXd& eta) {
  Vec x = y;
  for (size_t a = 0; a < S.size(); ++a) x += eta(a) * d.pieces[S[a]].gamma_const();
  return x;
}

bool feasible(const DomainSpec& d, const Vec& x, double tol) { return min_piece_value(d, x) >= -vtol(tol, x); }

ReflectResult finish(const DomainSpec& d, const Vec& x, const std::vector<int>& S, const Eigen::VectorXd& eta,
                     int it) {
  ReflectResult r;
  r.x = x;
  r.eta.assign(d.num_pieces(), 0.0);
  for (size_t a = 0; a < S.size(); ++a) r.eta[S[a]] = std::max(0.0, eta(a));
  r.iterations = it;
  return r;
}

ReflectResult reflect_polyhedral(const DomainSpec& d, const Vec& y, double tol) {
  const int m = d.num_pieces();
  std::vector<int> S;
  for (int i = 0; i < m; ++i)
    if (d.pieces[i].value(y) < -vtol(tol, y)) S.push_back(i);
  const int max_it = std::max(8, 1 << std::min(m, 16));
  Eigen::VectorXd eta;
  for (int it = 1; it <= max_it; ++it) {
    if (!solve_on(d, y, S, eta)) break;
    int neg = -1;
    for (int a = 0; a < static_cast<int>(S.size()); ++a)
      if (eta(a) < -tol && (neg < 0 || eta(a) < eta(neg))) neg = a;
    if (neg >= 0) {
      S.erase(S.begin() + neg);
      continue;
    }
    Vec x = apply_push(d, y, S, eta);
    int worst = -1;
    double wv = -vtol(tol, x);
    for (int i = 0; i < m; ++i) {
      double v = d.pieces[i].value(x);
      if (v < wv && std::find(S.begin(), S.end(), i) == S.end()) {
        wv = v;
        worst = i;
      }
    }
    if (worst < 0) return finish(d, x, S, eta, it);
    S.push_back(worst);
    std::sort(S.begin(), S.end());
  }
  // the greedy update cycled: enumerate active sets
  if (m <= 16) {
    for (int size = 1; size <= m; ++size) {
      for (unsigned mask = 1; mask < (1u << m); ++mask) {
        if (__builtin_popcount(mask) != size) continue;
        std::vector<int> T;
        for (int i = 0; i < m; ++i)
          if (mask & (1u << i)) T.push_back(i);
        if (!solve_on(d, y, T, eta)) continue;
        if ((eta.array() < -tol).any()) continue;
        Vec x = apply_push(d, y, T, eta);
        if (feasible(d, x, tol)) return finish(d, x, T, eta, max_it);
      }
    }
  }
  throw Error(ErrorCode::NoConvergence, "no complementary projection found");
}

ReflectResult reflect_smooth(const DomainSpec& d, const Vec& y, double tol) {
  const int m = d.num_pieces();
  std::vector<int> S;
  for (int i = 0; i < m; ++i)
    if (d.pieces[i].value(y) < -vtol(tol, y)) S.push_back(i);
  std::vector<double> eta(m, 0.0);
  Vec x = y;
  for (int it = 1; it <= 50; ++it) {
    // directions at the current arrival estimate
    std::vector<Vec> g(m);
    for (int i : S) g[i] = d.pieces[i].gamma(x);
    Vec xn = y;
    for (int i : S) xn += eta[i] * g[i];
    x = xn;
    const int k = static_cast<int>(S.size());
    Eigen::VectorXd F(k);
    Eigen::MatrixXd Jm(k, k);
    for (int a = 0; a < k; ++a) {
      F(a) = d.pieces[S[a]].value(x);
      Vec gr = d.pieces[S[a]].grad(x);
      for (int b = 0; b < k; ++b) Jm(a, b) = gr.dot(g[S[b]]);
    }
    bool others_ok = true;
    for (int i = 0; i < m; ++i)
      if (std::find(S.begin(), S.end(), i) == S.end() && d.pieces[i].value(x) < -vtol(tol, x)) others_ok = false;
    if ((k == 0 || F.cwiseAbs().maxCoeff() <= vtol(tol, x)) && others_ok) {
      ReflectResult r;
      r.x = x;
      r.eta = eta;
      r.iterations = it;
      return r;
    }
    if (k > 0) {
      Eigen::VectorXd step = Jm.completeOrthogonalDecomposition().solve(F);
      for (int a = 0; a < k; ++a) eta[S[a]] -= step(a);
    }
    std::vector<int> keep;
    for (int i : S)
      if (eta[i] >= 0.0) keep.push_back(i);
      else eta[i] = 0.0;
    if (others_ok) {
      S = keep;
    } else {
      for (int i = 0; i < m; ++i)
        if (std::find(keep.begin(), keep.end(), i) == keep.end() && d.pieces[i].value(x) < -vtol(tol, x))
          keep.push_back(i);
      std::sort(keep.begin(), keep.end());
      S = keep;
    }
  }
  throw Error(ErrorCode::NoConvergence, "fixed-point projection did not converge");
}

}  // namespace

ReflectResult reflect(const DomainSpec& d, const Vec& y, double tol) {
  if (feasible(d, y, tol)) {
    ReflectResult r;
    r.x = y;
    r.eta.assign(d.num_pieces(), 0.0);
    return r;
  }
  return all_half_spaces(d) ? reflect_polyhedral(d, y, tol) : reflect_smooth(d, y, tol);
}

// ---------------------------------------------------------------------------

Vec Stepper::single(const Vec& x, double h, CounterRng& rng, std::vector<double>& eta) const {
  const int m = d_.num_pieces();
  Vec b = coef_.drift(x);
  Mat S = coef_.dispersion(x);
  Vec z = rng.normal_vec(static_cast<int>(S.cols()));
  Vec y = x + b * h + S * z * std::sqrt(h);
  eta.assign(m, 0.0);
  if (scheme_ == Scheme::Bridge) {
    Mat a = S * S.transpose();
    Vec push = Vec::Zero(x.size());
    for (int i = 0; i < m; ++i) {
      const auto& P = d_.pieces[i];
      double U = rng.uniform();  // always drawn so streams stay aligned
      Vec n = P.normal(x);
      double u0, u1;
      if (P.is_half_space()) {
        u0 = P.value(x);
        u1 = P.value(y);
      } else {
        double gn = P.grad(x).norm();
        u0 = P.value(x) / gn;
        u1 = u0 + n.dot(y - x);
      }
      double s2 = n.dot(a * n) * h;
      double mn = s2 > 0 ? 0.5 * (u0 + u1 - std::sqrt((u1 - u0) * (u1 - u0) - 2.0 * s2 * std::log(U)))
                         : std::min(u0, u1);
      if (mn < 0) {
        eta[i] = -mn;
        push += -mn * P.gamma(x);
      }
    }
    y += push;
  }
  if (!feasible(d_, y, tol_)) {
    ReflectResult r = reflect(d_, y, tol_);
    for (int i = 0; i < m; ++i) eta[i] += r.eta[i];
    return r.x;
  }
  return y;
}

Stepper::Result Stepper::step(const Vec& x, double h, std::uint64_t seed, std::uint64_t path, std::uint64_t k,
                              int max_halvings) const {
  Result out;
  for (int level = 0; level <= max_halvings; ++level) {
    try {
      Vec cur = x;
      std::vector<double> total(d_.num_pieces(), 0.0), eta;
      const long sub = 1L << level;
      CounterRng rng(seed, path, k, static_cast<std::uint64_t>(level));
      for (long s = 0; s < sub; ++s) {
        cur = single(cur, h / sub, rng, eta);
        for (size_t i = 0; i < eta.size(); ++i) total[i] += eta[i];
      }
      out.x = cur;
      out.eta = total;
      out.halvings = level;
      return out;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoConvergence) throw;
    }
  }
  out.x = x;
  out.eta.assign(d_.num_pieces(), 0.0);
  out.halvings = max_halvings;
  out.ok = false;
  return out;
}

Trajectory simulate_path(const DomainSpec& d, const CoefficientField& coef, const Vec& x0, const SimOptions& opt) {
  if (!(opt.dt > 0) || !(opt.T >= 0)) throw Error(ErrorCode::InvalidArgument, "need dt > 0 and T >= 0");
  if (opt.record_every < 1) throw Error(ErrorCode::InvalidArgument, "record_every must be >= 1");
  if (contains(d, x0).location == Location::Exterior)
    throw Error(ErrorCode::InvalidArgument, "initial point outside the domain");
  const int m = d.num_pieces();
  Stepper stepper(d, coef, opt.scheme, opt.tol);
  Trajectory tr;
  tr.dt = opt.dt;
  tr.record_every = opt.record_every;
  tr.seed = opt.seed;
  tr.path = opt.path;
  tr.exit_radii = opt.exit_radii;
  tr.exit_times.assign(opt.exit_radii.size(), std::nan(""));
  const long n = static_cast<long>(std::llround(opt.T / opt.dt));
  tr.steps = n;
  tr.states.reserve(n / opt.record_every + 1);
  std::vector<double> cum(m, 0.0);
  Vec x = x0;
  auto check_exit = [&](double t) {
    double r = x.norm();
    for (size_t j = 0; j < tr.exit_radii.size(); ++j)
      if (std::isnan(tr.exit_times[j]) && r >= tr.exit_radii[j]) tr.exit_times[j] = t;
  };
  tr.t.push_back(0.0);
  tr.states.push_back(x);
  tr.pushing.push_back(cum);
  check_exit(0.0);
  for (long k = 0; k < n; ++k) {
    auto r = stepper.step(x, opt.dt, opt.seed, opt.path, static_cast<std::uint64_t>(k), opt.max_halvings);
    if (!r.ok) {
      if (opt.throw_on_failure)
        throw Error(ErrorCode::NoConvergence, "projection failed at step " + std::to_string(k));
      tr.failed_steps.push_back(k);
    }
    if (r.halvings > 0) ++tr.halved_steps;
    x = r.x;
    for (int i = 0; i < m; ++i) cum[i] += r.eta[i];
    double t = (k + 1) * opt.dt;
    check_exit(t);
    if ((k + 1) % opt.record_every == 0) {
      tr.t.push_back(t);
      tr.states.push_back(x);
      tr.pushing.push_back(cum);
    }
  }
  return tr;
}

Trajectory simulate_path(const DomainSpec& d, const CoefficientField& coef, const Vec& x0, double T, double dt,
                         std::uint64_t seed) {
  SimOptions o;
  o.T = T;
  o.dt = dt;
  o.seed = seed;
  return simulate_path(d, coef, x0, o);
}

Measure EmpiricalMeasure::measure() const {
  Measure m;
  m.kind = Measure::Kind::Empirical;
  m.points = points;
  m.weights = weights;
  return m;
}

EmpiricalMeasure occupation_measure(const Trajectory& traj, double burn_in) {
  if (!(burn_in >= 0.0 && burn_in < 1.0)) throw Error(ErrorCode::InvalidArgument, "burn-in must lie in [0, 1)");
  EmpiricalMeasure em;
  const size_t n = traj.states.size();
  size_t skip = static_cast<size_t>(std::floor(burn_in * n));
  if (skip >= n) skip = n - 1;
  em.discarded = skip;
  em.points.assign(traj.states.begin() + skip, traj.states.end());
  em.weights.assign(em.points.size(), 1.0 / em.points.size());
  return em;
}

BoundaryOccupation boundary_occupation(const DomainSpec& d, const Trajectory& traj, double eps, double burn_in) {
  if (!(eps > 0)) throw Error(ErrorCode::InvalidArgument, "shell width must be positive");
  EmpiricalMeasure em = occupation_measure(traj, burn_in);
  BoundaryOccupation out;
  double nb = 0, nv = 0;
  for (const auto& x : em.points) {
    double dist = kInf;
    for (const auto& p : d.pieces) dist = std::min(dist, p.distance(x));
    if (dist <= eps) ++nb;
    if (distance_to_V(d, x) <= eps) ++nv;
  }
  out.boundary = nb / em.points.size();
  out.V = nv / em.points.size();
  return out;
}

Vec resolvent_sample(const DomainSpec& d, const CoefficientField& coef, const Vec& y, double lambda, double dt,
                     std::uint64_t seed, std::uint64_t path, Scheme scheme) {
  if (!(lambda > 0) || !(dt > 0)) throw Error(ErrorCode::InvalidArgument, "need lambda > 0 and dt > 0");
  CounterRng clock(seed, path, 0x7e5017e);
  double t = clock.exponential(lambda);
  Stepper st(d, coef, scheme);
  const long n = static_cast<long>(std::floor(t / dt));
  Vec x = y;
  for (long k = 0; k < n; ++k) x = st.step(x, dt, seed, path, static_cast<std::uint64_t>(k)).x;
  double rem = t - n * dt;
  if (rem > 1e-15) x = st.step(x, rem, seed, path, static_cast<std::uint64_t>(n)).x;
  return x;
}

nlohmann::json SubmartingaleCurve::to_json() const {
  return {{"t", t}, {"mean", mean}, {"se", se}, {"nondecreasing", nondecreasing}, {"worst_drop", worst_drop}};
}

SubmartingaleCurve submartingale_estimate(const DomainSpec& d, const CoefficientField& coef, const TestFunction& f,
                                          const Ensemble& e, std::uint64_t seed, bool check_membership) {
  if (check_membership) {
    HReport h = check_H(f.negated(), d, 400, seed);
    if (!h.pass) throw Error(ErrorCode::NotInH, "-f fails the membership check: " + h.to_json().dump());
  }
  if (e.paths < 1 || !(e.dt > 0)) throw Error(ErrorCode::InvalidArgument, "need paths >= 1 and dt > 0");
  std::vector<double> cps = e.checkpoints;
  if (cps.empty()) cps = {e.T};
  std::sort(cps.begin(), cps.end());
  std::vector<long> at;  // step index of each checkpoint
  for (double c : cps) at.push_back(static_cast<long>(std::llround(c / e.dt)));
  const long n = at.back();
  const size_t K = cps.size();
  std::vector<std::vector<double>> val(K + 1, std::vector<double>(e.paths));
  const double f0 = f.value(e.x0);
  Stepper st(d, coef, e.scheme);
  parallel_for(static_cast<size_t>(e.paths), e.threads, [&](size_t p) {
    Vec x = e.x0;
    double I = 0.0, Lprev = apply_L(coef, f, x);
    size_t c = 0;
    val[0][p] = f0;
    for (long k = 0; k < n && c < K; ++k) {
      x = st.step(x, e.dt, seed, p, static_cast<std::uint64_t>(k)).x;
      double Lx = apply_L(coef, f, x);
      I += 0.5 * (Lprev + Lx) * e.dt;
      Lprev = Lx;
      while (c < K && at[c] == k + 1) val[++c][p] = f.value(x) - I;
    }
    while (c < K) val[++c][p] = f.value(x) - I;
  });
  SubmartingaleCurve out;
  out.t.push_back(0.0);
  out.t.insert(out.t.end(), cps.begin(), cps.end());
  for (size_t k = 0; k <= K; ++k) {
    MeanSE ms = mean_se(val[k]);
    out.mean.push_back(ms.mean);
    out.se.push_back(ms.se);
  }
  for (size_t k = 0; k + 1 < out.mean.size(); ++k) {
    double comb = std::sqrt(out.se[k] * out.se[k] + out.se[k + 1] * out.se[k + 1]);
    double drop = out.mean[k] - out.mean[k + 1];
    if (drop > 2.0 * comb) out.nondecreasing = false;
    if (comb > 0) out.worst_drop = std::max(out.worst_drop, drop / (2.0 * comb));
    else if (drop > 0) out.worst_drop = kInf;
  }
  return out;
}

std::optional<double> first_exit(const Trajectory& traj, double r) {
  if (r <= 0) return 0.0;
  for (size_t j = 0; j < traj.exit_radii.size(); ++j)
    if (traj.exit_radii[j] == r) {
      if (std::isnan(traj.exit_times[j])) return std::nullopt;
      return traj.exit_times[j];
    }
  for (size_t k = 0; k < traj.states.size(); ++k)
    if (traj.states[k].norm() >= r) return traj.t[k];
  return std::nullopt;
}

}  // namespace refdiff
