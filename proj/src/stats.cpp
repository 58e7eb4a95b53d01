#include "refdiff/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace refdiff {

double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
  if (x.empty()) return 0.0;
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double F = cdf(x[i]);
    d = std::max({d, (i + 1) / n - F, F - i / n});
  }
  return d;
}

double ks_statistic(const std::vector<double>& x, const std::vector<double>& w,
                    const std::function<double(double)>& cdf) {
  std::vector<size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  double W = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(W > 0)) return 0.0;
  double c = 0.0, d = 0.0;
  for (size_t k = 0; k < idx.size();) {
    // ties share one jump
    size_t j = k;
    double before = c;
    while (j < idx.size() && x[idx[j]] == x[idx[k]]) c += w[idx[j++]] / W;
    double F = cdf(x[idx[k]]);
    d = std::max({d, c - F, F - before});
    k = j;
  }
  return d;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) return 0.0;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    double t = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= t) ++i;
    while (j < b.size() && b[j] <= t) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

double pairwise_sum(const double* v, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  std::size_t h = n / 2;
  return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

MeanSE mean_se(const std::vector<double>& v) {
  MeanSE r;
  if (v.empty()) return r;
  const double n = static_cast<double>(v.size());
  r.mean = pairwise_sum(v) / n;
  if (v.size() < 2) return r;
  std::vector<double> sq(v.size());
  for (size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - r.mean) * (v[i] - r.mean);
  r.se = std::sqrt(pairwise_sum(sq) / (n - 1) / n);
  return r;
}

}  // namespace refdiff
