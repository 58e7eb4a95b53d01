#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace refdiff {

/// Kolmogorov-Smirnov distance between the (weighted) empirical law of `x` and `cdf`.
double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf);
double ks_statistic(const std::vector<double>& x, const std::vector<double>& w,
                    const std::function<double(double)>& cdf);
double ks_two_sample(std::vector<double> a, std::vector<double> b);

/// Pairwise (tree) summation; the result depends only on the order of `v`.
double pairwise_sum(const double* v, std::size_t n);
inline double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(v.data(), v.size()); }

struct MeanSE {
  double mean = 0.0, se = 0.0;
};
MeanSE mean_se(const std::vector<double>& v);

}  // namespace refdiff
