#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace fibsim::stats {

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1 denominator).
double stddev(std::span<const double> v);
double median(std::vector<double> v);

/// Upper tail probability of the chi-square distribution.
double chi_square_sf(double statistic, double dof);
/// Two-sided standard normal quantile for the given central coverage (0.95 -> 1.96).
double normal_two_sided_z(double coverage);

struct GoodnessOfFit {
    double statistic = 0.0;
    int dof = 0;
    double p_value = 0.0;
};

/// Pearson chi-square of observed counts per value k = 0, 1, ... against
/// Poisson(lambda). Adjacent classes are pooled until every expected count
/// reaches `min_expected`; the upper tail is folded into the last class.
GoodnessOfFit poisson_goodness_of_fit(std::span<const std::uint64_t> counts_by_value, double lambda,
                                      double min_expected = 5.0);

/// Kolmogorov-Smirnov distance between the empirical distribution of `samples` and `cdf`.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);

}  // namespace fibsim::stats
