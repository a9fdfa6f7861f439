#include "fibsim/stats.hpp"

#include "fibsim/error.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fibsim::stats {

double mean(std::span<const double> v) {
    if (v.empty()) throw DomainError("mean of an empty sample");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
    if (v.size() < 2) throw DomainError("stddev needs at least two samples");
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double median(std::vector<double> v) {
    if (v.empty()) throw DomainError("median of an empty sample");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
    if (v.size() % 2 == 1) return v[mid];
    const double upper = v[mid];
    return 0.5 * (upper + *std::max_element(v.begin(), v.begin() + static_cast<long>(mid)));
}

double chi_square_sf(double statistic, double dof) {
    if (!(dof > 0.0)) throw DomainError("chi-square needs positive degrees of freedom");
    if (statistic <= 0.0) return 1.0;
    return boost::math::gamma_q(0.5 * dof, 0.5 * statistic);
}

double normal_two_sided_z(double coverage) {
    if (!(coverage > 0.0 && coverage < 1.0)) throw DomainError("coverage must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<>(), 0.5 + 0.5 * coverage);
}

GoodnessOfFit poisson_goodness_of_fit(std::span<const std::uint64_t> counts_by_value, double lambda,
                                      double min_expected) {
    if (!(lambda > 0.0)) throw DomainError("Poisson goodness of fit needs lambda > 0");
    const double n = static_cast<double>(std::accumulate(counts_by_value.begin(), counts_by_value.end(), std::uint64_t{0}));
    if (n == 0.0) throw DomainError("Poisson goodness of fit needs observations");
    boost::math::poisson_distribution<> law(lambda);

    // Classes: [k_lo, k_hi], the last one open-ended.
    struct Class {
        double observed = 0.0;
        double expected = 0.0;
    };
    std::vector<Class> classes;
    Class current;
    std::size_t k = 0;
    const std::size_t k_max = std::max<std::size_t>(counts_by_value.size(), static_cast<std::size_t>(lambda * 4 + 10));
    for (; k < k_max; ++k) {
        current.observed += k < counts_by_value.size() ? static_cast<double>(counts_by_value[k]) : 0.0;
        current.expected += n * boost::math::pdf(law, static_cast<double>(k));
        const double tail = n * boost::math::cdf(boost::math::complement(law, static_cast<double>(k)));
        if (current.expected >= min_expected && tail >= min_expected) {
            classes.push_back(current);
            current = {};
        }
    }
    for (; k < counts_by_value.size(); ++k) current.observed += static_cast<double>(counts_by_value[k]);
    current.expected += n * boost::math::cdf(boost::math::complement(law, static_cast<double>(k_max - 1)));
    if (classes.empty() || current.expected >= min_expected) {
        classes.push_back(current);
    } else {
        classes.back().observed += current.observed;
        classes.back().expected += current.expected;
    }

    GoodnessOfFit out;
    for (const auto& c : classes) out.statistic += (c.observed - c.expected) * (c.observed - c.expected) / c.expected;
    out.dof = static_cast<int>(classes.size()) - 1;
    out.p_value = out.dof > 0 ? chi_square_sf(out.statistic, out.dof) : 1.0;
    return out;
}

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
    if (samples.empty()) throw DomainError("KS statistic of an empty sample");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
    }
    return d;
}

}  // namespace fibsim::stats
