#include "fibsim/activation.hpp"
#include "fibsim/error.hpp"
#include "fibsim/stats.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace fibsim;
using doctest::Approx;

TEST_CASE("default yield surface") {
    const auto s = YieldSurface::defaults();
    CHECK_NOTHROW(s.validate());
    const auto at100 = yield_lookup(s, 100.0, 1e12);
    CHECK(at100.eta == Approx(0.025).epsilon(1e-12));
    CHECK_FALSE(at100.extrapolated);

    // Linear extrapolation of the 90-100 keV cell to 160 keV.
    const double e90 = 0.025 * std::pow(0.9, YieldSurface::default_energy_exponent());
    const double oracle = 0.025 + (0.025 - e90) * (160.0 - 100.0) / 10.0;
    const auto cav = yield_lookup(s, 160.0, 1e12);
    CHECK(cav.extrapolated);
    CHECK(cav.eta == Approx(oracle).epsilon(1e-12));
    CHECK(cav.eta == Approx(0.03).epsilon(1e-9));

    CHECK_THROWS_AS(yield_lookup(s, 100.0, 0.0), DomainError);
    CHECK_THROWS_AS(yield_lookup(s, 100.0, -1e12), DomainError);
    CHECK_THROWS_AS(yield_lookup(s, 250.0, 1e12), RangeError);
}

TEST_CASE("bilinear interpolation in log dose") {
    const auto s = YieldSurface::power_law(0.025, 1.0, 0.3);
    const double lo = s.at(4, 0), hi = s.at(4, 1);  // 50 keV, 1e12 and 10^12.25
    const auto mid = yield_lookup(s, 50.0, std::pow(10.0, 12.125));
    CHECK(mid.eta == Approx(0.5 * (lo + hi)));
    CHECK(yield_lookup(s, 55.0, 1e12).eta == Approx(0.5 * (s.at(4, 0) + s.at(5, 0))));
}

TEST_CASE("all-zero surface yields zero") {
    auto s = YieldSurface::power_law(0.0, 1.0, 0.3);
    CHECK(yield_lookup(s, 37.0, 4e12).eta == 0.0);
}

TEST_CASE("lookup respects the surface monotonicity") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        YieldSurface s;
        s.energies_kev = {10, 40, 70, 100};
        s.log10_doses = {12, 13, 14};
        s.eta.assign(12, 0.0);
        // Cumulative random increments keep eta non-decreasing in energy and non-increasing in dose.
        for (int e = 0; e < 4; ++e)
            for (int d = 2; d >= 0; --d) {
                double v = u(rng) * 0.01;
                if (e > 0) v = std::max(v, s.eta[(e - 1) * 3 + d]);
                if (d < 2) v = std::max(v, s.eta[e * 3 + d + 1]);
                s.eta[e * 3 + d] = v + u(rng) * 0.002;
            }
        REQUIRE_NOTHROW(s.validate());
        for (int k = 0; k < 50; ++k) {
            const double e = 10 + 90 * u(rng), de = 90 * u(rng) * (1 - (e - 10) / 90);
            const double d = std::pow(10.0, 12 + 2 * u(rng));
            CHECK(yield_lookup(s, e + de, d).eta >= yield_lookup(s, e, d).eta - 1e-15);
            CHECK(yield_lookup(s, e, d * 1.5).eta <= yield_lookup(s, e, d).eta + 1e-15);
        }
    }
}

TEST_CASE("surface validation and csv") {
    auto s = YieldSurface::power_law(0.025, 1.0, 0.3);
    std::stringstream io;
    s.write_csv(io);
    const auto back = YieldSurface::read_csv(io);
    CHECK(back.energies_kev == s.energies_kev);
    REQUIRE(back.eta.size() == s.eta.size());
    for (std::size_t k = 0; k < s.eta.size(); ++k) CHECK(back.eta[k] == Approx(s.eta[k]).epsilon(1e-15));
    s.eta[0] = 0.5;  // 10 keV above 20 keV
    CHECK_THROWS_AS(s.validate(), DomainError);
    std::istringstream bad("energy_keV,dose_cm2,eta\n10,1e12,abc\n");
    CHECK_THROWS_AS(YieldSurface::read_csv(bad, "y.csv"), ParseError);
}

TEST_CASE("irradiation step model") {
    const auto s = YieldSurface::defaults();
    CHECK(apply_irradiation(0.02, 1e17, s) == Approx(0.20));
    CHECK(apply_irradiation(0.025, 0.0, s) == 0.025);
    CHECK(apply_irradiation(0.025, 5e16, s) == 0.025);
    CHECK(apply_irradiation(0.2, 1e17, s) == 1.0);
}

TEST_CASE("emitter counts are Poisson") {
    const int trials = 100000;
    std::vector<std::uint64_t> hist;
    double sum = 0;
    auto rng = RandomSeed(99).engine();
    for (int t = 0; t < trials; ++t) {
        const auto n = sample_emitter_count(60, 0.03, rng);
        if (hist.size() <= n) hist.resize(n + 1);
        ++hist[n];
        sum += static_cast<double>(n);
    }
    CHECK(sum / trials >= 1.78);
    CHECK(sum / trials <= 1.82);
    const double p0 = static_cast<double>(hist[0]) / trials;
    CHECK(std::exp(-1.8) == Approx(0.1653).epsilon(1e-3));
    CHECK(p0 >= 0.160);
    CHECK(p0 <= 0.170);
    CHECK(sample_emitter_count(1000, 0.0, RandomSeed(1)) == 0);
    CHECK(sample_emitter_count(60, 0.03, RandomSeed(5)) == sample_emitter_count(60, 0.03, RandomSeed(5)));
}

TEST_CASE("per-ion activation follows the binomial law") {
    // Independent activation of a fixed number of ions: Binomial(60, 0.03).
    const int n_ions = 60;
    const double p = 0.03;
    const std::uint64_t trials = 100000;
    std::vector<Point3D> ions(n_ions);
    SpectralPopulation pop;
    std::vector<double> hist(n_ions + 1, 0.0);
    for (std::uint64_t t = 0; t < trials; ++t) ++hist[sample_emitters(ions, p, pop, RandomSeed(12).child(t)).size()];

    std::vector<double> pmf(n_ions + 1);
    for (int k = 0; k <= n_ions; ++k)
        pmf[k] = std::exp(std::lgamma(n_ions + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n_ions - k + 1.0) +
                          k * std::log(p) + (n_ions - k) * std::log1p(-p));
    // Pearson chi-square with the tail pooled once expected counts drop below 5.
    double chi2 = 0.0, obs_tail = 0.0, exp_tail = 0.0;
    int classes = 0;
    for (int k = 0; k <= n_ions; ++k) {
        const double e = pmf[k] * trials;
        if (e >= 5.0 && exp_tail == 0.0) {
            chi2 += (hist[k] - e) * (hist[k] - e) / e;
            ++classes;
        } else {
            obs_tail += hist[k];
            exp_tail += e;
        }
    }
    chi2 += (obs_tail - exp_tail) * (obs_tail - exp_tail) / exp_tail;
    ++classes;
    CHECK(stats::chi_square_sf(chi2, classes - 1) > 0.001);

    double mean = 0.0;
    for (int k = 0; k <= n_ions; ++k) mean += k * hist[k] / trials;
    CHECK(std::abs(mean - n_ions * p) < 3.0 * std::sqrt(n_ions * p * (1 - p) / trials));
}

TEST_CASE("emitter properties") {
    std::vector<Point3D> ions;
    for (int k = 0; k < 100000; ++k) ions.push_back({double(k), 0, 10});
    SpectralPopulation pop;
    const auto em = sample_emitters(ions, 1.0, pop, RandomSeed(3));
    REQUIRE(em.size() == ions.size());
    std::vector<double> centers;
    for (std::size_t k = 0; k < em.size(); ++k) {
        CHECK(em[k].position == ions[em[k].ion_index]);
        CHECK(em[k].homogeneous_fwhm_mhz >= 1e3 / (2 * M_PI * 1.7));
        CHECK(em[k].brightness_kcps > 0.0);
        double w = 0;
        for (double x : em[k].fine_structure.weights) w += x;
        CHECK(w == Approx(1.0));
        centers.push_back(em[k].zpl_center_ghz);
    }
    // FWHM from the interquartile range of a Gaussian: IQR = 2 * 0.6744898 sigma.
    std::sort(centers.begin(), centers.end());
    const double iqr = centers[75000] - centers[25000];
    const double fwhm = iqr / (2 * 0.6744897501960817) * 2.3548200450309493;
    CHECK(fwhm == Approx(51.0).epsilon(0.02));
    CHECK(stats::median(centers) == Approx(pop.center_ghz).epsilon(1e-6));

    CHECK(sample_emitters(ions, 0.0, pop, RandomSeed(3)).empty());
}

TEST_CASE("homogeneous linewidth mean") {
    const auto pop = SpectralPopulation::with_mean_linewidth(200.0, 0.3);
    CHECK(pop.homogeneous_median_mhz * std::exp(0.5 * 0.09) == Approx(200.0));
    std::vector<Point3D> ions(50000);
    const auto em = sample_emitters(ions, 1.0, pop, RandomSeed(8));
    double mean = 0;
    for (const auto& e : em) mean += e.homogeneous_fwhm_mhz / em.size();
    // Floor at the lifetime limit lifts the mean slightly above 200 MHz.
    CHECK(mean == Approx(200.0).epsilon(0.02));
}

TEST_CASE("fine structure templates") {
    const auto t = FineStructure::four_line_template();
    double w = 0;
    for (double x : t.weights) w += x;
    CHECK(w == Approx(1.0));
    CHECK(t.offsets_ghz[0] - t.offsets_ghz[1] == Approx(48.0));
    CHECK(t.offsets_ghz[2] - t.offsets_ghz[3] == Approx(48.0));
    CHECK(t.offsets_ghz[0] - t.offsets_ghz[2] == Approx(259.0));
    const auto c = FineStructure::transition_c_only();
    CHECK(c.weights[2] == 1.0);
}
