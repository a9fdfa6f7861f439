#include "fibsim/analysis.hpp"
#include "fibsim/error.hpp"
#include "fibsim/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace fibsim;
using doctest::Approx;

namespace {

Emitter emitter_at(double x, double y, double kcps = 30.0) {
    Emitter e;
    e.position = {x, y, 100.0};
    e.brightness_kcps = kcps;
    return e;
}

ConfocalImage render(const std::vector<Emitter>& em, double lo, double hi, std::uint64_t seed, double bg = 1.0) {
    const auto g = ImageGeometry::covering({lo, lo}, {hi, hi}, 50.0, 1.0);
    return render_confocal(em, PsfSpec{}, bg, g, RandomSeed(seed));
}

std::vector<Point2D> lattice(int n, double pitch, const AffineTransform2D& t) {
    std::vector<Point2D> out;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) out.push_back(t.apply({i * pitch, j * pitch}));
    return out;
}

}  // namespace

TEST_CASE("localization") {
    SUBCASE("blank image has no sites") {
        const auto loc = localize_sites(render({}, -2000, 2000, 1), LocalizeOptions{});
        CHECK(loc.sites.empty());
    }
    SUBCASE("single emitter") {
        std::vector<double> ex, ey, sx;
        for (int r = 0; r < 40; ++r) {
            const auto loc = localize_sites(render({emitter_at(12.0, -7.0)}, -1000, 1000, 100 + r), LocalizeOptions{});
            REQUIRE(loc.sites.size() == 1);
            const auto& s = loc.sites[0];
            CHECK(std::abs(s.position.x - 12.0) < 15.0);
            CHECK(std::abs(s.position.y + 7.0) < 15.0);
            CHECK(s.width_nm == Approx(122.8).epsilon(0.1));
            CHECK(s.peak_counts == Approx(30.0).epsilon(0.2));
            ex.push_back(s.position.x - 12.0);
            ey.push_back(s.position.y + 7.0);
            sx.push_back(s.sigma_x_nm);
        }
        // Reported uncertainty agrees with the scatter.
        CHECK(stats::mean(sx) / stats::stddev(ex) == Approx(1.0).epsilon(0.3));
    }
    SUBCASE("two emitters five PSF sigmas apart") {
        const double d = 5.0 * 122.8;
        const auto loc = localize_sites(render({emitter_at(-d / 2, 0), emitter_at(d / 2, 0)}, -1200, 1200, 9), LocalizeOptions{});
        REQUIRE(loc.sites.size() == 2);
        const double x0 = std::min(loc.sites[0].position.x, loc.sites[1].position.x);
        CHECK(std::abs(x0 + d / 2) < 20.0);
    }
    SUBCASE("undersampled image is rejected") {
        const auto g = ImageGeometry::covering({-1000, -1000}, {1000, 1000}, 200.0, 1.0);
        const auto img = render_confocal({}, PsfSpec{}, 1.0, g, RandomSeed(1));
        CHECK_THROWS_AS(localize_sites(img, LocalizeOptions{}), DomainError);
    }
}

TEST_CASE("single-site filter") {
    SUBCASE("window bounds are inclusive") {
        std::vector<LocalizationResult> r(4);
        r[0].peak_counts = 14.9;
        r[1].peak_counts = 15.0;
        r[2].peak_counts = 45.0;
        r[3].peak_counts = 45.1;
        CHECK(filter_single_sites(r, 30.0).size() == 2);
        CHECK_THROWS_AS(filter_single_sites(r, 0.0), DomainError);
        CHECK(filter_single_sites({}, 30.0).empty());
    }
    SUBCASE("Poisson occupancy keeps the singles") {
        // Occupied sites of Poisson(0.5): the median peak is one emitter, and only
        // singles land in the window, a fraction 0.5 e^-0.5 / (1 - e^-0.5).
        Engine rng = RandomSeed(17).engine();
        std::poisson_distribution<int> occ(0.5);
        std::normal_distribution<double> jitter(0.0, 2.0);
        std::vector<LocalizationResult> r;
        while (r.size() < 20000) {
            const int k = occ(rng);
            if (k == 0) continue;
            LocalizationResult x;
            x.peak_counts = 30.0 * k + jitter(rng);
            r.push_back(x);
        }
        const double kept = static_cast<double>(filter_single_sites(r).size()) / r.size();
        const double p = 0.5 * std::exp(-0.5) / (1.0 - std::exp(-0.5));
        CHECK(std::abs(kept - p) < 3.0 * std::sqrt(p * (1 - p) / r.size()));
    }
}

TEST_CASE("affine grid") {
    SUBCASE("exact lattice gives the identity") {
        const auto sites = lattice(5, 1000.0, AffineTransform2D::identity());
        const auto fit = fit_affine_grid(sites, 1000.0);
        for (int k = 0; k < 4; ++k) CHECK(fit.transform.linear()[k] == Approx(k == 0 || k == 3 ? 1.0 : 0.0).epsilon(1e-12));
        CHECK(fit.transform.translation().norm() < 1e-9);
        for (double d : fit.distances()) CHECK(d < 1e-9);
        CHECK(fit.indices[7] == LatticeIndex{2, 1});
    }
    SUBCASE("known affine map is recovered") {
        const AffineTransform2D truth({1.002, 0.01, -0.008, 0.997}, {4.0, 48.0});
        const auto fit = fit_affine_grid(lattice(6, 1000.0, truth), 1000.0);
        for (int k = 0; k < 4; ++k) CHECK(fit.transform.linear()[k] == Approx(truth.linear()[k]).epsilon(1e-6));
        CHECK(fit.transform.translation().x == Approx(4.0).epsilon(1e-6));
        CHECK(fit.transform.translation().y == Approx(48.0).epsilon(1e-6));
    }
    SUBCASE("offset larger than half a pitch normalizes indices") {
        const auto fit = fit_affine_grid(lattice(4, 1000.0, AffineTransform2D::translation({2600.0, -1700.0})), 1000.0);
        CHECK(fit.transform.translation().x == Approx(2600.0));
        CHECK(fit.transform.translation().y == Approx(-1700.0));
        CHECK(fit.indices.front() == LatticeIndex{0, 0});
    }
    SUBCASE("placement noise is reflected in the residual spread") {
        auto sites = lattice(10, 1000.0, AffineTransform2D::identity());
        Engine rng = RandomSeed(3).engine();
        std::normal_distribution<double> n(0.0, 26.0);
        for (auto& p : sites) p = p + Point2D{n(rng), n(rng)};
        const auto fit = fit_affine_grid(sites, 1000.0);
        CHECK(fit.std_displacement.x > 22.0);
        CHECK(fit.std_displacement.x < 30.0);
        CHECK(fit.std_displacement.y > 22.0);
        CHECK(fit.std_displacement.y < 30.0);

        SUBCASE("translating the sites leaves the residuals unchanged") {
            auto moved = sites;
            for (auto& p : moved) p = p + Point2D{317.0, -4211.0};
            const auto fit2 = fit_affine_grid(moved, 1000.0);
            for (std::size_t k = 0; k < sites.size(); ++k) {
                CHECK(fit2.displacements[k].x == Approx(fit.displacements[k].x).epsilon(1e-9).scale(100.0));
                CHECK(fit2.displacements[k].y == Approx(fit.displacements[k].y).epsilon(1e-9).scale(100.0));
            }
        }
    }
    SUBCASE("invalid input") {
        const auto few = lattice(2, 1000.0, AffineTransform2D::identity());
        CHECK_THROWS_AS(fit_affine_grid(few, 1000.0), DomainError);
        std::vector<Point2D> row;
        for (int i = 0; i < 8; ++i) row.push_back({i * 1000.0, 0.0});
        CHECK_THROWS_AS(fit_affine_grid(row, 1000.0), GridFitError);
        CHECK_THROWS_AS(fit_affine_grid(lattice(3, 1000.0, AffineTransform2D::identity()), -1.0), DomainError);
    }
}

TEST_CASE("Rayleigh statistics") {
    CHECK(rayleigh_cdf(25.0, 25.0) == Approx(1.0 - std::exp(-0.5)));
    CHECK(rayleigh_cdf(-1.0, 25.0) == 0.0);

    SUBCASE("equal distances") {
        std::vector<double> d(20, 30.0);
        const auto f = fit_rayleigh(d);
        CHECK(f.sigma_nm == Approx(30.0 / std::sqrt(2.0)));
        CHECK(f.mean_r_nm == Approx(f.sigma_nm * std::sqrt(M_PI / 2.0)));
        CHECK(f.variance_r_nm2 == Approx(f.sigma_nm * f.sigma_nm * (4.0 - M_PI) / 2.0));
        CHECK(f.std_r_nm == Approx(std::sqrt(f.variance_r_nm2)));
        CHECK(f.samples == 20);
    }
    SUBCASE("recovers the scale from samples") {
        Engine rng = RandomSeed(8).engine();
        std::normal_distribution<double> n(0.0, 25.5);
        std::vector<double> d;
        for (int k = 0; k < 10000; ++k) d.push_back(std::hypot(n(rng), n(rng)));
        const auto f = fit_rayleigh(d);
        CHECK(f.sigma_nm > 25.1);
        CHECK(f.sigma_nm < 25.9);
        CHECK(f.sigma_error_nm == Approx(25.5 / std::sqrt(2.0 * 10000)).epsilon(0.05));
        const auto b = fit_rayleigh_binned(d, 40);
        CHECK(b.binned);
        CHECK(b.sigma_nm > 24.9);
        CHECK(b.sigma_nm < 26.1);
    }
    SUBCASE("invalid samples") {
        std::vector<double> d(20, 10.0);
        d[3] = -1.0;
        CHECK_THROWS_AS(fit_rayleigh(d), DomainError);
        CHECK_THROWS_AS(fit_rayleigh(std::vector<double>(5, 1.0)), DomainError);
    }
}

TEST_CASE("yield estimation") {
    const auto y = estimate_yield(750.0, 30.0, 1000.0);
    CHECK(y.eta == Approx(0.025));
    CHECK(y.error == Approx(std::sqrt(25.0) / 1000.0));
    CHECK(estimate_yield(0.0, 30.0, 1000.0).eta == 0.0);
    CHECK_THROWS_AS(estimate_yield(1.0, 0.0, 1000.0), DomainError);

    SUBCASE("end to end through an image") {
        // 1e5 ions spread uniformly over a 4 um square, eta = 0.03.
        Engine rng = RandomSeed(44).engine();
        std::uniform_real_distribution<double> u(-2000.0, 2000.0);
        std::vector<Point3D> ions(100000);
        for (auto& p : ions) p = {u(rng), u(rng), 100.0};
        const auto em = sample_emitters(ions, 0.03, SpectralPopulation{}, RandomSeed(45));
        const auto img = render(em, -3000, 3000, 46, 1.0);
        const auto rate = integrated_region_rate(img, psf_sigma(1.3, 737.0), 1.0);
        const auto est = estimate_yield(rate.rate_kcps, 30.0, 1e5, rate.error_kcps);
        CHECK(est.eta == Approx(0.03).epsilon(0.1));
        CHECK(std::abs(est.eta - 0.03) < 3.0 * est.error);
    }
}

TEST_CASE("g2 fitting") {
    const auto tau = symmetric_delay_bins(300.0, 2.0);
    SUBCASE("noiseless single emitter") {
        const auto f = fit_g2(synth_g2(G2Model{}, tau, 1e6, std::nullopt));
        CHECK(f.g2_zero == Approx(0.38).epsilon(1e-5));
        CHECK(f.params.t1_ns == Approx(3.0).epsilon(1e-4));
        CHECK(f.params.t2_ns == Approx(50.0).epsilon(1e-4));
        CHECK(f.is_single);
        CHECK(f.ci_reliable);
    }
    SUBCASE("flat histogram is not a single emitter") {
        const auto f = fit_g2(synth_g2(G2Model{0.0, 0.0, 3.0, 50.0}, tau, 1e6, RandomSeed(2)));
        CHECK(std::abs(f.params.a - f.params.b) < 0.05);
        CHECK(f.g2_zero == Approx(1.0).epsilon(0.05));
        CHECK_FALSE(f.is_single);
    }
    SUBCASE("two emitters are not single") {
        const auto f = fit_g2(synth_g2(G2Model{0.45, 0.1, 3.0, 50.0}, tau, 1e6, RandomSeed(3)));
        CHECK(f.g2_zero > 0.5);
        CHECK_FALSE(f.is_single);
    }
    SUBCASE("scaling the uncertainties scales the intervals only") {
        const auto h = synth_g2(G2Model{}, tau, 3e5, RandomSeed(4));
        auto h2 = h;
        for (double& s : h2.sigma) s *= 2.0;
        const auto a = fit_g2(h), b = fit_g2(h2);
        CHECK(b.params.a == Approx(a.params.a).epsilon(1e-6));
        CHECK(b.params.t2_ns == Approx(a.params.t2_ns).epsilon(1e-6));
        CHECK(b.ci[0].high - b.params.a == Approx(2.0 * (a.ci[0].high - a.params.a)).epsilon(1e-4));
        G2FitOptions rel;
        rel.absolute_sigma = false;
        const auto c = fit_g2(h2, rel);
        CHECK(c.ci[0].high - c.params.a == Approx(a.ci[0].high - a.params.a).epsilon(0.1 + std::abs(std::sqrt(a.reduced_chi2) - 1.0)));
    }
    SUBCASE("too few bins") {
        CHECK_THROWS_AS(fit_g2(synth_g2(G2Model{}, symmetric_delay_bins(10.0, 2.0), 0.0, std::nullopt)), DomainError);
    }
}

TEST_CASE("line fitting") {
    Spectrum s;
    for (int i = 0; i <= 400; ++i) s.x.push_back(-200.0 + i);
    auto fill = [&](LineModel m) {
        s.counts.clear();
        for (double x : s.x) {
            const double d = x - 3.0;
            const double shape = m == LineModel::Gaussian ? std::exp(-4.0 * std::log(2.0) * d * d / (40.0 * 40.0))
                                                          : 1.0 / (1.0 + 4.0 * d * d / (40.0 * 40.0));
            s.counts.push_back(1000.0 * shape + 10.0);
        }
    };
    for (auto m : {LineModel::Gaussian, LineModel::Lorentzian}) {
        fill(m);
        const auto f = fit_line(s, m, 0.0);
        CHECK(f.center == Approx(3.0).epsilon(1e-9));
        CHECK(f.fwhm == Approx(40.0).epsilon(1e-9));
        CHECK(f.amplitude == Approx(1000.0).epsilon(1e-9));
        CHECK(f.offset == Approx(10.0).epsilon(1e-8));
        CHECK(f.model == m);
    }
    fill(LineModel::Gaussian);
    CHECK(fit_line(s, LineModel::Gaussian, 34.0).instrument_limited);
    CHECK_FALSE(fit_line(s, LineModel::Gaussian, 30.0).instrument_limited);

    std::vector<double> flat(s.x.size(), 5.0);
    Spectrum f{s.x, flat};
    CHECK_THROWS_AS(fit_line(f, LineModel::Gaussian, 0.0), FitError);
    CHECK_THROWS_AS(fit_line(s, LineModel::Gaussian, -1.0), DomainError);
}

TEST_CASE("ensemble linewidth is not instrument limited") {
    SpectralPopulation pop;
    pop.transition_c_only = true;
    std::vector<Point3D> ions(3000);
    auto em = sample_emitters(ions, 1.0, pop, RandomSeed(5));
    SpectrumOptions o;
    o.start_ghz = pop.center_ghz - 300.0;
    o.points = 601;
    o.counts_per_emitter = 100.0;
    for (auto& e : em) e.fine_structure.offsets_ghz[2] = 0.0;
    const auto fit = fit_line(synth_spectrum(em, 34.0, SpectrumMode::Cryogenic, o), LineModel::Gaussian, 34.0);
    CHECK(fit.fwhm == Approx(61.3).epsilon(0.04));
    CHECK_FALSE(fit.instrument_limited);
}

TEST_CASE("targeting without a ZPL site") {
    CavityLayout cav;
    const Point2D ext = cav.half_extent();
    const auto g = ImageGeometry::covering({-ext.x - 800, -ext.y - 800}, {ext.x + 800, ext.y + 800}, 100.0, 1.0);
    const auto cube = render_spectral_cube({}, cav, CubeChannels{}, g, SpectralAxis{}, RandomSeed(1));
    CHECK_THROWS_AS(estimate_targeting(cube, 572.8, 736.9), FitError);
    CHECK_THROWS_AS(estimate_targeting(cube, 500.0, 736.9), DomainError);
}

TEST_CASE("placement precision end to end") {
    // Emitters on a 1 um lattice with Gaussian placement error; localization
    // adds its own error in quadrature.
    for (double sigma : {15.0, 26.0, 40.0}) {
        CAPTURE(sigma);
        Engine rng = RandomSeed(static_cast<std::uint64_t>(sigma)).engine();
        std::normal_distribution<double> n(0.0, sigma);
        std::vector<Emitter> em;
        for (int j = 0; j < 12; ++j)
            for (int i = 0; i < 12; ++i) em.push_back(emitter_at(i * 1000.0 + n(rng), j * 1000.0 + n(rng)));
        const auto img = render(em, -800, 11800, 300 + static_cast<std::uint64_t>(sigma));
        const auto loc = localize_sites(img, LocalizeOptions{});
        REQUIRE(loc.sites.size() == 144);
        std::vector<Point2D> pos;
        double loc_var = 0.0;
        for (const auto& s : loc.sites) {
            pos.push_back(s.position);
            loc_var += 0.5 * (s.sigma_x_nm * s.sigma_x_nm + s.sigma_y_nm * s.sigma_y_nm) / 144.0;
        }
        const auto grid = fit_affine_grid(pos, 1000.0);
        const auto ray = fit_rayleigh(grid.distances());
        // The affine fit absorbs 6 of the 288 degrees of freedom.
        const double expected = std::sqrt((sigma * sigma + loc_var) * (288.0 - 6.0) / 288.0);
        CHECK(std::abs(ray.sigma_nm - expected) < 3.0 * ray.sigma_error_nm);
    }
}
