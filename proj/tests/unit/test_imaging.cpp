#include "fibsim/analysis.hpp"
#include "fibsim/error.hpp"
#include "fibsim/imaging.hpp"
#include "fibsim/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace fibsim;
using doctest::Approx;

namespace {

Emitter emitter_at(double x, double y, double kcps = 30.0) {
    Emitter e;
    e.position = {x, y, 100.0};
    e.brightness_kcps = kcps;
    e.zpl_center_ghz = wavelength_to_frequency(736.9);
    return e;
}

ImageGeometry square(double half, double pitch = 50.0, double dwell = 1.0) {
    return ImageGeometry::covering({-half, -half}, {half, half}, pitch, dwell);
}

}  // namespace

TEST_CASE("psf sigma") {
    CHECK(psf_sigma(1.3, 737.0) == Approx(0.51 * 737.0 / 1.3 / 2.35482).epsilon(1e-5));
    CHECK(psf_sigma(1.3, 737.0) == Approx(122.8).epsilon(1e-3));
    CHECK(psf_sigma(0.95, 737.0) == Approx(168.0).epsilon(1e-3));
    CHECK(psf_sigma(0.95, 1474.0) == 2.0 * psf_sigma(0.95, 737.0));
    CHECK_THROWS_AS(psf_sigma(0.0, 737.0), DomainError);
    CHECK_THROWS_AS(psf_sigma(1.6, 737.0), DomainError);
}

TEST_CASE("covering geometry is centered") {
    const auto g = ImageGeometry::covering({-1000, -250}, {1000, 250}, 100.0, 1.0);
    CHECK(g.width == 21);
    CHECK(g.height == 6);
    CHECK(g.pixel_center(0, 0).x == -1000.0);
    CHECK(g.pixel_center(5, 20).y + g.pixel_center(0, 0).y == Approx(0.0));
}

TEST_CASE("background-only image") {
    const auto g = square(2000.0, 50.0);
    const auto img = render_confocal({}, PsfSpec{}, 1.0, g, RandomSeed(1));
    std::vector<double> v(img.counts.begin(), img.counts.end());
    const double se = 1.0 / std::sqrt(static_cast<double>(v.size()));
    CHECK(std::abs(stats::mean(v) - 1.0) < 3.0 * se);
    CHECK(stats::stddev(v) * stats::stddev(v) == Approx(1.0).epsilon(0.08));
}

TEST_CASE("expected confocal image") {
    const auto g = square(1500.0, 50.0);
    const PsfSpec psf;
    const double s = psf.sigma_nm();
    const std::vector<Emitter> one{emitter_at(0, 0)};
    const auto m1 = expected_confocal(one, psf, 0.0, g);
    CHECK(*std::max_element(m1.begin(), m1.end()) == Approx(30.0));

    SUBCASE("total follows the PSF footprint") {
        const double total = std::accumulate(m1.begin(), m1.end(), 0.0);
        CHECK(total == Approx(30.0 * 2.0 * M_PI * s * s / (50.0 * 50.0)).epsilon(1e-6));
    }
    SUBCASE("linearity in emitters") {
        const std::vector<Emitter> two{emitter_at(-600, 0), emitter_at(600, 0)};
        const std::vector<Emitter> a{two[0]}, b{two[1]};
        const auto m2 = expected_confocal(two, psf, 0.0, g);
        const auto ma = expected_confocal(a, psf, 0.0, g);
        const auto mb = expected_confocal(b, psf, 0.0, g);
        for (std::size_t k = 0; k < m2.size(); ++k) CHECK(m2[k] == Approx(ma[k] + mb[k]));
    }
    SUBCASE("Monte Carlo total within 3 standard errors") {
        const auto small = square(600.0, 50.0);
        const auto mean = expected_confocal(one, psf, 1.0, small);
        const double expected = std::accumulate(mean.begin(), mean.end(), 0.0);
        double sum = 0.0;
        const int reps = 1000;
        for (int r = 0; r < reps; ++r) sum += static_cast<double>(sample_image(small, mean, RandomSeed(5).child(r)).total());
        CHECK(std::abs(sum / reps - expected) < 3.0 * std::sqrt(expected / reps));
    }
    SUBCASE("two emitters double the single total") {
        const std::vector<Emitter> two{emitter_at(-600, 0), emitter_at(600, 0)};
        double t1 = 0, t2 = 0;
        for (int r = 0; r < 200; ++r) {
            t1 += static_cast<double>(render_confocal(one, psf, 0.0, g, RandomSeed(6).child(r)).total());
            t2 += static_cast<double>(render_confocal(two, psf, 0.0, g, RandomSeed(7).child(r)).total());
        }
        CHECK(std::abs(t2 - 2.0 * t1) < 3.0 * std::sqrt(t2 + 4.0 * t1));
    }
}

TEST_CASE("rendering determinism and sampling warning") {
    const auto g = square(800.0, 50.0);
    const std::vector<Emitter> one{emitter_at(10, 20)};
    const auto a = render_confocal(one, PsfSpec{}, 1.0, g, RandomSeed(3));
    const auto b = render_confocal(one, PsfSpec{}, 1.0, g, RandomSeed(3));
    CHECK(a.counts == b.counts);
    CHECK(a.warnings.empty());
    const auto coarse = render_confocal(one, PsfSpec{}, 1.0, square(800.0, 200.0), RandomSeed(3));
    CHECK(coarse.warnings.size() == 1);
}

TEST_CASE("cavity layout") {
    CavityLayout c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.mode_maxima().size() == 3);
    for (const auto& m : c.mode_maxima()) CHECK(c.is_material(m));
    CHECK(c.is_material({0.0, 250.0 * std::sqrt(3.0) / 2.0}));
    CHECK_FALSE(c.is_material({125.0, 250.0 * std::sqrt(3.0) / 2.0}));  // odd rows are shifted by half a period
    CHECK_FALSE(c.is_material({500.0, 0.0}));                         // first hole past the missing three
    CHECK_FALSE(c.is_material({1e5, 0.0}));
    c.mode_maxima_offsets = {{500.0, 0.0}, {0, 0}, {-250, 0}};
    CHECK_THROWS_AS(c.validate(), DomainError);
}

TEST_CASE("spectral cube") {
    CavityLayout cav;
    CubeChannels ch;
    const SpectralAxis axis{560.0, 2.0, 100};
    const auto g = ImageGeometry::covering({-2000, -1500}, {2000, 1500}, 100.0, 1.0);

    SUBCASE("bin sum equals the combined rate model") {
        const std::vector<Emitter> em{emitter_at(0, 0, 30.0)};
        const auto cube = expected_spectral_cube(em, cav, ch, g, axis);
        const auto raman = material_coverage(cav, ch.raman_psf.sigma_nm(), g);
        const Point2D p{0, 0};
        const double rate = 30.0;
        const auto zpl = expected_point_image({&p, 1}, {&rate, 1}, ch.zpl_psf.sigma_nm(), 0.0, g);
        for (std::size_t px = 0; px < g.pixels(); px += 37) {
            double sum = 0;
            for (std::size_t b = 0; b < axis.bins; ++b) sum += cube.mean[px * axis.bins + b];
            const double model = raman[px] * ch.raman_rate_kcps + zpl[px] + ch.background_kcps_per_nm * 200.0;
            CHECK(sum == Approx(model).epsilon(1e-6));
        }
        const auto sampled = sample_cube(cube, RandomSeed(2));
        const auto flat = sampled.sum_bins();
        for (std::size_t px = 0; px < g.pixels(); px += 53) {
            std::uint64_t s = 0;
            for (std::size_t b = 0; b < axis.bins; ++b) s += sampled.at(px, b);
            CHECK(flat.counts[px] == s);
        }
    }
    SUBCASE("no emitters leaves pure background in the ZPL band") {
        const auto cube = expected_spectral_cube({}, cav, ch, g, axis);
        const std::size_t b = static_cast<std::size_t>((736.9 - 560.0) / 2.0);
        for (std::size_t px = 0; px < g.pixels(); ++px)
            CHECK(cube.mean[px * axis.bins + b] == Approx(ch.background_kcps_per_nm * 2.0));
    }
    SUBCASE("material coverage is 1 deep inside extended material") {
        CavityLayout solid = cav;
        solid.hole_radius_nm = 1.0;
        const auto cover = material_coverage(solid, 50.0, ImageGeometry::covering({-100, 0}, {100, 0}, 100.0, 1.0));
        for (double v : cover) CHECK(v == Approx(1.0).epsilon(2e-3));
    }
    SUBCASE("axis must cover both lines") {
        CHECK_THROWS_AS(expected_spectral_cube({}, cav, ch, g, SpectralAxis{600.0, 2.0, 100}), DomainError);
        CHECK_THROWS_AS(expected_spectral_cube({}, cav, ch, g, SpectralAxis{560.0, 1.0, 100}), DomainError);
    }
    SUBCASE("emitter at the cavity center") {
        const std::vector<Emitter> em{emitter_at(0, 0, 30.0)};
        const Point2D ext = cav.half_extent();
        const auto full = ImageGeometry::covering({-ext.x - 800, -ext.y - 800}, {ext.x + 800, ext.y + 800}, 100.0, 1.0);
        const auto cube = render_spectral_cube(em, cav, ch, full, axis, RandomSeed(4));
        TargetingOptions opt;
        opt.zpl_psf_sigma_nm = ch.zpl_psf.sigma_nm();
        const auto t = estimate_targeting(cube, 572.8, 736.9, opt);
        const Eigen::Vector2d d(t.offset.x, t.offset.y);
        CHECK(d.dot(t.offset_covariance.ldlt().solve(d)) < 11.8);  // chi2(2) 99.7% quantile
    }
}

TEST_CASE("g2 synthesis") {
    const G2Model m{0.8, 0.18, 3.0, 50.0};
    CHECK(m(0.0) == Approx(0.38));
    CHECK(m.at_zero() == Approx(0.38));
    CHECK(m(1e5) == Approx(1.0));
    CHECK(G2Model{1.0, 0.0, 3.0, 50.0}(0.0) == 0.0);
    for (double t : {0.5, 3.0, 17.0, 120.0}) CHECK(m(t) == m(-t));

    const auto tau = symmetric_delay_bins(100.0, 2.0);
    CHECK(tau.size() == 101);
    CHECK(tau[50] == 0.0);
    const auto clean = synth_g2(m, tau, 0.0, std::nullopt);
    CHECK(clean.value[50] == Approx(0.38));
    for (std::size_t k = 0; k < tau.size(); ++k) CHECK(clean.value[k] == clean.value[tau.size() - 1 - k]);

    const double total = 1e6;
    const auto noisy = synth_g2(m, tau, total, RandomSeed(3));
    CHECK_NOTHROW(noisy.validate());
    double sum = 0, chi2 = 0;
    for (std::size_t k = 0; k < tau.size(); ++k) {
        sum += noisy.value[k];
        const double r = (noisy.value[k] - m(tau[k])) / noisy.sigma[k];
        chi2 += r * r;
    }
    CHECK(stats::chi_square_sf(chi2, static_cast<double>(tau.size())) > 0.001);
    CHECK_THROWS_AS(synth_g2(G2Model{1.2, 0.0, 1.0, 1.0}, tau, 0.0, std::nullopt), DomainError);
    CHECK(synth_g2(m, tau, total, RandomSeed(3)).value == noisy.value);
}

TEST_CASE("PLE synthesis") {
    PleScan scan;
    scan.reference_ghz = 406829.0;
    scan.points = 2001;
    const auto s = synth_ple(406829.0, 126.0, scan, std::nullopt);
    // 2001 points over +-1000 MHz: 1 MHz spacing, so +-63 MHz are grid points.
    CHECK(s.counts[1000] == Approx(1e4));
    CHECK(s.counts[1000 - 63] == Approx(5e3));
    CHECK(s.counts[1000 + 63] == Approx(5e3));
    CHECK_THROWS_AS(synth_ple(406829.0, 50.0, scan, std::nullopt), DomainError);  // below lifetime limit
    CHECK_THROWS_AS(synth_ple(406829.9, 126.0, scan, std::nullopt), DomainError); // range too small
}

TEST_CASE("noisy PLE linewidth and its error bar") {
    PleScan scan;
    scan.reference_ghz = 406829.0;
    scan.peak_counts = 300.0;
    scan.background_counts = 5.0;
    std::vector<double> w, err;
    for (int r = 0; r < 300; ++r) {
        const auto s = synth_ple(406829.0, 200.0, scan, RandomSeed(31).child(r));
        const auto f = fit_line(s, LineModel::Lorentzian, 0.0);
        w.push_back(f.fwhm);
        err.push_back(f.fwhm_error);
    }
    const double sd = stats::stddev(w);
    CHECK(std::abs(stats::mean(w) - 200.0) < 3.0 * sd / std::sqrt(300.0));
    CHECK(stats::mean(err) / sd == Approx(1.0).epsilon(0.15));
}

TEST_CASE("voigt profile") {
    // Normalized, and reduces to the pure shapes.
    double area = 0;
    for (int i = -40000; i <= 40000; ++i) area += voigt_profile(i * 0.01, 0.5, 2.0) * 0.01;
    CHECK(area == Approx(1.0).epsilon(5e-3));  // Lorentzian tails beyond +-400 hold ~0.08%
    CHECK(voigt_profile(0.3, 1.0, 0.0) == Approx(0.5 / M_PI / (0.09 + 0.25)));
    CHECK(voigt_profile(0.3, 0.0, 1.0) == Approx(std::exp(-0.045) / std::sqrt(2 * M_PI)));

    // FWHM against the Olivero-Longbothum approximation (accurate to 0.02%).
    for (auto [fl, fg] : {std::pair{0.126, 34.0}, std::pair{10.0, 34.0}, std::pair{34.0, 10.0}}) {
        const double sg = fg / 2.3548200450309493;
        const double peak = voigt_profile(0.0, fl, sg);
        double lo = 0, hi = 10 * (fl + fg);
        for (int i = 0; i < 80; ++i) {
            const double mid = 0.5 * (lo + hi);
            (voigt_profile(mid, fl, sg) > 0.5 * peak ? lo : hi) = mid;
        }
        const double olivero = 0.5346 * fl + std::sqrt(0.2166 * fl * fl + fg * fg);
        CHECK(2 * lo == Approx(olivero).epsilon(3e-4));
    }

    // Pointwise against a brute-force convolution.
    const double fl = 10.0, sg = 34.0 / 2.3548200450309493;
    for (double x : {0.0, 7.0, 25.0, 80.0}) {
        double sum = 0.0;
        const double h = 0.005;
        for (double s = -12 * sg; s <= 12 * sg; s += h) {
            const double g = std::exp(-0.5 * s * s / (sg * sg)) / (sg * std::sqrt(2 * M_PI));
            const double d = x - s;
            sum += g * (0.5 * fl / M_PI) / (d * d + 0.25 * fl * fl) * h;
        }
        CHECK(voigt_profile(x, fl, sg) == Approx(sum).epsilon(1e-6));
    }
}

TEST_CASE("low-temperature spectra") {
    Emitter e = emitter_at(0, 0);
    e.zpl_center_ghz = 406829.0;
    e.homogeneous_fwhm_mhz = 126.0;
    e.fine_structure = FineStructure::transition_c_only();
    e.fine_structure.offsets_ghz[2] = 0.0;
    SpectrumOptions o;
    o.start_ghz = 406829.0 - 150.0;
    o.step_ghz = 0.5;
    o.points = 601;

    SUBCASE("a narrow line is instrument limited") {
        const auto s = synth_spectrum({&e, 1}, 34.0, SpectrumMode::Cryogenic, o);
        const double peak = *std::max_element(s.counts.begin(), s.counts.end());
        double lo = 0, hi = 100;
        const double sg = 34.0 / 2.3548200450309493;
        for (int i = 0; i < 80; ++i) {
            const double mid = 0.5 * (lo + hi);
            (voigt_profile(mid, 0.126, sg) / voigt_profile(0, 0.126, sg) > 0.5 ? lo : hi) = mid;
        }
        CHECK(peak == Approx(o.counts_per_emitter * o.step_ghz * voigt_profile(0.0, 0.126, sg)));
        // The exact Voigt FWHM is 0.2% above the instrument width.
        CHECK(2 * lo == Approx(0.5346 * 0.126 + std::sqrt(0.2166 * 0.126 * 0.126 + 34.0 * 34.0)).epsilon(2e-4));
        CHECK(2 * lo / 34.0 - 1.0 < 2.5e-3);
        const auto fit = fit_line(s, LineModel::Gaussian, 34.0);
        CHECK(fit.instrument_limited);
        CHECK(fit.fwhm == Approx(34.0).epsilon(5e-3));
    }
    SUBCASE("zero instrument width keeps the intrinsic line") {
        const auto s = synth_spectrum({&e, 1}, 0.0, SpectrumMode::Cryogenic, o);
        for (std::size_t i = 0; i < s.x.size(); i += 17) {
            const double d = s.x[i] - e.zpl_center_ghz;
            const double lorentz = 0.063 / M_PI / (d * d + 0.063 * 0.063);
            CHECK(s.counts[i] == Approx(o.counts_per_emitter * o.step_ghz * lorentz));
        }
    }
    SUBCASE("inhomogeneous ensemble adds in quadrature with the instrument") {
        SpectralPopulation pop;
        pop.transition_c_only = true;
        std::vector<Point3D> ions(4000);
        auto em = sample_emitters(ions, 1.0, pop, RandomSeed(21));
        for (auto& x : em) x.fine_structure.offsets_ghz[2] = 0.0;
        SpectrumOptions wide = o;
        wide.start_ghz = pop.center_ghz - 250.0;
        wide.step_ghz = 1.0;
        wide.points = 501;
        wide.counts_per_emitter = 100.0;
        const auto s = synth_spectrum(em, 34.0, SpectrumMode::Cryogenic, wide);
        const auto fit = fit_line(s, LineModel::Gaussian, 34.0);
        CHECK(fit.fwhm == Approx(std::hypot(51.0, 34.0)).epsilon(0.03));
        CHECK_FALSE(fit.instrument_limited);
    }
}
