#include "fibsim/analysis.hpp"
#include "fibsim/error.hpp"
#include "fibsim/implantation.hpp"
#include "fibsim/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace fibsim;
using doctest::Approx;

TEST_CASE("pulse planning") {
    const double q = 1.602176634e-19;
    CHECK(plan_pulse(0.5, 20) == Approx(20 * q / 0.5e-12 * 1e6));
    CHECK(plan_pulse(0.5, 20) == Approx(6.409).epsilon(1e-4));
    CHECK(plan_pulse(1.0, 1) == Approx(0.160).epsilon(2e-3));
    CHECK(plan_pulse(0.4, 0) == 0.0);
    CHECK(plan_pulse(0.5, 40) == Approx(2.0 * plan_pulse(0.5, 20)));
    CHECK(plan_pulse(1.0, 20) == Approx(0.5 * plan_pulse(0.5, 20)));
    CHECK_THROWS_AS(plan_pulse(0.0, 5), DomainError);
}

TEST_CASE("dose arithmetic") {
    CHECK(dose_to_ions(1e12, 100.0) == Approx(1e6));
    CHECK(dose_to_ions(0.0, 3.0) == 0.0);
    CHECK(dose_to_ions(1e14, 0.01) == Approx(1e4));
    CHECK(ions_to_dose(dose_to_ions(3.3e13, 7.0), 7.0) == Approx(3.3e13));
    CHECK_THROWS_AS(dose_to_ions(-1.0, 1.0), DomainError);
}

TEST_CASE("expected lateral sigma adds in quadrature") {
    BeamSpec b;
    b.fwhm_nm = 40.0;
    CHECK(expected_lateral_sigma(b, 19.0) == Approx(std::sqrt(std::pow(40.0 / 2.35482, 2) + 361.0)).epsilon(1e-5));
    CHECK(expected_lateral_sigma(b, 19.0) == Approx(25.5).epsilon(2e-3));
    CHECK(expected_lateral_sigma(b, 0.0) == Approx(16.99).epsilon(1e-3));
    b.fwhm_nm = 0.0;
    CHECK(expected_lateral_sigma(b, 19.0) == 19.0);
}

TEST_CASE("beam validation") {
    BeamSpec b;
    CHECK_NOTHROW(b.validate());
    b.energy_kev = 5.0;
    CHECK_THROWS_AS(b.validate(), DomainError);
    b.energy_kev = 100.0;
    b.current_pa = 0.0;
    CHECK_THROWS_AS(b.validate(), DomainError);
}

TEST_CASE("straggle table interpolation") {
    const auto t = StraggleTable::defaults();
    CHECK(t.at(100.0).lateral_sigma_nm == 19.0);
    CHECK(t.at(160.0).depth_mean_nm == 106.0);
    const auto mid = t.at(130.0);
    CHECK(mid.lateral_sigma_nm == Approx(19.0 + 0.5 * (25.0 - 19.0)));
    CHECK(mid.depth_mean_nm == Approx(75.0 + 0.5 * (106.0 - 75.0)));
    CHECK_THROWS_AS(t.at(5.0), RangeError);
    CHECK_THROWS_AS(t.at(250.0), RangeError);
    CHECK_THROWS_AS(StraggleTable({{100, 1, 1, 1}, {50, 1, 1, 1}}), DomainError);

    SUBCASE("csv round trip") {
        std::stringstream s;
        t.write_csv(s);
        const auto back = StraggleTable::read_csv(s);
        REQUIRE(back.entries().size() == t.entries().size());
        CHECK(back.at(130.0).depth_sigma_nm == t.at(130.0).depth_sigma_nm);
    }
    SUBCASE("csv errors name the location") {
        std::istringstream bad("energy_keV,lateral_sigma_nm,depth_mean_nm,depth_sigma_nm\n10,4,x,5\n");
        CHECK_THROWS_AS(StraggleTable::read_csv(bad, "s.csv"), ParseError);
    }
    SUBCASE("shipped file matches the built-in defaults") {
        const auto file = StraggleTable::load_csv(FIBSIM_SOURCE_DIR "/data/straggle_default.csv");
        REQUIRE(file.entries().size() == t.entries().size());
        for (std::size_t k = 0; k < t.entries().size(); ++k)
            CHECK(file.entries()[k].lateral_sigma_nm == t.entries()[k].lateral_sigma_nm);
    }
}

TEST_CASE("ion sampling") {
    const auto table = StraggleTable::defaults();
    SUBCASE("degenerate beam lands on the target") {
        BeamSpec b;
        b.fwhm_nm = 0.0;
        const StraggleTable zero({{10, 0, 50, 0}, {200, 0, 50, 0}});
        const auto ions = sample_ion_positions({{100, 200}, 5, 100.0}, b, zero, RandomSeed(1));
        REQUIRE(ions.size() == 5);
        for (const auto& p : ions) CHECK(p == Point3D{100, 200, 50});
    }
    SUBCASE("quadrature spread, Rayleigh radial law") {
        BeamSpec b;
        const auto ions = sample_ion_positions({{0, 0}, 100000, 100.0}, b, table, RandomSeed(7));
        REQUIRE(ions.size() == 100000);
        std::vector<double> xs, ys, rs;
        for (const auto& p : ions) {
            xs.push_back(p.x);
            ys.push_back(p.y);
            rs.push_back(std::hypot(p.x, p.y));
        }
        CHECK(stats::stddev(xs) >= 24.7);
        CHECK(stats::stddev(xs) <= 26.3);
        CHECK(stats::stddev(ys) >= 24.7);
        CHECK(stats::stddev(ys) <= 26.3);
        CHECK(std::abs(stats::mean(xs)) < 0.3);
        CHECK(std::abs(stats::mean(ys)) < 0.3);
        const double s = expected_lateral_sigma(b, 19.0);
        CHECK(stats::ks_statistic(rs, [s](double r) { return 1.0 - std::exp(-r * r / (2 * s * s)); }) < 0.01);
    }
    SUBCASE("determinism") {
        BeamSpec b;
        const auto a = sample_ion_positions({{3, 4}, 50, 60.0}, b, table, RandomSeed(5).child(2));
        const auto c = sample_ion_positions({{3, 4}, 50, 60.0}, b, table, RandomSeed(5).child(2));
        CHECK(a == c);
    }
    SUBCASE("energy outside the table") {
        BeamSpec b;
        b.energy_kev = 200.0;
        CHECK_THROWS_AS(sample_ion_positions({{0, 0}, 3, 250.0}, b, table, RandomSeed(1)), RangeError);
    }
    SUBCASE("pointing error is shared by every ion of a shot") {
        BeamSpec b;
        b.fwhm_nm = 0.0;
        b.pointing_sigma_nm = 30.0;
        const StraggleTable zero({{10, 0, 50, 0}, {200, 0, 50, 0}});
        const auto ions = sample_ion_positions({{0, 0}, 4, 100.0}, b, zero, RandomSeed(3));
        for (const auto& p : ions) CHECK(p == ions.front());
    }
}

TEST_CASE("area exposure stays inside the rectangle before straggle") {
    BeamSpec b;
    b.fwhm_nm = 0.0;
    const StraggleTable zero({{10, 0, 20, 0}, {200, 0, 20, 0}});
    const auto ions = sample_area_exposure({100, -50}, 1000, 400, 2000, 50.0, b, zero, RandomSeed(4));
    REQUIRE(ions.size() == 2000);
    double mx = 0;
    for (const auto& p : ions) {
        CHECK(std::abs(p.x - 100) <= 500);
        CHECK(std::abs(p.y + 50) <= 200);
        mx += p.x / 2000.0;
    }
    CHECK(mx == Approx(100).epsilon(0.1));
}
