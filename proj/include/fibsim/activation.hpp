#pragma once

#include "fibsim/foundation.hpp"
#include "fibsim/random.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fibsim {

/// Conversion probability over (energy, log10 dose) plus the electron-irradiation step model.
struct YieldSurface {
    std::vector<double> energies_kev;   // strictly increasing
    std::vector<double> log10_doses;    // strictly increasing, log10(cm^-2)
    std::vector<double> eta;            // row-major [energy][dose]
    double irradiation_multiplier = 10.0;
    double yield_cap = 1.0;
    double activation_fluence_per_cm2 = 1e17;

    double at(std::size_t energy_index, std::size_t dose_index) const {
        return eta[energy_index * log10_doses.size() + dose_index];
    }

    /// Throws DomainError on shape, range, or monotonicity violations
    /// (eta non-decreasing in energy, non-increasing in dose).
    void validate() const;

    /// eta = eta_100 * (E/100)^energy_exponent * (D/1e12)^(-dose_exponent), clipped to [0, 1],
    /// sampled on 10..100 keV x 1e12..1e14 cm^-2.
    static YieldSurface power_law(double eta_100kev, double energy_exponent, double dose_exponent);
    /// Default energy exponent: linear extrapolation of the 90-100 keV grid cell to
    /// 160 keV at 1e12 cm^-2 lands on 1.2 * eta_100 (0.03 for eta_100 = 0.025).
    static double default_energy_exponent();
    static YieldSurface defaults();

    /// CSV `energy_keV,dose_cm2,eta`, one row per grid node.
    static YieldSurface read_csv(std::istream& in, const std::string& source = "<stream>");
    static YieldSurface load_csv(const std::string& path);
    void write_csv(std::ostream& out) const;
};

struct YieldLookup {
    double eta = 0.0;
    bool extrapolated = false;
};

/// Bilinear interpolation in (energy, log10 dose). Linear extrapolation is
/// permitted out to twice the upper grid edge and half the lower one on each
/// axis; the result is then flagged. Further out throws RangeError.
YieldLookup yield_lookup(const YieldSurface& surface, double energy_kev, double dose_per_cm2);

/// Step-function irradiation model.
double apply_irradiation(double eta, double fluence_per_cm2, const YieldSurface& surface);

/// Four fine-structure transitions relative to the line center, with branching weights.
struct FineStructure {
    std::array<double, 4> offsets_ghz{};
    std::array<double, 4> weights{};

    /// A/B/C/D template with 48 GHz ground and 259 GHz excited-state splittings.
    static FineStructure four_line_template();
    /// All weight on transition C (third line).
    static FineStructure transition_c_only();
};

struct Emitter {
    Point3D position;
    double zpl_center_ghz = 0.0;
    double homogeneous_fwhm_mhz = 0.0;
    double brightness_kcps = 0.0;  // peak-pixel detected rate at the reference excitation
    FineStructure fine_structure;
    std::size_t ion_index = 0;     // index of the source ion in the list passed to sample_emitters
};

struct SpectralPopulation {
    double center_ghz = 406'829.2278;  // 736.9 nm
    double inhomogeneous_fwhm_ghz = 51.0;
    double homogeneous_median_mhz = 191.1996;  // mean 200 MHz at shape 0.3
    double homogeneous_shape = 0.3;  // log-normal sigma of ln(linewidth)
    double lifetime_ns = 1.7;
    double brightness_kcps = 30.0;
    bool transition_c_only = false;

    /// Log-normal median chosen so the mean homogeneous linewidth is `mean_mhz`.
    static SpectralPopulation with_mean_linewidth(double mean_mhz, double shape);
    double lifetime_limit_mhz() const { return lifetime_limited_linewidth_mhz(lifetime_ns); }
    void validate() const;
};

/// Poisson(n_ions * eta) emitter count.
std::uint64_t sample_emitter_count(std::uint64_t n_ions, double eta, Engine& rng);
std::uint64_t sample_emitter_count(std::uint64_t n_ions, double eta, const RandomSeed& seed);

/// Independent Bernoulli(eta) activation per ion with spectral properties drawn from `pop`.
std::vector<Emitter> sample_emitters(std::span<const Point3D> ions, double eta, const SpectralPopulation& pop,
                                     const RandomSeed& seed);

}  // namespace fibsim
