#pragma once

#include "fibsim/activation.hpp"
#include "fibsim/foundation.hpp"
#include "fibsim/random.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fibsim {

/// Gaussian approximation of the Airy core, FWHM = 0.51 lambda / NA.
struct PsfSpec {
    double numerical_aperture = 1.3;
    double wavelength_nm = 737.0;

    double sigma_nm() const;
    void validate() const;
};

/// Gaussian PSF sigma in nm. DomainError unless 0 < NA <= 1.5.
double psf_sigma(double numerical_aperture, double wavelength_nm);

/// Pixel (row, col) is centered at origin + (col, row) * pitch.
struct ImageGeometry {
    Point2D origin;
    double pixel_pitch_nm = 100.0;
    std::size_t width = 0;
    std::size_t height = 0;
    double dwell_ms = 1.0;

    std::size_t pixels() const { return width * height; }
    Point2D pixel_center(std::size_t row, std::size_t col) const {
        return {origin.x + static_cast<double>(col) * pixel_pitch_nm, origin.y + static_cast<double>(row) * pixel_pitch_nm};
    }
    void validate() const;

    /// Smallest grid at `pitch` whose pixel centers cover [lo, hi], centered on the box.
    static ImageGeometry covering(Point2D lo, Point2D hi, double pitch_nm, double dwell_ms);
};

struct ConfocalImage {
    ImageGeometry geometry;
    std::vector<std::uint32_t> counts;  // row-major
    std::vector<std::string> warnings;

    std::uint32_t at(std::size_t row, std::size_t col) const { return counts[row * geometry.width + col]; }
    std::uint64_t total() const;
};

/// Expected counts per pixel: dwell * (background + sum_i rate_i * exp(-d_i^2 / 2 sigma^2)),
/// with d_i the lateral point-pixel distance. Rates in kcts/s, dwell in ms.
std::vector<double> expected_point_image(std::span<const Point2D> points, std::span<const double> peak_rates_kcps,
                                         double psf_sigma_nm, double background_kcps, const ImageGeometry& geometry);

std::vector<double> expected_confocal(std::span<const Emitter> emitters, const PsfSpec& psf, double background_kcps,
                                      const ImageGeometry& geometry);

/// Poisson draws around `mean`; each row uses its own child seed so the result
/// does not depend on evaluation order.
ConfocalImage sample_image(const ImageGeometry& geometry, std::span<const double> mean, const RandomSeed& seed);

/// Shot-noise confocal scan. Undersampling (pitch > PSF sigma) is recorded as a warning.
ConfocalImage render_confocal(std::span<const Emitter> emitters, const PsfSpec& psf, double background_kcps,
                              const ImageGeometry& geometry, const RandomSeed& seed);

/// L3 photonic-crystal cavity: a triangular lattice of air holes with three
/// missing holes in the central row, cut out of a finite membrane.
struct CavityLayout {
    Point2D center;
    double lattice_constant_nm = 250.0;
    double hole_radius_nm = 75.0;
    int half_columns = 6;  // holes per half row
    int half_rows = 4;     // rows above and below the cavity row
    std::vector<Point2D> mode_maxima_offsets{{-250.0, 0.0}, {0.0, 0.0}, {250.0, 0.0}};
    double raman_wavelength_nm = 572.8;

    bool is_material(Point2D p) const;
    std::vector<Point2D> mode_maxima() const;
    Point2D half_extent() const;
    /// Maxima inside the material, exactly three of them.
    void validate() const;
};

/// Uniform wavelength bins; bin i spans [start + i*step, start + (i+1)*step).
struct SpectralAxis {
    double start_nm = 560.0;
    double step_nm = 2.0;
    std::size_t bins = 100;

    double lower(std::size_t i) const { return start_nm + static_cast<double>(i) * step_nm; }
    double center(std::size_t i) const { return lower(i) + 0.5 * step_nm; }
    double end_nm() const { return lower(bins); }
    bool covers(double wavelength_nm) const { return wavelength_nm >= start_nm && wavelength_nm < end_nm(); }
    void validate() const;
};

struct SpectralCube {
    ImageGeometry geometry;
    SpectralAxis axis;
    std::vector<std::uint32_t> counts;  // [pixel][bin]

    std::uint32_t at(std::size_t pixel, std::size_t bin) const { return counts[pixel * axis.bins + bin]; }
    /// Sum of bins whose centers lie within half_band of the wavelength (at least the containing bin).
    ConfocalImage slice(double wavelength_nm, double half_band_nm = 0.0) const;
    ConfocalImage sum_bins() const;
};

struct CubeChannels {
    PsfSpec raman_psf{1.3, 532.0};  // Raman follows the pump spot
    PsfSpec zpl_psf{1.3, 737.0};
    double raman_rate_kcps = 200.0;  // inside extended material under full PSF coverage
    double raman_fwhm_nm = 0.5;
    double zpl_wavelength_nm = 736.9;
    double zpl_fwhm_nm = 5.0;        // room-temperature phonon-broadened emission
    double background_kcps_per_nm = 0.01;
};

struct ExpectedCube {
    ImageGeometry geometry;
    SpectralAxis axis;
    std::vector<double> mean;  // [pixel][bin]
};

/// Mean of the material mask convolved with the PSF, normalized to 1 inside extended material.
std::vector<double> material_coverage(const CavityLayout& cavity, double psf_sigma_nm, const ImageGeometry& geometry);

ExpectedCube expected_spectral_cube(std::span<const Emitter> emitters, const CavityLayout& cavity,
                                    const CubeChannels& channels, const ImageGeometry& geometry,
                                    const SpectralAxis& axis);
SpectralCube sample_cube(const ExpectedCube& expected, const RandomSeed& seed);
SpectralCube render_spectral_cube(std::span<const Emitter> emitters, const CavityLayout& cavity,
                                  const CubeChannels& channels, const ImageGeometry& geometry,
                                  const SpectralAxis& axis, const RandomSeed& seed);

/// g2(tau) = 1 - a exp(-|tau/t1|) + b exp(-|tau/t2|).
struct G2Model {
    double a = 0.8;
    double b = 0.18;
    double t1_ns = 3.0;
    double t2_ns = 50.0;

    double operator()(double tau_ns) const;
    double at_zero() const { return 1.0 - a + b; }
};

struct G2Histogram {
    std::vector<double> tau_ns;
    std::vector<double> value;  // normalized coincidences
    std::vector<double> sigma;  // per-bin 1-sigma uncertainty

    /// Sizes agree, values >= 0, sigma > 0, bins symmetric about zero.
    void validate() const;
};

/// Odd number of bin centers -half_range..half_range spaced by bin_width, including zero.
std::vector<double> symmetric_delay_bins(double half_range_ns, double bin_width_ns);

/// Counts per bin are Poisson(model * scale) with scale chosen so the histogram holds
/// `total_counts` coincidences; values are normalized back by the scale. Without a seed
/// the histogram is noiseless (sigma still reflects the expected counts, or 1 when
/// total_counts is 0).
G2Histogram synth_g2(const G2Model& model, std::span<const double> tau_ns, double total_counts,
                     const std::optional<RandomSeed>& seed);

enum class SpectrumUnit { Gigahertz, Megahertz, Nanometer };

/// Counts on an x grid. For Megahertz spectra x is a detuning from reference_ghz.
struct Spectrum {
    std::vector<double> x;
    std::vector<double> counts;
    SpectrumUnit unit = SpectrumUnit::Gigahertz;
    double reference_ghz = 0.0;
};

struct PleScan {
    double reference_ghz = 0.0;   // laser frequency at zero detuning
    double half_range_mhz = 1000.0;
    std::size_t points = 201;
    double peak_counts = 1e4;
    double background_counts = 0.0;
};

/// Lorentzian excitation profile with Poisson noise (noiseless without a seed).
Spectrum synth_ple(double line_center_ghz, double fwhm_mhz, const PleScan& scan, const std::optional<RandomSeed>& seed,
                   double lifetime_ns = 1.7);

enum class SpectrumMode { RoomTemperature, Cryogenic };

struct SpectrumOptions {
    double start_ghz = 0.0;
    double step_ghz = 1.0;
    std::size_t points = 0;
    double counts_per_emitter = 1e4;
    double room_temperature_fwhm_nm = 5.0;
};

/// Each transition is its intrinsic line convolved with a Gaussian instrument
/// response of the given FWHM. Cryogenic lines are Lorentzian (homogeneous
/// width); room temperature replaces them with one phonon-broadened Gaussian.
Spectrum synth_spectrum(std::span<const Emitter> emitters, double resolution_fwhm_ghz, SpectrumMode mode,
                        const SpectrumOptions& options, const std::optional<RandomSeed>& seed = std::nullopt);

/// Lorentzian (FWHM gamma) convolved with a zero-mean Gaussian (sigma), evaluated at x.
double voigt_profile(double x, double lorentz_fwhm, double gauss_sigma);

}  // namespace fibsim
