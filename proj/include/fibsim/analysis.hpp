#pragma once

#include "fibsim/error.hpp"
#include "fibsim/foundation.hpp"
#include "fibsim/imaging.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace fibsim {

// ---------------------------------------------------------------------------
// Localization

struct LocalizationResult {
    Point2D position;
    double sigma_x_nm = 0.0;  // 1-sigma position uncertainty
    double sigma_y_nm = 0.0;
    double peak_counts = 0.0;  // fitted Gaussian amplitude
    double background_counts = 0.0;
    double width_nm = 0.0;     // fitted Gaussian sigma
    double integrated_counts = 0.0;
    double residual_norm = 0.0;
};

struct LocalizeOptions {
    double psf_sigma_nm = 122.8;
    double min_separation_nm = 300.0;
    double threshold_sigmas = 6.0;  // detection threshold on the matched-filtered image
    double window_sigmas = 3.0;     // fit window half-size
};

struct LocalizationDiagnostics {
    std::size_t candidates = 0;
    std::size_t merged = 0;
    std::size_t dropped = 0;  // fits that diverged or left the window
};

struct Localization {
    std::vector<LocalizationResult> sites;
    LocalizationDiagnostics diagnostics;
};

/// Matched-filter peak detection followed by a weighted least-squares fit of an
/// isotropic 2D Gaussian plus constant background around each candidate.
Localization localize_sites(const ConfocalImage& image, const LocalizeOptions& options);

/// Keeps sites whose peak intensity lies in [0.5, 1.5] x reference (median peak when absent).
std::vector<LocalizationResult> filter_single_sites(std::span<const LocalizationResult> results,
                                                    std::optional<double> reference_intensity = std::nullopt);

// ---------------------------------------------------------------------------
// Lattice registration

struct LatticeIndex {
    long i = 0;
    long j = 0;
    friend bool operator==(const LatticeIndex&, const LatticeIndex&) = default;
};

struct GridFit {
    /// Maps lattice coordinates (i * pitch, j * pitch) in nm to image coordinates.
    AffineTransform2D transform = AffineTransform2D::identity();
    double pitch_nm = 0.0;
    std::vector<LatticeIndex> indices;     // per site; normalized so min i = min j = 0
    std::vector<Point2D> displacements;    // site - transform(lattice point)
    Point2D mean_displacement;
    Point2D std_displacement;
    int iterations = 0;

    Point2D lattice_point(const LatticeIndex& idx) const;
    std::vector<double> distances() const;
};

class GridFitError : public FitError {
public:
    GridFitError(const std::string& what, GridFit last) : FitError(what), last_(std::move(last)) {}
    const GridFit& last_iterate() const { return last_; }

private:
    GridFit last_;
};

/// Alternates nearest-lattice assignment with a linear least-squares affine refit
/// until the assignment is stable. Needs at least six sites.
GridFit fit_affine_grid(std::span<const Point2D> sites, double nominal_pitch_nm, int max_iterations = 50);

// ---------------------------------------------------------------------------
// Radial precision

struct RayleighFit {
    double sigma_nm = 0.0;
    double sigma_error_nm = 0.0;
    double mean_r_nm = 0.0;      // sigma * sqrt(pi/2)
    double variance_r_nm2 = 0.0; // sigma^2 (4 - pi) / 2
    double std_r_nm = 0.0;
    std::size_t samples = 0;
    bool binned = false;
};

double rayleigh_cdf(double r, double sigma);

/// Closed-form maximum likelihood, sigma^2 = sum r^2 / 2n. Needs >= 10 samples, all >= 0.
RayleighFit fit_rayleigh(std::span<const double> distances);
/// Least-squares fit of the Rayleigh density to a histogram (figure reproduction).
RayleighFit fit_rayleigh_binned(std::span<const double> distances, std::size_t bins);

// ---------------------------------------------------------------------------
// Yield

struct RegionRate {
    double rate_kcps = 0.0;   // in units of single-emitter peak rates
    double error_kcps = 0.0;
    double total_counts = 0.0;
};

/// Background-subtracted image total converted to the summed peak rate of the
/// emitters, using the PSF footprint 2 pi sigma^2 / pitch^2.
RegionRate integrated_region_rate(const ConfocalImage& image, double psf_sigma_nm, double background_kcps);

struct YieldEstimate {
    double eta = 0.0;
    double error = 0.0;
};

YieldEstimate estimate_yield(double region_rate_kcps, double single_rate_kcps, double n_ions,
                             double region_rate_error_kcps = 0.0);

// ---------------------------------------------------------------------------
// Photon statistics

struct Interval {
    double low = 0.0;
    double high = 0.0;
    bool contains(double v) const { return v >= low && v <= high; }
};

struct G2Fit {
    G2Model params;
    std::array<Interval, 4> ci{};  // a, b, t1, t2
    double g2_zero = 1.0;
    Interval g2_zero_ci;
    bool is_single = false;
    bool ci_reliable = false;  // false when the fit did not converge or the covariance is singular
    double reduced_chi2 = 0.0;
    Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();
};

struct G2FitOptions {
    double confidence = 0.95;
    /// Use the histogram uncertainties as absolute sigmas (no chi-square rescaling).
    bool absolute_sigma = true;
};

/// Weighted least squares of 1 - a e^{-|tau/t1|} + b e^{-|tau/t2|}. Initial values come
/// from a grid over (t1, t2) with (a, b) solved linearly at each node.
G2Fit fit_g2(const G2Histogram& hist, const G2FitOptions& options = {});

// ---------------------------------------------------------------------------
// Line shapes

enum class LineModel { Gaussian, Lorentzian };

struct LineFit {
    double center = 0.0;  // x units of the spectrum
    double center_error = 0.0;
    double fwhm = 0.0;
    double fwhm_error = 0.0;
    double amplitude = 0.0;
    double offset = 0.0;
    LineModel model = LineModel::Gaussian;
    bool instrument_limited = false;
    double reduced_chi2 = 0.0;
};

struct LineFitOptions {
    bool poisson_weights = true;
    double instrument_factor = 1.2;
};

/// Least-squares center/width/amplitude/offset. instrument_limited when the fitted
/// FWHM is below instrument_factor x instrument_fwhm (same units as x).
LineFit fit_line(const Spectrum& spectrum, LineModel model, double instrument_fwhm, const LineFitOptions& options = {});

// ---------------------------------------------------------------------------
// Targeting

struct GaussianSpot {
    Point2D center;
    Eigen::Matrix2d center_covariance = Eigen::Matrix2d::Zero();
    double width_x_nm = 0.0;
    double width_y_nm = 0.0;
    double amplitude = 0.0;
    double background = 0.0;
    double reduced_chi2 = 0.0;
};

/// Axis-aligned elliptical 2D Gaussian plus background over the whole image, unweighted.
/// The center covariance is a sandwich estimate with Poisson pixel variances.
GaussianSpot fit_gaussian_spot(const ConfocalImage& image, double width_guess_nm);

struct TargetingResult {
    GaussianSpot raman;
    GaussianSpot zpl;
    Point2D offset;  // zpl - raman
    double distance_nm = 0.0;
    double distance_error_nm = 0.0;  // 1 sigma (68%)
    Eigen::Matrix2d offset_covariance = Eigen::Matrix2d::Zero();
};

struct TargetingOptions {
    double raman_half_band_nm = 1.0;
    double zpl_half_band_nm = 4.0;
    double zpl_psf_sigma_nm = 122.8;
    double raman_width_guess_nm = 500.0;
    double detection_sigmas = 5.0;
};

/// The cube must show the whole membrane with a margin; a cropped Raman plateau leaves the widths undetermined.
TargetingResult estimate_targeting(const SpectralCube& cube, double raman_wavelength_nm, double zpl_wavelength_nm,
                                   const TargetingOptions& options = {});

}  // namespace fibsim
