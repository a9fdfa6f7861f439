#pragma once

// Units used throughout: nm for length, keV for energy, GHz for optical
// frequency (MHz where a field name says so), seconds for time, counts for
// photon tallies, kcts/s for count rates.

#include <array>
#include <cmath>

namespace fibsim {

inline constexpr double kPi = 3.14159265358979323846;
/// FWHM / sigma for a Gaussian, 2*sqrt(2 ln 2).
inline constexpr double kFwhmPerSigma = 2.3548200450309493;
inline constexpr double kSpeedOfLightNmPerS = 2.99792458e17;
inline constexpr double kElementaryChargeC = 1.602176634e-19;

struct Point2D {
    double x = 0.0;
    double y = 0.0;

    friend Point2D operator+(Point2D a, Point2D b) { return {a.x + b.x, a.y + b.y}; }
    friend Point2D operator-(Point2D a, Point2D b) { return {a.x - b.x, a.y - b.y}; }
    friend Point2D operator*(double s, Point2D p) { return {s * p.x, s * p.y}; }
    friend bool operator==(const Point2D&, const Point2D&) = default;

    double norm() const { return std::hypot(x, y); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

/// z is depth below the top surface (z >= 0).
struct Point3D {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Point2D lateral() const { return {x, y}; }
    friend bool operator==(const Point3D&, const Point3D&) = default;
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

double distance(Point2D a, Point2D b);

enum class WidthDirection { ToSigma, ToFwhm };

/// Gaussian FWHM <-> sigma. Throws DomainError for value <= 0.
double fwhm_sigma_convert(double value, WidthDirection direction);
inline double fwhm_to_sigma(double fwhm) { return fwhm_sigma_convert(fwhm, WidthDirection::ToSigma); }
inline double sigma_to_fwhm(double sigma) { return fwhm_sigma_convert(sigma, WidthDirection::ToFwhm); }

/// Small-width conversion of a wavelength linewidth to frequency: c * width / center^2, in GHz.
double wavelength_linewidth_to_frequency(double center_nm, double width_nm);
/// Inverse of wavelength_linewidth_to_frequency, in nm.
double frequency_linewidth_to_wavelength(double center_nm, double width_ghz);

double wavelength_to_frequency(double wavelength_nm);  // GHz
double frequency_to_wavelength(double frequency_ghz);  // nm

/// Lifetime-limited (natural) linewidth 1/(2 pi tau), in MHz.
double lifetime_limited_linewidth_mhz(double lifetime_ns);

/// x' = L x + t. The linear part must be invertible.
class AffineTransform2D {
public:
    /// Row-major linear part {a, b, c, d} for [[a, b], [c, d]].
    AffineTransform2D(std::array<double, 4> linear, Point2D translation);

    static AffineTransform2D identity();
    static AffineTransform2D translation(Point2D t);
    static AffineTransform2D rotation(double radians);

    const std::array<double, 4>& linear() const { return linear_; }
    Point2D translation() const { return translation_; }
    double determinant() const { return linear_[0] * linear_[3] - linear_[1] * linear_[2]; }

    Point2D apply(Point2D p) const;
    Point2D apply_linear(Point2D p) const;
    AffineTransform2D inverse() const;
    /// (*this)∘other: apply other first.
    AffineTransform2D compose(const AffineTransform2D& other) const;

private:
    std::array<double, 4> linear_;
    Point2D translation_;
};

inline Point2D apply_affine(const AffineTransform2D& t, Point2D p) { return t.apply(p); }

enum class SpectralUnit { Gigahertz, Nanometer };

/// A line position and its FWHM expressed in the same unit.
class SpectralQuantity {
public:
    SpectralQuantity(double center, double fwhm, SpectralUnit unit);

    double center() const { return center_; }
    double fwhm() const { return fwhm_; }
    SpectralUnit unit() const { return unit_; }

    SpectralQuantity to(SpectralUnit unit) const;

private:
    double center_;
    double fwhm_;
    SpectralUnit unit_;
};

}  // namespace fibsim
