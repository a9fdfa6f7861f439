#include "fibsim/foundation.hpp"

#include "fibsim/error.hpp"

#include <string>

namespace fibsim {

double distance(Point2D a, Point2D b) { return (a - b).norm(); }

double fwhm_sigma_convert(double value, WidthDirection direction) {
    if (!(value > 0.0) || !std::isfinite(value)) {
        throw DomainError("fwhm_sigma_convert: width must be positive and finite, got " + std::to_string(value));
    }
    return direction == WidthDirection::ToSigma ? value / kFwhmPerSigma : value * kFwhmPerSigma;
}

double wavelength_linewidth_to_frequency(double center_nm, double width_nm) {
    if (!(center_nm > 0.0) || !(width_nm > 0.0)) {
        throw DomainError("wavelength_linewidth_to_frequency: center and width must be positive");
    }
    if (width_nm >= center_nm) {
        throw DomainError("wavelength_linewidth_to_frequency: width must be much smaller than center");
    }
    return kSpeedOfLightNmPerS * width_nm / (center_nm * center_nm) * 1e-9;
}

double frequency_linewidth_to_wavelength(double center_nm, double width_ghz) {
    if (!(center_nm > 0.0) || !(width_ghz > 0.0)) {
        throw DomainError("frequency_linewidth_to_wavelength: center and width must be positive");
    }
    return width_ghz * 1e9 * center_nm * center_nm / kSpeedOfLightNmPerS;
}

double wavelength_to_frequency(double wavelength_nm) {
    if (!(wavelength_nm > 0.0)) throw DomainError("wavelength_to_frequency: wavelength must be positive");
    return kSpeedOfLightNmPerS / wavelength_nm * 1e-9;
}

double frequency_to_wavelength(double frequency_ghz) {
    if (!(frequency_ghz > 0.0)) throw DomainError("frequency_to_wavelength: frequency must be positive");
    return kSpeedOfLightNmPerS / (frequency_ghz * 1e9);
}

double lifetime_limited_linewidth_mhz(double lifetime_ns) {
    if (!(lifetime_ns > 0.0)) throw DomainError("lifetime must be positive");
    return 1e3 / (2.0 * kPi * lifetime_ns);
}

AffineTransform2D::AffineTransform2D(std::array<double, 4> linear, Point2D translation)
    : linear_(linear), translation_(translation) {
    if (!(std::abs(determinant()) > 1e-12)) {
        throw DomainError("AffineTransform2D: linear part is singular");
    }
}

AffineTransform2D AffineTransform2D::identity() { return {{1.0, 0.0, 0.0, 1.0}, {0.0, 0.0}}; }

AffineTransform2D AffineTransform2D::translation(Point2D t) { return {{1.0, 0.0, 0.0, 1.0}, t}; }

AffineTransform2D AffineTransform2D::rotation(double radians) {
    const double c = std::cos(radians);
    const double s = std::sin(radians);
    return {{c, -s, s, c}, {0.0, 0.0}};
}

Point2D AffineTransform2D::apply_linear(Point2D p) const {
    return {linear_[0] * p.x + linear_[1] * p.y, linear_[2] * p.x + linear_[3] * p.y};
}

Point2D AffineTransform2D::apply(Point2D p) const { return apply_linear(p) + translation_; }

AffineTransform2D AffineTransform2D::inverse() const {
    const double det = determinant();
    const std::array<double, 4> inv{linear_[3] / det, -linear_[1] / det, -linear_[2] / det, linear_[0] / det};
    const Point2D t{-(inv[0] * translation_.x + inv[1] * translation_.y),
                    -(inv[2] * translation_.x + inv[3] * translation_.y)};
    return {inv, t};
}

AffineTransform2D AffineTransform2D::compose(const AffineTransform2D& other) const {
    const auto& a = linear_;
    const auto& b = other.linear_;
    const std::array<double, 4> m{a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3],
                                  a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3]};
    return {m, apply(other.translation_)};
}

SpectralQuantity::SpectralQuantity(double center, double fwhm, SpectralUnit unit)
    : center_(center), fwhm_(fwhm), unit_(unit) {
    if (!(fwhm > 0.0)) throw DomainError("SpectralQuantity: width must be positive");
    if (unit == SpectralUnit::Nanometer && !(center > 0.0 && center < 10000.0)) {
        throw DomainError("SpectralQuantity: wavelength must lie in (0, 10000) nm");
    }
    if (unit == SpectralUnit::Gigahertz && !(center > 0.0)) {
        throw DomainError("SpectralQuantity: frequency must be positive");
    }
}

SpectralQuantity SpectralQuantity::to(SpectralUnit unit) const {
    if (unit == unit_) return *this;
    if (unit == SpectralUnit::Gigahertz) {
        return {wavelength_to_frequency(center_), wavelength_linewidth_to_frequency(center_, fwhm_), unit};
    }
    const double center_nm = frequency_to_wavelength(center_);
    return {center_nm, frequency_linewidth_to_wavelength(center_nm, fwhm_), unit};
}

}  // namespace fibsim
