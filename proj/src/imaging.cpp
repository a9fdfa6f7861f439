#include "fibsim/imaging.hpp"

#include "fibsim/error.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fibsim {

namespace {

constexpr double kPsfCutoffSigmas = 8.0;

double gauss_pdf(double x, double sigma) {
    return std::exp(-0.5 * x * x / (sigma * sigma)) / (std::sqrt(2.0 * kPi) * sigma);
}

double lorentz_pdf(double x, double fwhm) {
    const double hw = 0.5 * fwhm;
    return hw / (kPi * (x * x + hw * hw));
}

// Probability mass of N(mu, sigma) inside [lo, hi).
double gauss_mass(double lo, double hi, double mu, double sigma) {
    const double s = std::sqrt(2.0) * sigma;
    return 0.5 * (std::erf((hi - mu) / s) - std::erf((lo - mu) / s));
}

std::uint32_t poisson_draw(Engine& rng, double mean) {
    if (!(mean > 0.0)) return 0;
    std::poisson_distribution<std::uint32_t> dist(mean);
    return dist(rng);
}

}  // namespace

double psf_sigma(double numerical_aperture, double wavelength_nm) {
    if (!(numerical_aperture > 0.0 && numerical_aperture <= 1.5)) {
        throw DomainError("psf_sigma: numerical aperture must lie in (0, 1.5]");
    }
    if (!(wavelength_nm > 0.0)) throw DomainError("psf_sigma: wavelength must be positive");
    return 0.51 * wavelength_nm / numerical_aperture / kFwhmPerSigma;
}

double PsfSpec::sigma_nm() const { return psf_sigma(numerical_aperture, wavelength_nm); }

void PsfSpec::validate() const { (void)sigma_nm(); }

void ImageGeometry::validate() const {
    if (!(pixel_pitch_nm > 0.0)) throw DomainError("image pixel pitch must be positive");
    if (!(dwell_ms > 0.0)) throw DomainError("image dwell time must be positive");
    if (!origin.finite()) throw DomainError("image origin must be finite");
}

ImageGeometry ImageGeometry::covering(Point2D lo, Point2D hi, double pitch_nm, double dwell_ms) {
    if (!(pitch_nm > 0.0)) throw DomainError("image pixel pitch must be positive");
    ImageGeometry g;
    g.pixel_pitch_nm = pitch_nm;
    g.dwell_ms = dwell_ms;
    g.width = static_cast<std::size_t>(std::ceil((hi.x - lo.x) / pitch_nm - 1e-9)) + 1;
    g.height = static_cast<std::size_t>(std::ceil((hi.y - lo.y) / pitch_nm - 1e-9)) + 1;
    // Centered on the requested box so symmetric scenes are sampled symmetrically.
    g.origin = {0.5 * (lo.x + hi.x) - 0.5 * static_cast<double>(g.width - 1) * pitch_nm,
                0.5 * (lo.y + hi.y) - 0.5 * static_cast<double>(g.height - 1) * pitch_nm};
    return g;
}

std::uint64_t ConfocalImage::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::vector<double> expected_point_image(std::span<const Point2D> points, std::span<const double> peak_rates_kcps,
                                         double psf_sigma_nm, double background_kcps, const ImageGeometry& geometry) {
    geometry.validate();
    if (points.size() != peak_rates_kcps.size()) throw DomainError("expected_point_image: size mismatch");
    if (!(psf_sigma_nm > 0.0)) throw DomainError("expected_point_image: PSF sigma must be positive");

    const double cutoff = kPsfCutoffSigmas * psf_sigma_nm;
    const double pitch = geometry.pixel_pitch_nm;
    const Point2D lo{geometry.origin.x - cutoff, geometry.origin.y - cutoff};
    const double span_x = static_cast<double>(geometry.width) * pitch + 2.0 * cutoff;
    const double span_y = static_cast<double>(geometry.height) * pitch + 2.0 * cutoff;
    const auto cells_x = static_cast<std::size_t>(std::ceil(span_x / cutoff)) + 1;
    const auto cells_y = static_cast<std::size_t>(std::ceil(span_y / cutoff)) + 1;

    // Bucket points by cutoff-sized cells so each pixel only visits neighbours.
    std::vector<std::vector<std::size_t>> cells(cells_x * cells_y);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double cx = (points[i].x - lo.x) / cutoff;
        const double cy = (points[i].y - lo.y) / cutoff;
        if (cx < 0 || cy < 0 || cx >= static_cast<double>(cells_x) || cy >= static_cast<double>(cells_y)) continue;
        cells[static_cast<std::size_t>(cy) * cells_x + static_cast<std::size_t>(cx)].push_back(i);
    }

    const double inv_two_var = 0.5 / (psf_sigma_nm * psf_sigma_nm);
    const double cutoff2 = cutoff * cutoff;
    std::vector<double> mean(geometry.pixels(), 0.0);
    for (std::size_t r = 0; r < geometry.height; ++r) {
        for (std::size_t c = 0; c < geometry.width; ++c) {
            const Point2D p = geometry.pixel_center(r, c);
            const auto pcx = static_cast<long>((p.x - lo.x) / cutoff);
            const auto pcy = static_cast<long>((p.y - lo.y) / cutoff);
            double rate = background_kcps;
            for (long dy = -1; dy <= 1; ++dy) {
                for (long dx = -1; dx <= 1; ++dx) {
                    const long x = pcx + dx, y = pcy + dy;
                    if (x < 0 || y < 0 || x >= static_cast<long>(cells_x) || y >= static_cast<long>(cells_y)) continue;
                    for (std::size_t i : cells[static_cast<std::size_t>(y) * cells_x + static_cast<std::size_t>(x)]) {
                        const double ex = points[i].x - p.x, ey = points[i].y - p.y;
                        const double d2 = ex * ex + ey * ey;
                        if (d2 <= cutoff2) rate += peak_rates_kcps[i] * std::exp(-d2 * inv_two_var);
                    }
                }
            }
            mean[r * geometry.width + c] = rate * geometry.dwell_ms;
        }
    }
    return mean;
}

std::vector<double> expected_confocal(std::span<const Emitter> emitters, const PsfSpec& psf, double background_kcps,
                                      const ImageGeometry& geometry) {
    std::vector<Point2D> points;
    std::vector<double> rates;
    points.reserve(emitters.size());
    rates.reserve(emitters.size());
    for (const auto& e : emitters) {
        points.push_back(e.position.lateral());
        rates.push_back(e.brightness_kcps);
    }
    return expected_point_image(points, rates, psf.sigma_nm(), background_kcps, geometry);
}

ConfocalImage sample_image(const ImageGeometry& geometry, std::span<const double> mean, const RandomSeed& seed) {
    if (mean.size() != geometry.pixels()) throw DomainError("sample_image: mean map does not match geometry");
    ConfocalImage image;
    image.geometry = geometry;
    image.counts.resize(geometry.pixels());
    for (std::size_t r = 0; r < geometry.height; ++r) {
        Engine rng = seed.child(r).engine();
        for (std::size_t c = 0; c < geometry.width; ++c) {
            const std::size_t k = r * geometry.width + c;
            image.counts[k] = poisson_draw(rng, mean[k]);
        }
    }
    return image;
}

ConfocalImage render_confocal(std::span<const Emitter> emitters, const PsfSpec& psf, double background_kcps,
                              const ImageGeometry& geometry, const RandomSeed& seed) {
    if (!(background_kcps >= 0.0)) throw DomainError("render_confocal: background rate must be >= 0");
    const auto mean = expected_confocal(emitters, psf, background_kcps, geometry);
    ConfocalImage image = sample_image(geometry, mean, seed);
    if (geometry.pixel_pitch_nm > psf.sigma_nm()) {
        image.warnings.push_back("undersampled: pixel pitch exceeds PSF sigma");
    }
    return image;
}

bool CavityLayout::is_material(Point2D p) const {
    const Point2D d = p - center;
    const Point2D ext = half_extent();
    if (std::abs(d.x) > ext.x || std::abs(d.y) > ext.y) return false;
    const double a = lattice_constant_nm;
    const double row_pitch = a * std::sqrt(3.0) / 2.0;
    const long row = std::lround(d.y / row_pitch);
    const double r2 = hole_radius_nm * hole_radius_nm;
    // Only the nearest rows can contain a hole covering p.
    for (long j = row - 1; j <= row + 1; ++j) {
        if (std::abs(j) > half_rows) continue;
        const double shift = (j % 2 != 0) ? 0.5 * a : 0.0;
        const long col = std::lround((d.x - shift) / a);
        for (long i = col - 1; i <= col + 1; ++i) {
            if (std::abs(static_cast<double>(i) * a + shift) > half_columns * a) continue;
            if (j == 0 && std::abs(i) <= 1) continue;  // the three missing holes
            const double hx = static_cast<double>(i) * a + shift - d.x;
            const double hy = static_cast<double>(j) * row_pitch - d.y;
            if (hx * hx + hy * hy < r2) return false;
        }
    }
    return true;
}

Point2D CavityLayout::half_extent() const {
    const double a = lattice_constant_nm;
    return {(half_columns + 1.0) * a, (half_rows + 1.0) * a * std::sqrt(3.0) / 2.0};
}

std::vector<Point2D> CavityLayout::mode_maxima() const {
    std::vector<Point2D> out;
    for (const auto& off : mode_maxima_offsets) out.push_back(center + off);
    return out;
}

void CavityLayout::validate() const {
    if (!(lattice_constant_nm > 0.0 && hole_radius_nm > 0.0 && hole_radius_nm < 0.5 * lattice_constant_nm)) {
        throw DomainError("cavity: need 0 < hole radius < lattice constant / 2");
    }
    if (half_columns < 2 || half_rows < 1) throw DomainError("cavity: lattice too small for an L3 defect");
    if (mode_maxima_offsets.size() != 3) throw DomainError("cavity: an L3 layout has three mode maxima");
    for (const auto& m : mode_maxima()) {
        if (!is_material(m)) throw DomainError("cavity: mode maximum lies outside the material");
    }
    if (!(raman_wavelength_nm > 0.0)) throw DomainError("cavity: Raman wavelength must be positive");
}

void SpectralAxis::validate() const {
    if (!(step_nm > 0.0) || bins == 0) throw DomainError("spectral axis needs positive step and at least one bin");
    if (!(start_nm > 0.0)) throw DomainError("spectral axis must start at a positive wavelength");
}

ConfocalImage SpectralCube::slice(double wavelength_nm, double half_band_nm) const {
    if (!axis.covers(wavelength_nm)) throw DomainError("cube slice: wavelength outside the spectral axis");
    const auto containing = static_cast<std::size_t>((wavelength_nm - axis.start_nm) / axis.step_nm);
    ConfocalImage image;
    image.geometry = geometry;
    image.counts.assign(geometry.pixels(), 0);
    for (std::size_t b = 0; b < axis.bins; ++b) {
        if (b != containing && std::abs(axis.center(b) - wavelength_nm) > half_band_nm) continue;
        for (std::size_t p = 0; p < geometry.pixels(); ++p) image.counts[p] += at(p, b);
    }
    return image;
}

ConfocalImage SpectralCube::sum_bins() const {
    ConfocalImage image;
    image.geometry = geometry;
    image.counts.assign(geometry.pixels(), 0);
    for (std::size_t p = 0; p < geometry.pixels(); ++p)
        for (std::size_t b = 0; b < axis.bins; ++b) image.counts[p] += at(p, b);
    return image;
}

std::vector<double> material_coverage(const CavityLayout& cavity, double psf_sigma_nm, const ImageGeometry& geometry) {
    geometry.validate();
    const double h0 = std::min(10.0, psf_sigma_nm / 4.0);
    const Point2D ext = cavity.half_extent();
    const auto nx = static_cast<std::size_t>(std::ceil(2.0 * ext.x / h0));
    const auto ny = static_cast<std::size_t>(std::ceil(2.0 * ext.y / h0));
    const double hx = 2.0 * ext.x / static_cast<double>(nx);
    const double hy = 2.0 * ext.y / static_cast<double>(ny);
    std::vector<double> xs(nx), ys(ny);
    for (std::size_t i = 0; i < nx; ++i) xs[i] = cavity.center.x - ext.x + (static_cast<double>(i) + 0.5) * hx;
    for (std::size_t j = 0; j < ny; ++j) ys[j] = cavity.center.y - ext.y + (static_cast<double>(j) + 0.5) * hy;
    std::vector<std::uint8_t> mask(nx * ny);
    for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i) mask[j * nx + i] = cavity.is_material({xs[i], ys[j]}) ? 1 : 0;

    // The Gaussian kernel is separable: first contract along x per pixel column, then along y.
    const double inv_two_var = 0.5 / (psf_sigma_nm * psf_sigma_nm);
    std::vector<double> partial(geometry.width * ny, 0.0);
    for (std::size_t c = 0; c < geometry.width; ++c) {
        const double px = geometry.pixel_center(0, c).x;
        std::vector<double> kx(nx);
        for (std::size_t i = 0; i < nx; ++i) kx[i] = std::exp(-(xs[i] - px) * (xs[i] - px) * inv_two_var);
        for (std::size_t j = 0; j < ny; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < nx; ++i)
                if (mask[j * nx + i]) s += kx[i];
            partial[c * ny + j] = s;
        }
    }
    const double norm = hx * hy / (2.0 * kPi * psf_sigma_nm * psf_sigma_nm);
    std::vector<double> coverage(geometry.pixels(), 0.0);
    std::vector<double> ky(ny);
    for (std::size_t r = 0; r < geometry.height; ++r) {
        const double py = geometry.pixel_center(r, 0).y;
        for (std::size_t j = 0; j < ny; ++j) ky[j] = std::exp(-(ys[j] - py) * (ys[j] - py) * inv_two_var);
        for (std::size_t c = 0; c < geometry.width; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < ny; ++j) s += ky[j] * partial[c * ny + j];
            coverage[r * geometry.width + c] = s * norm;
        }
    }
    return coverage;
}

ExpectedCube expected_spectral_cube(std::span<const Emitter> emitters, const CavityLayout& cavity,
                                    const CubeChannels& channels, const ImageGeometry& geometry,
                                    const SpectralAxis& axis) {
    geometry.validate();
    axis.validate();
    cavity.validate();
    if (!axis.covers(cavity.raman_wavelength_nm)) throw DomainError("spectral axis does not cover the Raman line");
    if (!axis.covers(channels.zpl_wavelength_nm)) throw DomainError("spectral axis does not cover the ZPL band");
    for (const auto& e : emitters) {
        if (!axis.covers(frequency_to_wavelength(e.zpl_center_ghz))) {
            throw DomainError("spectral axis does not cover an emitter's ZPL");
        }
    }

    ExpectedCube cube{geometry, axis, std::vector<double>(geometry.pixels() * axis.bins, 0.0)};
    const double dwell = geometry.dwell_ms;
    auto add_channel = [&](const std::vector<double>& spatial, double center_nm, double fwhm_nm, double scale) {
        const double s = fwhm_nm / kFwhmPerSigma;
        std::vector<double> weights(axis.bins);
        for (std::size_t b = 0; b < axis.bins; ++b) weights[b] = gauss_mass(axis.lower(b), axis.lower(b + 1), center_nm, s);
        for (std::size_t p = 0; p < geometry.pixels(); ++p) {
            const double v = spatial[p] * scale;
            if (v == 0.0) continue;
            for (std::size_t b = 0; b < axis.bins; ++b) cube.mean[p * axis.bins + b] += v * weights[b];
        }
    };

    const auto raman = material_coverage(cavity, channels.raman_psf.sigma_nm(), geometry);
    add_channel(raman, cavity.raman_wavelength_nm, channels.raman_fwhm_nm, channels.raman_rate_kcps * dwell);
    for (const auto& e : emitters) {
        const Point2D pos = e.position.lateral();
        const double rate = e.brightness_kcps;
        const auto zpl = expected_point_image({&pos, 1}, {&rate, 1}, channels.zpl_psf.sigma_nm(), 0.0, geometry);
        add_channel(zpl, frequency_to_wavelength(e.zpl_center_ghz), channels.zpl_fwhm_nm, 1.0);
    }
    const double bg = channels.background_kcps_per_nm * axis.step_nm * dwell;
    for (double& v : cube.mean) v += bg;
    return cube;
}

SpectralCube sample_cube(const ExpectedCube& expected, const RandomSeed& seed) {
    SpectralCube cube{expected.geometry, expected.axis, std::vector<std::uint32_t>(expected.mean.size())};
    const std::size_t bins = expected.axis.bins;
    for (std::size_t r = 0; r < expected.geometry.height; ++r) {
        Engine rng = seed.child(r).engine();
        for (std::size_t c = 0; c < expected.geometry.width; ++c) {
            const std::size_t p = r * expected.geometry.width + c;
            for (std::size_t b = 0; b < bins; ++b) cube.counts[p * bins + b] = poisson_draw(rng, expected.mean[p * bins + b]);
        }
    }
    return cube;
}

SpectralCube render_spectral_cube(std::span<const Emitter> emitters, const CavityLayout& cavity,
                                  const CubeChannels& channels, const ImageGeometry& geometry,
                                  const SpectralAxis& axis, const RandomSeed& seed) {
    return sample_cube(expected_spectral_cube(emitters, cavity, channels, geometry, axis), seed);
}

double G2Model::operator()(double tau_ns) const {
    const double t = std::abs(tau_ns);
    return 1.0 - a * std::exp(-t / std::abs(t1_ns)) + b * std::exp(-t / std::abs(t2_ns));
}

void G2Histogram::validate() const {
    const std::size_t n = tau_ns.size();
    if (value.size() != n || sigma.size() != n) throw DomainError("g2 histogram: column sizes differ");
    for (std::size_t i = 0; i < n; ++i) {
        if (!(value[i] >= 0.0)) throw DomainError("g2 histogram: values must be >= 0");
        if (!(sigma[i] > 0.0)) throw DomainError("g2 histogram: uncertainties must be positive");
        const double scale = std::max(1.0, std::abs(tau_ns[i]));
        if (std::abs(tau_ns[i] + tau_ns[n - 1 - i]) > 1e-9 * scale) {
            throw DomainError("g2 histogram: delay bins must be symmetric about zero");
        }
    }
}

std::vector<double> symmetric_delay_bins(double half_range_ns, double bin_width_ns) {
    if (!(half_range_ns > 0.0 && bin_width_ns > 0.0)) throw DomainError("delay bins need positive range and width");
    const auto half = static_cast<long>(std::floor(half_range_ns / bin_width_ns + 1e-9));
    std::vector<double> tau;
    tau.reserve(static_cast<std::size_t>(2 * half + 1));
    for (long i = -half; i <= half; ++i) tau.push_back(static_cast<double>(i) * bin_width_ns);
    return tau;
}

G2Histogram synth_g2(const G2Model& model, std::span<const double> tau_ns, double total_counts,
                     const std::optional<RandomSeed>& seed) {
    if (!(model.a >= 0.0 && model.a <= 1.0) || !(model.b >= 0.0)) throw DomainError("synth_g2: need a in [0, 1], b >= 0");
    if (!(model.t1_ns > 0.0 && model.t2_ns > 0.0)) throw DomainError("synth_g2: time constants must be positive");
    if (!(total_counts >= 0.0)) throw DomainError("synth_g2: total counts must be >= 0");
    if (seed && total_counts == 0.0) throw DomainError("synth_g2: a noisy histogram needs total_counts > 0");

    G2Histogram h;
    h.tau_ns.assign(tau_ns.begin(), tau_ns.end());
    std::vector<double> mean;
    mean.reserve(tau_ns.size());
    for (double t : tau_ns) mean.push_back(model(t));
    const double sum = std::accumulate(mean.begin(), mean.end(), 0.0);
    const double scale = total_counts > 0.0 ? total_counts / sum : 0.0;

    std::optional<Engine> rng;
    if (seed) rng = seed->engine();
    for (double m : mean) {
        if (rng) {
            std::poisson_distribution<long> dist(m * scale);
            const auto n = static_cast<double>(m * scale > 0.0 ? dist(*rng) : 0);
            h.value.push_back(n / scale);
            h.sigma.push_back(std::sqrt(std::max(n, 1.0)) / scale);
        } else {
            h.value.push_back(m);
            h.sigma.push_back(scale > 0.0 ? std::sqrt(std::max(m * scale, 1.0)) / scale : 1.0);
        }
    }
    h.validate();
    return h;
}

Spectrum synth_ple(double line_center_ghz, double fwhm_mhz, const PleScan& scan, const std::optional<RandomSeed>& seed,
                   double lifetime_ns) {
    const double gamma = lifetime_limited_linewidth_mhz(lifetime_ns);
    if (!(fwhm_mhz >= gamma)) throw DomainError("synth_ple: linewidth below the lifetime limit");
    if (scan.points < 3 || !(scan.half_range_mhz > 0.0)) throw DomainError("synth_ple: scan needs >= 3 points and a positive range");
    const double center_mhz = (line_center_ghz - scan.reference_ghz) * 1e3;
    if (std::abs(center_mhz) + 3.0 * fwhm_mhz > scan.half_range_mhz) {
        throw DomainError("synth_ple: scan range must cover the line center +/- 3 FWHM");
    }
    Spectrum s;
    s.unit = SpectrumUnit::Megahertz;
    s.reference_ghz = scan.reference_ghz;
    std::optional<Engine> rng;
    if (seed) rng = seed->engine();
    const double hw2 = 0.25 * fwhm_mhz * fwhm_mhz;
    const double step = 2.0 * scan.half_range_mhz / static_cast<double>(scan.points - 1);
    for (std::size_t i = 0; i < scan.points; ++i) {
        const double x = -scan.half_range_mhz + static_cast<double>(i) * step;
        const double d = x - center_mhz;
        const double mean = scan.peak_counts * hw2 / (d * d + hw2) + scan.background_counts;
        s.x.push_back(x);
        s.counts.push_back(rng ? static_cast<double>(poisson_draw(*rng, mean)) : mean);
    }
    return s;
}

double voigt_profile(double x, double lorentz_fwhm, double gauss_sigma) {
    if (!(lorentz_fwhm >= 0.0 && gauss_sigma >= 0.0) || (lorentz_fwhm == 0.0 && gauss_sigma == 0.0)) {
        throw DomainError("voigt_profile: widths must be >= 0 and not both zero");
    }
    if (gauss_sigma == 0.0) return lorentz_pdf(x, lorentz_fwhm);
    if (lorentz_fwhm == 0.0) return gauss_pdf(x, gauss_sigma);
    // Substituting s = hw tan(theta) turns the Lorentzian into the uniform
    // measure dtheta / pi; only theta where the Gaussian is non-negligible matters.
    const double hw = 0.5 * lorentz_fwhm;
    const double reach = 12.0 * gauss_sigma;
    using Quadrature = boost::math::quadrature::gauss_kronrod<double, 31>;
    if (std::abs(x) > reach + 10.0 * hw) {
        // Far tail: the Lorentzian is smooth across the Gaussian support, and the
        // tan substitution would lose precision near theta = pi/2.
        auto integrand = [&](double s) { return gauss_pdf(s, gauss_sigma) * lorentz_pdf(x - s, lorentz_fwhm); };
        return Quadrature::integrate(integrand, -reach, reach, 15, 1e-10);
    }
    const double lo = std::atan((x - reach) / hw);
    const double hi = std::atan((x + reach) / hw);
    auto integrand = [&](double theta) { return gauss_pdf(x - hw * std::tan(theta), gauss_sigma); };
    const double integral = Quadrature::integrate(integrand, lo, hi, 15, 1e-10);
    return integral / kPi;
}

Spectrum synth_spectrum(std::span<const Emitter> emitters, double resolution_fwhm_ghz, SpectrumMode mode,
                        const SpectrumOptions& options, const std::optional<RandomSeed>& seed) {
    if (!(resolution_fwhm_ghz >= 0.0)) throw DomainError("synth_spectrum: instrument resolution must be >= 0");
    if (options.points == 0 || !(options.step_ghz > 0.0)) throw DomainError("synth_spectrum: empty frequency axis");
    Spectrum s;
    s.unit = SpectrumUnit::Gigahertz;
    s.x.resize(options.points);
    s.counts.assign(options.points, 0.0);
    for (std::size_t i = 0; i < options.points; ++i) s.x[i] = options.start_ghz + static_cast<double>(i) * options.step_ghz;

    const double instrument_sigma = resolution_fwhm_ghz / kFwhmPerSigma;
    for (const auto& e : emitters) {
        const double area = options.counts_per_emitter * options.step_ghz;
        if (mode == SpectrumMode::RoomTemperature) {
            const double lambda = frequency_to_wavelength(e.zpl_center_ghz);
            const double phonon = wavelength_linewidth_to_frequency(lambda, options.room_temperature_fwhm_nm);
            const double sigma = std::hypot(phonon, resolution_fwhm_ghz) / kFwhmPerSigma;
            for (std::size_t i = 0; i < options.points; ++i) s.counts[i] += area * gauss_pdf(s.x[i] - e.zpl_center_ghz, sigma);
            continue;
        }
        const double gamma_ghz = e.homogeneous_fwhm_mhz * 1e-3;
        for (std::size_t k = 0; k < 4; ++k) {
            const double w = e.fine_structure.weights[k];
            if (w == 0.0) continue;
            const double center = e.zpl_center_ghz + e.fine_structure.offsets_ghz[k];
            for (std::size_t i = 0; i < options.points; ++i) {
                s.counts[i] += area * w * voigt_profile(s.x[i] - center, gamma_ghz, instrument_sigma);
            }
        }
    }
    if (seed) {
        Engine rng = seed->engine();
        for (double& c : s.counts) c = static_cast<double>(poisson_draw(rng, c));
    }
    return s;
}

}  // namespace fibsim
