#include "fibsim/analysis.hpp"

#include "fibsim/least_squares.hpp"
#include "fibsim/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace fibsim {

namespace {

constexpr double kFourLn2 = 2.772588722239781;

struct PixelSet {
    std::vector<double> x, y, n;
    std::size_t size() const { return n.size(); }
};

struct SpotFit {
    Eigen::VectorXd params;  // A, x0, y0, s (, sy), B
    Eigen::MatrixXd covariance;
    double reduced_chi2 = 0.0;
    double residual_norm = 0.0;
    bool converged = false;
    bool covariance_ok = false;
};

double spot_model(const Eigen::VectorXd& p, bool elliptical, double x, double y) {
    const double dx = x - p[1];
    const double dy = y - p[2];
    const double sx = p[3];
    const double sy = elliptical ? p[4] : p[3];
    const double bg = elliptical ? p[5] : p[4];
    return p[0] * std::exp(-0.5 * (dx * dx / (sx * sx) + dy * dy / (sy * sy))) + bg;
}

enum class Weighting { Poisson, Uniform };

// Poisson: two passes, Neyman weights from the data, then weights from the first-pass model.
// Uniform: one unweighted pass, for profiles the Gaussian only roughly describes; model-based
// weights would then make the optimum hypersensitive to the noise.
SpotFit fit_spot(const PixelSet& px, const Eigen::VectorXd& init, bool elliptical, double length_scale,
                 Weighting weighting = Weighting::Poisson) {
    const auto m = static_cast<Eigen::Index>(px.size());
    std::vector<double> var(px.size());
    const double mean_count = std::max(std::accumulate(px.n.begin(), px.n.end(), 0.0) / static_cast<double>(px.size()), 1.0);
    for (std::size_t k = 0; k < px.size(); ++k)
        var[k] = weighting == Weighting::Poisson ? std::max(px.n[k], 1.0) : mean_count;

    const ResidualFunction f = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
        for (std::size_t k = 0; k < px.size(); ++k)
            r[static_cast<Eigen::Index>(k)] = (px.n[k] - spot_model(p, elliptical, px.x[k], px.y[k])) / std::sqrt(var[k]);
    };
    LeastSquaresOptions opts;
    opts.parameter_scales = Eigen::VectorXd::Constant(init.size(), 0.01 * length_scale);
    opts.parameter_scales[0] = 1e-3 * std::max(std::abs(init[0]), 1.0);
    opts.parameter_scales[init.size() - 1] = 1e-3 * std::max(std::abs(init[0]), 1.0);

    LeastSquaresResult r2 = solve_least_squares(f, m, init, opts);
    if (weighting == Weighting::Poisson) {
        for (std::size_t k = 0; k < px.size(); ++k)
            var[k] = std::max(spot_model(r2.params, elliptical, px.x[k], px.y[k]), 0.1);
        r2 = solve_least_squares(f, m, r2.params, opts);
    }

    SpotFit out;
    out.params = r2.params;
    out.params[3] = std::abs(out.params[3]);
    if (elliptical) out.params[4] = std::abs(out.params[4]);
    out.reduced_chi2 = r2.reduced_chi2();
    // Sandwich estimate with the observed counts as Poisson variances; stays valid when
    // the Gaussian is only an approximation of the true profile (Raman slices).
    out.covariance = r2.covariance;
    if (r2.covariance_ok) {
        const Eigen::MatrixXd j = finite_difference_jacobian(f, m, r2.params, opts.difference_step, opts.parameter_scales);
        Eigen::VectorXd w(m);
        for (std::size_t k = 0; k < px.size(); ++k) w[static_cast<Eigen::Index>(k)] = px.n[k] / var[k];
        const Eigen::MatrixXd meat = j.transpose() * w.asDiagonal() * j;
        out.covariance = r2.covariance * meat * r2.covariance;
    }
    out.residual_norm = std::sqrt(r2.chi2);
    out.converged = r2.converged && out.params.allFinite();
    out.covariance_ok = r2.covariance_ok;
    return out;
}

std::vector<double> gaussian_kernel(double sigma_px, double radius_sigmas) {
    const int radius = std::max(1, static_cast<int>(std::ceil(radius_sigmas * sigma_px)));
    std::vector<double> k(2 * static_cast<std::size_t>(radius) + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * i * i / (sigma_px * sigma_px));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable convolution; kernel truncated at the edges and renormalized so flat fields stay flat.
std::vector<double> smooth(const ConfocalImage& image, const std::vector<double>& kernel) {
    const std::size_t w = image.geometry.width;
    const std::size_t h = image.geometry.height;
    const long radius = static_cast<long>(kernel.size() / 2);
    std::vector<double> tmp(w * h), out(w * h);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0, norm = 0.0;
            for (long d = -radius; d <= radius; ++d) {
                const long cc = static_cast<long>(c) + d;
                if (cc < 0 || cc >= static_cast<long>(w)) continue;
                const double k = kernel[static_cast<std::size_t>(d + radius)];
                acc += k * image.counts[r * w + static_cast<std::size_t>(cc)];
                norm += k;
            }
            tmp[r * w + c] = acc / norm;
        }
    }
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0, norm = 0.0;
            for (long d = -radius; d <= radius; ++d) {
                const long rr = static_cast<long>(r) + d;
                if (rr < 0 || rr >= static_cast<long>(h)) continue;
                const double k = kernel[static_cast<std::size_t>(d + radius)];
                acc += k * tmp[static_cast<std::size_t>(rr) * w + c];
                norm += k;
            }
            out[r * w + c] = acc / norm;
        }
    }
    return out;
}

// Mean of the pixels not far above the median.
double robust_background(const ConfocalImage& image) {
    if (image.counts.empty()) return 0.0;
    std::vector<double> v(image.counts.begin(), image.counts.end());
    const double med = stats::median(v);
    const double cut = med + 3.0 * std::sqrt(std::max(med, 1.0));
    double sum = 0.0;
    std::size_t n = 0;
    for (double c : v) {
        if (c <= cut) {
            sum += c;
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : med;
}

double kernel_norm2(const std::vector<double>& k) {
    double s = 0.0;
    for (double v : k) s += v * v;
    return s * s;
}

struct Peak {
    std::size_t row, col;
    double value;
};

std::vector<Peak> local_maxima(const std::vector<double>& s, std::size_t w, std::size_t h, double threshold) {
    std::vector<Peak> peaks;
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const double v = s[r * w + c];
            if (v <= threshold) continue;
            bool is_max = true;
            for (long dr = -1; dr <= 1 && is_max; ++dr) {
                for (long dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const long rr = static_cast<long>(r) + dr;
                    const long cc = static_cast<long>(c) + dc;
                    if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
                    const double u = s[static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc)];
                    const bool earlier = dr < 0 || (dr == 0 && dc < 0);
                    if (u > v || (earlier && u == v)) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) peaks.push_back({r, c, v});
        }
    }
    std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.value > b.value; });
    return peaks;
}

}  // namespace

// ---------------------------------------------------------------------------

Localization localize_sites(const ConfocalImage& image, const LocalizeOptions& options) {
    if (!(options.psf_sigma_nm > 0.0)) throw DomainError("localize_sites: PSF sigma must be positive");
    if (options.min_separation_nm < 0.0) throw DomainError("localize_sites: min_separation must be >= 0");
    image.geometry.validate();
    if (image.counts.size() != image.geometry.pixels())
        throw DomainError("localize_sites: pixel count does not match geometry");
    const double pitch = image.geometry.pixel_pitch_nm;
    if (!(pitch < options.psf_sigma_nm))
        throw DomainError("localize_sites: pixel pitch must be smaller than the PSF sigma");

    Localization out;
    const std::size_t w = image.geometry.width;
    const std::size_t h = image.geometry.height;
    if (image.total() == 0) return out;

    const double sigma_px = options.psf_sigma_nm / pitch;
    const auto kernel = gaussian_kernel(sigma_px, 3.0);
    const auto smoothed = smooth(image, kernel);
    const double bg = robust_background(image);
    const double threshold =
        bg + options.threshold_sigmas * std::sqrt(std::max(bg, 1.0)) * std::sqrt(kernel_norm2(kernel));
    const auto peaks = local_maxima(smoothed, w, h, threshold);
    out.diagnostics.candidates = peaks.size();

    std::vector<Peak> accepted;
    for (const Peak& p : peaks) {
        const Point2D pos = image.geometry.pixel_center(p.row, p.col);
        const bool close = std::any_of(accepted.begin(), accepted.end(), [&](const Peak& q) {
            return distance(pos, image.geometry.pixel_center(q.row, q.col)) < options.min_separation_nm;
        });
        if (close) {
            ++out.diagnostics.merged;
        } else {
            accepted.push_back(p);
        }
    }

    const long half = std::max(2L, static_cast<long>(std::ceil(options.window_sigmas * sigma_px)));
    for (const Peak& p : accepted) {
        const Point2D origin = image.geometry.pixel_center(p.row, p.col);
        PixelSet px;
        double max_count = 0.0;
        for (long dr = -half; dr <= half; ++dr) {
            for (long dc = -half; dc <= half; ++dc) {
                const long rr = static_cast<long>(p.row) + dr;
                const long cc = static_cast<long>(p.col) + dc;
                if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
                const double n = image.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
                px.x.push_back(static_cast<double>(dc) * pitch);
                px.y.push_back(static_cast<double>(dr) * pitch);
                px.n.push_back(n);
                max_count = std::max(max_count, n);
            }
        }
        if (px.size() < 8) {
            ++out.diagnostics.dropped;
            continue;
        }
        Eigen::VectorXd init(5);
        init << std::max({2.0 * (p.value - bg), max_count - bg, 1.0}), 0.0, 0.0, options.psf_sigma_nm, bg;
        SpotFit fit;
        try {
            fit = fit_spot(px, init, false, pitch);
        } catch (const FitError&) {
            ++out.diagnostics.dropped;
            continue;
        }
        const auto& q = fit.params;
        const double limit = (static_cast<double>(half) + 0.5) * pitch;
        const bool ok = fit.converged && fit.covariance_ok && q[0] > 0.0 && q[3] > 0.3 * options.psf_sigma_nm &&
                        q[3] < 3.0 * options.psf_sigma_nm && std::abs(q[1]) < limit && std::abs(q[2]) < limit &&
                        fit.covariance(1, 1) > 0.0 && fit.covariance(2, 2) > 0.0;
        if (!ok) {
            ++out.diagnostics.dropped;
            continue;
        }
        LocalizationResult res;
        res.position = {origin.x + q[1], origin.y + q[2]};
        res.sigma_x_nm = std::sqrt(fit.covariance(1, 1));
        res.sigma_y_nm = std::sqrt(fit.covariance(2, 2));
        res.peak_counts = q[0];
        res.background_counts = q[4];
        res.width_nm = q[3];
        res.integrated_counts = 2.0 * kPi * q[3] * q[3] * q[0] / (pitch * pitch);
        res.residual_norm = fit.residual_norm;
        out.sites.push_back(res);
    }

    // Two candidates may converge onto the same emitter.
    std::vector<LocalizationResult> unique;
    for (const auto& s : out.sites) {
        const bool close = std::any_of(unique.begin(), unique.end(), [&](const LocalizationResult& u) {
            return distance(u.position, s.position) < options.min_separation_nm;
        });
        if (close) {
            ++out.diagnostics.merged;
        } else {
            unique.push_back(s);
        }
    }
    out.sites = std::move(unique);
    return out;
}

std::vector<LocalizationResult> filter_single_sites(std::span<const LocalizationResult> results,
                                                    std::optional<double> reference_intensity) {
    if (results.empty()) return {};
    double ref = 0.0;
    if (reference_intensity) {
        ref = *reference_intensity;
    } else {
        std::vector<double> peaks;
        peaks.reserve(results.size());
        for (const auto& r : results) peaks.push_back(r.peak_counts);
        ref = stats::median(std::move(peaks));
    }
    if (!(ref > 0.0)) throw DomainError("filter_single_sites: reference intensity must be positive");
    std::vector<LocalizationResult> out;
    for (const auto& r : results) {
        if (r.peak_counts >= 0.5 * ref && r.peak_counts <= 1.5 * ref) out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------

Point2D GridFit::lattice_point(const LatticeIndex& idx) const {
    return transform.apply({static_cast<double>(idx.i) * pitch_nm, static_cast<double>(idx.j) * pitch_nm});
}

std::vector<double> GridFit::distances() const {
    std::vector<double> d;
    d.reserve(displacements.size());
    for (const auto& v : displacements) d.push_back(v.norm());
    return d;
}

namespace {

long nearest_index(double u) { return static_cast<long>(std::ceil(u - 0.5)); }

double circular_offset(std::span<const Point2D> sites, double pitch, bool x_axis) {
    double s = 0.0, c = 0.0;
    for (const auto& p : sites) {
        const double phase = 2.0 * kPi * (x_axis ? p.x : p.y) / pitch;
        s += std::sin(phase);
        c += std::cos(phase);
    }
    return std::atan2(s, c) * pitch / (2.0 * kPi);
}

void fill_displacements(GridFit& fit, std::span<const Point2D> sites) {
    fit.displacements.resize(sites.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < sites.size(); ++k) {
        fit.displacements[k] = sites[k] - fit.lattice_point(fit.indices[k]);
        mx += fit.displacements[k].x;
        my += fit.displacements[k].y;
    }
    const double n = static_cast<double>(sites.size());
    fit.mean_displacement = {mx / n, my / n};
    double vx = 0.0, vy = 0.0;
    for (const auto& d : fit.displacements) {
        vx += (d.x - fit.mean_displacement.x) * (d.x - fit.mean_displacement.x);
        vy += (d.y - fit.mean_displacement.y) * (d.y - fit.mean_displacement.y);
    }
    fit.std_displacement = n > 1 ? Point2D{std::sqrt(vx / (n - 1)), std::sqrt(vy / (n - 1))} : Point2D{};
}

}  // namespace

GridFit fit_affine_grid(std::span<const Point2D> sites, double nominal_pitch_nm, int max_iterations) {
    if (!(nominal_pitch_nm > 0.0)) throw DomainError("fit_affine_grid: pitch must be positive");
    if (sites.size() < 6) throw DomainError("fit_affine_grid: need at least 6 sites");
    for (const auto& p : sites)
        if (!p.finite()) throw DomainError("fit_affine_grid: non-finite site coordinate");

    GridFit fit;
    fit.pitch_nm = nominal_pitch_nm;
    fit.transform = AffineTransform2D::translation(
        {circular_offset(sites, nominal_pitch_nm, true), circular_offset(sites, nominal_pitch_nm, false)});
    fit.indices.assign(sites.size(), {});

    const auto n = static_cast<Eigen::Index>(sites.size());
    bool have_assignment = false;
    for (fit.iterations = 1; fit.iterations <= max_iterations; ++fit.iterations) {
        const AffineTransform2D inv = fit.transform.inverse();
        std::vector<LatticeIndex> idx(sites.size());
        for (std::size_t k = 0; k < sites.size(); ++k) {
            const Point2D u = inv.apply(sites[k]);
            idx[k] = {nearest_index(u.x / nominal_pitch_nm), nearest_index(u.y / nominal_pitch_nm)};
        }
        const bool stable = have_assignment && idx == fit.indices;
        fit.indices = std::move(idx);
        have_assignment = true;

        Eigen::MatrixXd design(n, 3);
        Eigen::MatrixXd rhs(n, 2);
        for (Eigen::Index k = 0; k < n; ++k) {
            const auto& id = fit.indices[static_cast<std::size_t>(k)];
            design(k, 0) = static_cast<double>(id.i) * nominal_pitch_nm;
            design(k, 1) = static_cast<double>(id.j) * nominal_pitch_nm;
            design(k, 2) = 1.0;
            rhs(k, 0) = sites[static_cast<std::size_t>(k)].x;
            rhs(k, 1) = sites[static_cast<std::size_t>(k)].y;
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
        if (qr.rank() < 3) {
            fill_displacements(fit, sites);
            throw GridFitError("fit_affine_grid: sites occupy a degenerate (collinear) set of lattice points", fit);
        }
        const Eigen::MatrixXd sol = qr.solve(rhs);
        try {
            fit.transform = AffineTransform2D({sol(0, 0), sol(1, 0), sol(0, 1), sol(1, 1)}, {sol(2, 0), sol(2, 1)});
        } catch (const DomainError&) {
            fill_displacements(fit, sites);
            throw GridFitError("fit_affine_grid: singular affine transform", fit);
        }
        if (stable) break;
    }
    if (fit.iterations > max_iterations) {
        fit.iterations = max_iterations;
        fill_displacements(fit, sites);
        throw GridFitError("fit_affine_grid: assignment did not stabilize within the iteration cap", fit);
    }

    long min_i = std::numeric_limits<long>::max(), min_j = std::numeric_limits<long>::max();
    for (const auto& id : fit.indices) {
        min_i = std::min(min_i, id.i);
        min_j = std::min(min_j, id.j);
    }
    for (auto& id : fit.indices) {
        id.i -= min_i;
        id.j -= min_j;
    }
    const Point2D shift =
        fit.transform.apply_linear({static_cast<double>(min_i) * nominal_pitch_nm, static_cast<double>(min_j) * nominal_pitch_nm});
    fit.transform = AffineTransform2D(fit.transform.linear(), fit.transform.translation() + shift);
    fill_displacements(fit, sites);
    return fit;
}

// ---------------------------------------------------------------------------

double rayleigh_cdf(double r, double sigma) {
    if (r <= 0.0) return 0.0;
    return -std::expm1(-0.5 * r * r / (sigma * sigma));
}

namespace {

RayleighFit rayleigh_from_sigma(double sigma, std::size_t n) {
    RayleighFit out;
    out.sigma_nm = sigma;
    out.samples = n;
    out.sigma_error_nm = sigma / (2.0 * std::sqrt(static_cast<double>(n)));
    out.mean_r_nm = sigma * std::sqrt(kPi / 2.0);
    out.variance_r_nm2 = sigma * sigma * (4.0 - kPi) / 2.0;
    out.std_r_nm = std::sqrt(out.variance_r_nm2);
    return out;
}

void check_distances(std::span<const double> d) {
    if (d.size() < 10) throw DomainError("fit_rayleigh: need at least 10 samples");
    for (double r : d)
        if (!(r >= 0.0) || !std::isfinite(r)) throw DomainError("fit_rayleigh: distances must be finite and >= 0");
}

}  // namespace

RayleighFit fit_rayleigh(std::span<const double> distances) {
    check_distances(distances);
    double s2 = 0.0;
    for (double r : distances) s2 += r * r;
    return rayleigh_from_sigma(std::sqrt(s2 / (2.0 * static_cast<double>(distances.size()))), distances.size());
}

RayleighFit fit_rayleigh_binned(std::span<const double> distances, std::size_t bins) {
    check_distances(distances);
    if (bins < 2) throw DomainError("fit_rayleigh_binned: need at least 2 bins");
    const RayleighFit mle = fit_rayleigh(distances);
    const double top = *std::max_element(distances.begin(), distances.end());
    if (!(top > 0.0)) return mle;
    const double width = top / static_cast<double>(bins);
    std::vector<double> hist(bins, 0.0);
    for (double r : distances) hist[std::min(bins - 1, static_cast<std::size_t>(r / width))] += 1.0;
    const double n = static_cast<double>(distances.size());
    const ResidualFunction f = [&](const Eigen::VectorXd& p, Eigen::VectorXd& res) {
        const double s = std::abs(p[0]);
        for (std::size_t k = 0; k < bins; ++k) {
            const double lo = static_cast<double>(k) * width;
            const double expected = n * (rayleigh_cdf(lo + width, s) - rayleigh_cdf(lo, s));
            res[static_cast<Eigen::Index>(k)] = (hist[k] - expected) / std::sqrt(std::max(expected, 1.0));
        }
    };
    Eigen::VectorXd init(1);
    init << mle.sigma_nm;
    const auto ls = solve_least_squares(f, static_cast<Eigen::Index>(bins), init);
    if (!ls.converged) throw FitError("fit_rayleigh_binned: " + ls.message);
    RayleighFit out = rayleigh_from_sigma(std::abs(ls.params[0]), distances.size());
    if (ls.covariance_ok) out.sigma_error_nm = std::sqrt(ls.covariance(0, 0));
    out.binned = true;
    return out;
}

// ---------------------------------------------------------------------------

RegionRate integrated_region_rate(const ConfocalImage& image, double psf_sigma_nm, double background_kcps) {
    if (!(psf_sigma_nm > 0.0)) throw DomainError("integrated_region_rate: PSF sigma must be positive");
    const auto& g = image.geometry;
    const double total = static_cast<double>(image.total());
    const double footprint = 2.0 * kPi * psf_sigma_nm * psf_sigma_nm / (g.pixel_pitch_nm * g.pixel_pitch_nm);
    const double norm = g.dwell_ms * footprint;
    RegionRate out;
    out.total_counts = total;
    out.rate_kcps = (total - background_kcps * g.dwell_ms * static_cast<double>(g.pixels())) / norm;
    out.error_kcps = std::sqrt(total) / norm;
    return out;
}

YieldEstimate estimate_yield(double region_rate_kcps, double single_rate_kcps, double n_ions,
                             double region_rate_error_kcps) {
    if (!(single_rate_kcps > 0.0)) throw DomainError("estimate_yield: single-emitter rate must be positive");
    if (!(n_ions > 0.0)) throw DomainError("estimate_yield: ion number must be positive");
    const double emitters = region_rate_kcps / single_rate_kcps;
    YieldEstimate out;
    out.eta = emitters / n_ions;
    const double photon = region_rate_error_kcps / single_rate_kcps;
    out.error = std::sqrt(photon * photon + std::max(emitters, 0.0)) / n_ions;
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct G2Start {
    double a, b, t1, t2, chi2;
};

G2Start g2_grid_start(const G2Histogram& h) {
    double tau_max = 0.0, min_step = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < h.tau_ns.size(); ++k) {
        tau_max = std::max(tau_max, std::abs(h.tau_ns[k]));
        if (k > 0) min_step = std::min(min_step, std::abs(h.tau_ns[k] - h.tau_ns[k - 1]));
    }
    const double lo = std::max(0.5 * min_step, 1e-6 * tau_max);
    const double hi1 = tau_max / 5.0;
    const double hi2 = tau_max / 2.0;
    constexpr int kSteps = 24;
    auto geo = [](double a, double b, int i) { return a * std::pow(b / a, static_cast<double>(i) / (kSteps - 1)); };

    G2Start best{0.0, 0.0, lo, hi2, std::numeric_limits<double>::infinity()};
    for (int i = 0; i < kSteps; ++i) {
        const double t1 = geo(lo, std::max(hi1, lo * 1.01), i);
        for (int j = 0; j < kSteps; ++j) {
            const double t2 = geo(lo, std::max(hi2, lo * 1.01), j);
            if (t2 <= t1) continue;
            Eigen::Matrix2d m = Eigen::Matrix2d::Zero();
            Eigen::Vector2d v = Eigen::Vector2d::Zero();
            for (std::size_t k = 0; k < h.tau_ns.size(); ++k) {
                const double w = 1.0 / (h.sigma[k] * h.sigma[k]);
                const double f1 = -std::exp(-std::abs(h.tau_ns[k]) / t1);
                const double f2 = std::exp(-std::abs(h.tau_ns[k]) / t2);
                const double y = h.value[k] - 1.0;
                m(0, 0) += w * f1 * f1;
                m(0, 1) += w * f1 * f2;
                m(1, 1) += w * f2 * f2;
                v[0] += w * f1 * y;
                v[1] += w * f2 * y;
            }
            m(1, 0) = m(0, 1);
            if (std::abs(m.determinant()) < 1e-12 * m(0, 0) * m(1, 1)) continue;
            const Eigen::Vector2d ab = m.ldlt().solve(v);
            G2Model model{ab[0], ab[1], t1, t2};
            double chi2 = 0.0;
            for (std::size_t k = 0; k < h.tau_ns.size(); ++k) {
                const double r = (h.value[k] - model(h.tau_ns[k])) / h.sigma[k];
                chi2 += r * r;
            }
            if (chi2 < best.chi2) best = {ab[0], ab[1], t1, t2, chi2};
        }
    }
    return best;
}

}  // namespace

G2Fit fit_g2(const G2Histogram& hist, const G2FitOptions& options) {
    hist.validate();
    if (hist.tau_ns.size() < 20) throw DomainError("fit_g2: need at least 20 bins");
    if (!(options.confidence > 0.0 && options.confidence < 1.0)) throw DomainError("fit_g2: confidence must be in (0, 1)");

    const auto m = static_cast<Eigen::Index>(hist.tau_ns.size());
    const G2Start start = g2_grid_start(hist);
    const ResidualFunction f = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
        const G2Model model{p[0], p[1], p[2], p[3]};
        for (Eigen::Index k = 0; k < m; ++k) {
            const auto i = static_cast<std::size_t>(k);
            r[k] = (hist.value[i] - model(hist.tau_ns[i])) / hist.sigma[i];
        }
    };
    double chi2_null = 0.0;
    for (std::size_t k = 0; k < hist.tau_ns.size(); ++k) {
        const double r = (hist.value[k] - 1.0) / hist.sigma[k];
        chi2_null += r * r;
    }

    G2Fit out;
    LeastSquaresResult ls;
    bool fitted = false;
    if (std::isfinite(start.chi2) && start.chi2 < chi2_null) {
        Eigen::VectorXd init(4);
        init << start.a, start.b, start.t1, start.t2;
        LeastSquaresOptions opts;
        opts.parameter_scales = Eigen::Vector4d(1e-3, 1e-3, 1e-3 * start.t1, 1e-3 * start.t1);
        opts.max_iterations = 1000;
        ls = solve_least_squares(f, m, init, opts);
        fitted = ls.chi2 < chi2_null * (1.0 - 1e-12);
    }
    if (!fitted) {
        out.params = {0.0, 0.0, start.t1, start.t2};
        out.g2_zero = 1.0;
        out.reduced_chi2 = chi2_null / static_cast<double>(m - 4);
        out.ci_reliable = false;
        for (auto& c : out.ci) c = {0.0, 0.0};
        out.ci[2] = {out.params.t1_ns, out.params.t1_ns};
        out.ci[3] = {out.params.t2_ns, out.params.t2_ns};
        out.g2_zero_ci = {1.0, 1.0};
        out.is_single = false;
        return out;
    }
    out.params = {ls.params[0], ls.params[1], std::abs(ls.params[2]), std::abs(ls.params[3])};
    out.reduced_chi2 = ls.reduced_chi2();
    Eigen::Matrix4d cov = ls.covariance;
    if (!options.absolute_sigma) cov *= out.reduced_chi2;
    out.covariance = cov;
    out.ci_reliable = ls.converged && ls.covariance_ok && cov.diagonal().minCoeff() > 0.0 && cov.allFinite();

    const double z = stats::normal_two_sided_z(options.confidence);
    const std::array<double, 4> est{out.params.a, out.params.b, out.params.t1_ns, out.params.t2_ns};
    for (int i = 0; i < 4; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const double half = z * std::sqrt(std::max(cov(i, i), 0.0));
        if (i < 2) {
            out.ci[k] = {est[k] - half, est[k] + half};
        } else {
            // Time constants are positive with skewed errors: symmetric on a log scale.
            const double f = std::exp(half / est[k]);
            out.ci[k] = {est[k] / f, est[k] * f};
        }
    }
    out.g2_zero = out.params.at_zero();
    const double var0 = cov(0, 0) + cov(1, 1) - 2.0 * cov(0, 1);
    const double half0 = z * std::sqrt(std::max(var0, 0.0));
    out.g2_zero_ci = {out.g2_zero - half0, out.g2_zero + half0};
    out.is_single = out.g2_zero < 0.5;
    return out;
}

// ---------------------------------------------------------------------------

LineFit fit_line(const Spectrum& spectrum, LineModel model, double instrument_fwhm, const LineFitOptions& options) {
    const std::size_t n = spectrum.x.size();
    if (n != spectrum.counts.size()) throw DomainError("fit_line: x and counts differ in length");
    if (n < 5) throw DomainError("fit_line: need at least 5 points");
    if (instrument_fwhm < 0.0) throw DomainError("fit_line: instrument FWHM must be >= 0");

    double xm = 0.0;
    for (double x : spectrum.x) xm += x;
    xm /= static_cast<double>(n);
    const auto [lo_it, hi_it] = std::minmax_element(spectrum.x.begin(), spectrum.x.end());
    const double span = *hi_it - *lo_it;
    if (!(span > 0.0)) throw DomainError("fit_line: spectrum has zero extent");

    const auto [min_it, max_it] = std::minmax_element(spectrum.counts.begin(), spectrum.counts.end());
    const double b0 = *min_it;
    const double a0 = *max_it - b0;
    if (!(a0 > 0.0)) throw FitError("fit_line: spectrum is flat");
    const double c0 = spectrum.x[static_cast<std::size_t>(max_it - spectrum.counts.begin())] - xm;
    const double step = span / static_cast<double>(n - 1);
    std::size_t above = 0;
    for (double y : spectrum.counts)
        if (y > b0 + 0.5 * a0) ++above;
    const double w0 = std::max(2.0 * step, static_cast<double>(above) * step);

    std::vector<double> sigma(n, 1.0);
    if (options.poisson_weights)
        for (std::size_t k = 0; k < n; ++k) sigma[k] = std::sqrt(std::max(spectrum.counts[k], 1.0));

    auto shape = [model](double u, double w) {
        const double q = u * u / (w * w);
        return model == LineModel::Gaussian ? std::exp(-kFourLn2 * q) : 1.0 / (1.0 + 4.0 * q);
    };
    const ResidualFunction f = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
        for (std::size_t k = 0; k < n; ++k) {
            const double y = p[0] * shape(spectrum.x[k] - xm - p[1], p[2]) + p[3];
            r[static_cast<Eigen::Index>(k)] = (spectrum.counts[k] - y) / sigma[k];
        }
    };
    Eigen::VectorXd init(4);
    init << a0, c0, w0, b0;
    LeastSquaresOptions opts;
    opts.parameter_scales = Eigen::Vector4d(1e-3 * a0, step, step, 1e-3 * a0);
    const auto ls = solve_least_squares(f, static_cast<Eigen::Index>(n), init, opts);
    if (!ls.converged || !ls.params.allFinite()) {
        std::ostringstream msg;
        msg << "fit_line: " << (ls.message.empty() ? "non-finite parameters" : ls.message) << " (chi2 " << ls.chi2
            << ", residual norm " << std::sqrt(ls.chi2) << ", " << ls.iterations << " iterations)";
        throw FitError(msg.str());
    }

    LineFit out;
    out.model = model;
    out.amplitude = ls.params[0];
    out.center = ls.params[1] + xm;
    out.fwhm = std::abs(ls.params[2]);
    out.offset = ls.params[3];
    out.reduced_chi2 = ls.reduced_chi2();
    if (!(out.fwhm > 0.0)) throw FitError("fit_line: fitted width collapsed to zero");
    if (span < 3.0 * out.fwhm) throw DomainError("fit_line: spectrum covers fewer than 3 fitted FWHM");
    const Eigen::MatrixXd cov = options.poisson_weights ? ls.covariance : ls.covariance * out.reduced_chi2;
    out.center_error = std::sqrt(std::max(cov(1, 1), 0.0));
    out.fwhm_error = std::sqrt(std::max(cov(2, 2), 0.0));
    out.instrument_limited = out.fwhm < options.instrument_factor * instrument_fwhm;
    return out;
}

// ---------------------------------------------------------------------------

namespace {

PixelSet image_pixels(const ConfocalImage& image, Point2D origin) {
    PixelSet px;
    const auto& g = image.geometry;
    for (std::size_t r = 0; r < g.height; ++r) {
        for (std::size_t c = 0; c < g.width; ++c) {
            const Point2D p = g.pixel_center(r, c);
            px.x.push_back(p.x - origin.x);
            px.y.push_back(p.y - origin.y);
            px.n.push_back(image.at(r, c));
        }
    }
    return px;
}

GaussianSpot spot_from_fit(const SpotFit& fit, Point2D origin) {
    GaussianSpot out;
    out.center = {origin.x + fit.params[1], origin.y + fit.params[2]};
    out.center_covariance = fit.covariance.block<2, 2>(1, 1);
    out.width_x_nm = fit.params[3];
    out.width_y_nm = fit.params[4];
    out.amplitude = fit.params[0];
    out.background = fit.params[5];
    out.reduced_chi2 = fit.reduced_chi2;
    return out;
}

GaussianSpot fit_elliptical(const ConfocalImage& image, Point2D guess, double width, double amplitude, double bg,
                           Weighting weighting) {
    const Point2D origin = guess;
    const PixelSet px = image_pixels(image, origin);
    Eigen::VectorXd init(6);
    init << amplitude, 0.0, 0.0, width, width, bg;
    const SpotFit fit = fit_spot(px, init, true, image.geometry.pixel_pitch_nm, weighting);
    if (!fit.converged) throw FitError("gaussian spot fit did not converge");
    if (!fit.covariance_ok) throw FitError("gaussian spot fit has a singular covariance");
    if (!(fit.params[0] > 0.0)) throw FitError("gaussian spot fit returned a non-positive amplitude");
    return spot_from_fit(fit, origin);
}

}  // namespace

GaussianSpot fit_gaussian_spot(const ConfocalImage& image, double width_guess_nm) {
    if (!(width_guess_nm > 0.0)) throw DomainError("fit_gaussian_spot: width guess must be positive");
    if (image.counts.empty()) throw DomainError("fit_gaussian_spot: empty image");
    const double bg = robust_background(image);
    double sw = 0.0, sx = 0.0, sy = 0.0, peak = 0.0;
    const auto& g = image.geometry;
    for (std::size_t r = 0; r < g.height; ++r) {
        for (std::size_t c = 0; c < g.width; ++c) {
            const double w = std::max(static_cast<double>(image.at(r, c)) - bg, 0.0);
            const Point2D p = g.pixel_center(r, c);
            sw += w;
            sx += w * p.x;
            sy += w * p.y;
            peak = std::max(peak, static_cast<double>(image.at(r, c)) - bg);
        }
    }
    if (!(sw > 0.0)) throw FitError("fit_gaussian_spot: no signal above background");
    return fit_elliptical(image, {sx / sw, sy / sw}, width_guess_nm, std::max(peak, 1.0), bg, Weighting::Uniform);
}

TargetingResult estimate_targeting(const SpectralCube& cube, double raman_wavelength_nm, double zpl_wavelength_nm,
                                   const TargetingOptions& options) {
    if (!cube.axis.covers(raman_wavelength_nm)) throw DomainError("estimate_targeting: cube does not cover the Raman line");
    if (!cube.axis.covers(zpl_wavelength_nm)) throw DomainError("estimate_targeting: cube does not cover the ZPL");
    const ConfocalImage raman = cube.slice(raman_wavelength_nm, options.raman_half_band_nm);
    const ConfocalImage zpl = cube.slice(zpl_wavelength_nm, options.zpl_half_band_nm);

    TargetingResult out;
    out.raman = fit_gaussian_spot(raman, options.raman_width_guess_nm);

    const double pitch = zpl.geometry.pixel_pitch_nm;
    const auto kernel = gaussian_kernel(options.zpl_psf_sigma_nm / pitch, 3.0);
    const auto smoothed = smooth(zpl, kernel);
    const double bg = robust_background(zpl);
    const double threshold =
        bg + options.detection_sigmas * std::sqrt(std::max(bg, 1.0)) * std::sqrt(kernel_norm2(kernel));
    const auto peaks = local_maxima(smoothed, zpl.geometry.width, zpl.geometry.height, threshold);
    if (peaks.empty()) throw FitError("estimate_targeting: no ZPL site found");
    const Point2D guess = zpl.geometry.pixel_center(peaks.front().row, peaks.front().col);
    out.zpl = fit_elliptical(zpl, guess, options.zpl_psf_sigma_nm, 2.0 * (peaks.front().value - bg), bg,
                             Weighting::Poisson);

    out.offset = out.zpl.center - out.raman.center;
    out.distance_nm = out.offset.norm();
    out.offset_covariance = out.raman.center_covariance + out.zpl.center_covariance;
    if (out.distance_nm > 0.0) {
        const Eigen::Vector2d u(out.offset.x / out.distance_nm, out.offset.y / out.distance_nm);
        out.distance_error_nm = std::sqrt(std::max(u.dot(out.offset_covariance * u), 0.0));
    } else {
        out.distance_error_nm = std::sqrt(0.5 * out.offset_covariance.trace());
    }
    return out;
}

}  // namespace fibsim
