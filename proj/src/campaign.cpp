#include "fibsim/campaign.hpp"

#include "fibsim/analysis.hpp"
#include "fibsim/error.hpp"
#include "fibsim/parallel.hpp"
#include "fibsim/stats.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <limits>
#include <numeric>

namespace fibsim {

using nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

CampaignReport new_report(const std::string& kind, const CampaignConfig& config, const RunOptions& run) {
    CampaignReport r;
    r.kind = kind;
    r.seed = config.seed;
    r.config = config_to_json(config);
    r.config_digest = config_digest(config);
    r.metadata = {{"created_utc", utc_now()}, {"jobs", run.jobs}};
    return r;
}

void set_wall_model(CampaignReport& r, const CampaignConfig& config, double n_sites, double ions_per_site) {
    r.wall_model = {{"sites", n_sites},
                    {"rate_sites_per_s", config.throughput_sites_per_s},
                    {"implant_seconds", throughput_estimate(n_sites, config.throughput_sites_per_s)},
                    {"pulse_us_per_site", plan_pulse(config.beam.current_pa, static_cast<std::uint64_t>(ions_per_site))}};
}

struct EtaChoice {
    double eta = 0.0;
    bool extrapolated = false;
    bool overridden = false;
};

EtaChoice choose_eta(const CampaignConfig& config, const YieldSurface& surface, double energy_kev, double dose) {
    if (config.yield.eta_override) return {*config.yield.eta_override, false, true};
    const auto l = yield_lookup(surface, energy_kev, dose);
    return {l.eta, l.extrapolated, false};
}

ordered_json eta_json(const EtaChoice& e) {
    return {{"eta", e.eta}, {"extrapolated", e.extrapolated}, {"overridden", e.overridden}};
}

ordered_json json_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

double sample_std(const std::vector<double>& v) { return v.size() > 1 ? stats::stddev(v) : 0.0; }

void add_emitter_rows(Table& t, double group, std::span<const Emitter> emitters) {
    for (const auto& e : emitters)
        t.add({group, static_cast<double>(e.ion_index), e.position.x, e.position.y, e.position.z, e.zpl_center_ghz,
               e.homogeneous_fwhm_mhz, e.brightness_kcps});
}

Table emitter_table(const std::string& group_column) {
    return Table{{group_column, "ion", "x_nm", "y_nm", "z_nm", "zpl_center_ghz", "homogeneous_fwhm_mhz", "brightness_kcps"},
                 {}};
}

}  // namespace

double throughput_estimate(double n_sites, double sites_per_s) {
    if (!(sites_per_s > 0.0)) throw DomainError("throughput: rate must be positive");
    if (n_sites < 0.0) throw DomainError("throughput: site count must be >= 0");
    return n_sites / sites_per_s;
}

// ---------------------------------------------------------------------------

CampaignReport run_array_campaign(const CampaignConfig& config, const RunOptions& run) {
    config.validate();
    const auto table = config.straggle_table();
    const auto surface = config.yield_surface();
    const EtaChoice eta = choose_eta(config, surface, config.beam.energy_kev, config.array.dose_per_cm2);
    const RandomSeed root(config.seed);
    const auto& plan = config.array;
    const std::size_t n_sites = plan.columns * plan.rows;

    struct Site {
        Point2D target;
        std::vector<Point3D> ions;
        std::vector<Emitter> emitters;
    };
    std::vector<Site> sites(n_sites);
    parallel_for(n_sites, run.jobs, [&](std::size_t s) {
        Site& site = sites[s];
        const auto i = static_cast<double>(s % plan.columns);
        const auto j = static_cast<double>(s / plan.columns);
        site.target = {i * plan.pitch_nm, j * plan.pitch_nm};
        if (config.pattern_placement_sigma_nm > 0.0) {
            Engine rng = root.child(3).child(s).engine();
            std::normal_distribution<double> n(0.0, config.pattern_placement_sigma_nm);
            site.target.x += n(rng);
            site.target.y += n(rng);
        }
        const ImplantShot shot{site.target, plan.ions_per_site, config.beam.energy_kev};
        site.ions = sample_ion_positions(shot, config.beam, table, root.child(0).child(s));
        site.emitters = sample_emitters(site.ions, eta.eta, config.population, root.child(1).child(s));
    });

    std::vector<Emitter> all;
    for (const auto& s : sites) all.insert(all.end(), s.emitters.begin(), s.emitters.end());
    const double m = config.imaging.margin_nm;
    const auto geometry = ImageGeometry::covering(
        {-m, -m},
        {static_cast<double>(plan.columns - 1) * plan.pitch_nm + m, static_cast<double>(plan.rows - 1) * plan.pitch_nm + m},
        config.imaging.pixel_pitch_nm, config.imaging.dwell_ms);
    const PsfSpec psf = config.imaging.psf();
    const ConfocalImage image = render_confocal(all, psf, config.imaging.background_kcps, geometry, root.child(2));

    CampaignReport report = new_report("array", config, run);
    set_wall_model(report, config, static_cast<double>(n_sites), static_cast<double>(plan.ions_per_site));

    Table site_table{{"site", "i", "j", "target_x_nm", "target_y_nm", "ions", "emitters"}, {}};
    Table ion_table{{"site", "x_nm", "y_nm", "z_nm"}, {}};
    Table emitters = emitter_table("site");
    std::vector<double> truth_dx, truth_dy;
    std::size_t single_sites = 0;
    for (std::size_t s = 0; s < n_sites; ++s) {
        const auto& site = sites[s];
        site_table.add({static_cast<double>(s), static_cast<double>(s % plan.columns), static_cast<double>(s / plan.columns),
                        site.target.x, site.target.y, static_cast<double>(site.ions.size()),
                        static_cast<double>(site.emitters.size())});
        for (const auto& ion : site.ions) ion_table.add({static_cast<double>(s), ion.x, ion.y, ion.z});
        add_emitter_rows(emitters, static_cast<double>(s), site.emitters);
        for (const auto& e : site.emitters) {
            truth_dx.push_back(e.position.x - site.target.x);
            truth_dy.push_back(e.position.y - site.target.y);
        }
        if (site.emitters.size() == 1) ++single_sites;
    }

    ordered_json failures = ordered_json::array();
    LocalizeOptions lo;
    lo.psf_sigma_nm = psf.sigma_nm();
    lo.min_separation_nm = config.imaging.min_separation_nm;
    lo.threshold_sigmas = config.imaging.threshold_sigmas;
    Localization loc;
    try {
        loc = localize_sites(image, lo);
    } catch (const std::exception& e) {
        failures.push_back({{"stage", "localize"}, {"error", e.what()}});
    }
    const auto singles = filter_single_sites(loc.sites);

    Table fits{{"x_nm", "y_nm", "sigma_x_nm", "sigma_y_nm", "peak_counts", "background_counts", "width_nm",
                "integrated_counts", "residual_norm", "single", "lattice_i", "lattice_j", "dx_nm", "dy_nm"},
               {}};
    std::vector<Point2D> single_positions;
    for (const auto& s : singles) single_positions.push_back(s.position);

    ordered_json grid_json = nullptr;
    ordered_json rayleigh_json = nullptr;
    std::optional<GridFit> grid;
    if (single_positions.size() >= 6) {
        try {
            grid = fit_affine_grid(single_positions, plan.pitch_nm);
        } catch (const GridFitError& e) {
            failures.push_back({{"stage", "grid_fit"}, {"error", e.what()}});
        } catch (const std::exception& e) {
            failures.push_back({{"stage", "grid_fit"}, {"error", e.what()}});
        }
    } else if (!loc.sites.empty()) {
        failures.push_back({{"stage", "grid_fit"}, {"error", "fewer than 6 single-emitter sites"}});
    }

    std::size_t k_single = 0;
    for (const auto& s : loc.sites) {
        const bool is_single = k_single < singles.size() && singles[k_single].position == s.position;
        double li = kNaN, lj = kNaN, dx = kNaN, dy = kNaN;
        if (is_single) {
            if (grid) {
                li = static_cast<double>(grid->indices[k_single].i);
                lj = static_cast<double>(grid->indices[k_single].j);
                dx = grid->displacements[k_single].x;
                dy = grid->displacements[k_single].y;
            }
            ++k_single;
        }
        fits.add({s.position.x, s.position.y, s.sigma_x_nm, s.sigma_y_nm, s.peak_counts, s.background_counts, s.width_nm,
                  s.integrated_counts, s.residual_norm, is_single ? 1.0 : 0.0, li, lj, dx, dy});
    }

    std::size_t occupied = 0;
    if (grid) {
        const auto& L = grid->transform.linear();
        const auto t = grid->transform.translation();
        std::vector<LatticeIndex> idx = grid->indices;
        std::sort(idx.begin(), idx.end(), [](const LatticeIndex& a, const LatticeIndex& b) {
            return a.i != b.i ? a.i < b.i : a.j < b.j;
        });
        occupied = static_cast<std::size_t>(std::unique(idx.begin(), idx.end()) - idx.begin());
        grid_json = {{"linear", {L[0], L[1], L[2], L[3]}},
                     {"translation_nm", {t.x, t.y}},
                     {"iterations", grid->iterations},
                     {"mean_dx_nm", grid->mean_displacement.x},
                     {"mean_dy_nm", grid->mean_displacement.y},
                     {"std_dx_nm", grid->std_displacement.x},
                     {"std_dy_nm", grid->std_displacement.y}};
        const auto distances = grid->distances();
        if (distances.size() >= 10) {
            const auto ray = fit_rayleigh(distances);
            rayleigh_json = {{"sigma_nm", ray.sigma_nm},
                             {"sigma_error_nm", ray.sigma_error_nm},
                             {"mean_r_nm", ray.mean_r_nm},
                             {"variance_r_nm2", ray.variance_r_nm2},
                             {"std_r_nm", ray.std_r_nm},
                             {"samples", ray.samples},
                             {"mean_r_over_sigma", ray.mean_r_nm / ray.sigma_nm}};
        } else {
            failures.push_back({{"stage", "rayleigh"}, {"error", "fewer than 10 registered sites"}});
        }
    }

    const StraggleEntry straggle = table.at(config.beam.energy_kev);
    const double sigma_total =
        std::hypot(expected_lateral_sigma(config.beam, straggle.lateral_sigma_nm), config.pattern_placement_sigma_nm,
                   config.beam.pointing_sigma_nm.value_or(0.0));
    report.summary = {
        {"yield", eta_json(eta)},
        {"ground_truth",
         {{"sites", n_sites},
          {"ions", n_sites * plan.ions_per_site},
          {"emitters", all.size()},
          {"single_emitter_sites", single_sites},
          {"sigma_total_nm", sigma_total},
          {"emitter_std_dx_nm", sample_std(truth_dx)},
          {"emitter_std_dy_nm", sample_std(truth_dy)}}},
        {"image",
         {{"width", geometry.width},
          {"height", geometry.height},
          {"total_counts", image.total()},
          {"warnings", image.warnings}}},
        {"localization",
         {{"found", loc.sites.size()},
          {"candidates", loc.diagnostics.candidates},
          {"merged", loc.diagnostics.merged},
          {"dropped", loc.diagnostics.dropped}}},
        {"singles", singles.size()},
        {"grid", grid_json},
        {"rayleigh", rayleigh_json},
        {"sites_without_single", grid ? n_sites - std::min(n_sites, occupied) : n_sites},
        {"failures", failures}};

    report.tables["sites.csv"] = std::move(site_table);
    report.tables["ions.csv"] = std::move(ion_table);
    report.tables["emitters.csv"] = std::move(emitters);
    report.tables["fits.csv"] = std::move(fits);
    return report;
}

// ---------------------------------------------------------------------------

CampaignReport run_sweep_campaign(const CampaignConfig& config, const RunOptions& run) {
    config.validate();
    const auto table = config.straggle_table();
    const auto surface = config.yield_surface();
    const RandomSeed root(config.seed);
    const auto& plan = config.sweep;
    const std::size_t ne = plan.energies_kev.size();
    const std::size_t nd = plan.doses_per_cm2.size();
    const PsfSpec psf = config.imaging.psf();
    const double psf_sigma = psf.sigma_nm();

    struct Cell {
        double energy = 0, dose = 0, side_um = 0;
        EtaChoice eta;
        std::uint64_t ions = 0, emitters = 0;
        YieldEstimate est;
        double rate = 0, rate_err = 0;
        std::string error;
    };
    std::vector<Cell> cells(ne * nd);
    parallel_for(cells.size(), run.jobs, [&](std::size_t c) {
        Cell& cell = cells[c];
        cell.energy = plan.energies_kev[c / nd];
        cell.dose = plan.doses_per_cm2[c % nd];
        try {
            cell.eta = choose_eta(config, surface, cell.energy, cell.dose);
            const double area = plan.region_um * plan.region_um;
            const double expected = dose_to_ions(cell.dose, area);
            if (expected > static_cast<double>(plan.max_ions_per_cell)) {
                cell.ions = plan.max_ions_per_cell;
                cell.side_um = std::sqrt(static_cast<double>(cell.ions) / (cell.dose * 1e-8));
            } else {
                cell.ions = static_cast<std::uint64_t>(std::llround(expected));
                cell.side_um = plan.region_um;
            }
            if (cell.ions == 0) throw DomainError("sweep cell receives no ions");
            BeamSpec beam = config.beam;
            beam.energy_kev = cell.energy;
            const double side = cell.side_um * 1e3;
            const auto ions = sample_area_exposure({0.0, 0.0}, side, side, cell.ions, cell.energy, beam, table,
                                                   root.child(c).child(0));
            const auto emitters = sample_emitters(ions, cell.eta.eta, config.population, root.child(c).child(1));
            cell.emitters = emitters.size();
            const double half = 0.5 * side + config.imaging.margin_nm;
            const auto geometry = ImageGeometry::covering({-half, -half}, {half, half}, config.imaging.pixel_pitch_nm,
                                                          config.imaging.dwell_ms);
            const auto image = render_confocal(emitters, psf, config.imaging.background_kcps, geometry, root.child(c).child(2));
            const auto rate = integrated_region_rate(image, psf_sigma, config.imaging.background_kcps);
            cell.rate = rate.rate_kcps;
            cell.rate_err = rate.error_kcps;
            cell.est = estimate_yield(rate.rate_kcps, config.population.brightness_kcps, static_cast<double>(cell.ions),
                                      rate.error_kcps);
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
    });

    CampaignReport report = new_report("sweep", config, run);
    Table sweep{{"energy_kev", "dose_per_cm2", "eta_true", "eta_est", "eta_err", "eta_realized", "n_ions", "n_emitters",
                 "region_um", "rate_kcps", "rate_err_kcps", "extrapolated"},
                {}};
    ordered_json failures = ordered_json::array();
    double total_ions = 0.0;
    for (const auto& c : cells) {
        if (!c.error.empty()) {
            failures.push_back({{"energy_kev", c.energy}, {"dose_per_cm2", c.dose}, {"error", c.error}});
            sweep.add({c.energy, c.dose, kNaN, kNaN, kNaN, kNaN, 0, 0, kNaN, kNaN, kNaN, kNaN});
            continue;
        }
        total_ions += static_cast<double>(c.ions);
        sweep.add({c.energy, c.dose, c.eta.eta, c.est.eta, c.est.error,
                   static_cast<double>(c.emitters) / static_cast<double>(c.ions), static_cast<double>(c.ions),
                   static_cast<double>(c.emitters), c.side_um, c.rate, c.rate_err, c.eta.extrapolated ? 1.0 : 0.0});
    }

    std::size_t pairs = 0, agree = 0;
    auto compare = [&](const Cell& a, const Cell& b) {
        if (!a.error.empty() || !b.error.empty() || a.eta.eta == b.eta.eta) return;
        ++pairs;
        if ((b.eta.eta > a.eta.eta) == (b.est.eta > a.est.eta)) ++agree;
    };
    for (std::size_t e = 0; e < ne; ++e)
        for (std::size_t d = 0; d < nd; ++d) {
            if (e + 1 < ne) compare(cells[e * nd + d], cells[(e + 1) * nd + d]);
            if (d + 1 < nd) compare(cells[e * nd + d], cells[e * nd + d + 1]);
        }
    double max_rel = 0.0;
    for (const auto& c : cells)
        if (c.error.empty() && c.eta.eta > 0.0) max_rel = std::max(max_rel, std::abs(c.est.eta / c.eta.eta - 1.0));

    report.summary = {{"cells", cells.size()},
                      {"failed_cells", failures.size()},
                      {"monotone_pairs", pairs},
                      {"monotone_agreeing", agree},
                      {"monotone_fraction", pairs ? ordered_json(static_cast<double>(agree) / static_cast<double>(pairs))
                                                  : ordered_json(nullptr)},
                      {"max_relative_error", max_rel},
                      {"failures", failures}};
    set_wall_model(report, config, total_ions, 1.0);
    report.tables["sweep.csv"] = std::move(sweep);
    return report;
}

// ---------------------------------------------------------------------------

CampaignReport run_irradiation_comparison(const CampaignConfig& config, const RunOptions& run) {
    config.validate();
    const auto table = config.straggle_table();
    const auto surface = config.yield_surface();
    const EtaChoice eta = choose_eta(config, surface, config.beam.energy_kev, config.irradiation.dose_per_cm2);
    const double eta_after = apply_irradiation(eta.eta, config.irradiation.fluence_per_cm2, surface);
    const double p_extra = eta.eta < 1.0 ? (eta_after - eta.eta) / (1.0 - eta.eta) : 0.0;
    const RandomSeed root(config.seed);
    const auto& plan = config.irradiation;
    const std::size_t n_spots = plan.spot_ions.size();

    struct Spot {
        Point2D target;
        std::vector<Point3D> ions;
        std::vector<Emitter> before, after;
    };
    std::vector<Spot> spots(n_spots);
    parallel_for(n_spots, run.jobs, [&](std::size_t k) {
        Spot& s = spots[k];
        s.target = {static_cast<double>(k) * plan.spot_spacing_nm, 0.0};
        s.ions = sample_ion_positions({s.target, plan.spot_ions[k], config.beam.energy_kev}, config.beam, table,
                                      root.child(k).child(0));
        s.before = sample_emitters(s.ions, eta.eta, config.population, root.child(k).child(1));
        std::vector<char> active(s.ions.size(), 0);
        for (const auto& e : s.before) active[e.ion_index] = 1;
        std::vector<Point3D> rest;
        std::vector<std::size_t> rest_index;
        for (std::size_t i = 0; i < s.ions.size(); ++i) {
            if (!active[i]) {
                rest.push_back(s.ions[i]);
                rest_index.push_back(i);
            }
        }
        auto extra = sample_emitters(rest, std::clamp(p_extra, 0.0, 1.0), config.population, root.child(k).child(2));
        for (auto& e : extra) e.ion_index = rest_index[e.ion_index];
        s.after = s.before;
        s.after.insert(s.after.end(), extra.begin(), extra.end());
        std::sort(s.after.begin(), s.after.end(), [](const Emitter& a, const Emitter& b) { return a.ion_index < b.ion_index; });
    });

    std::vector<Emitter> all_before, all_after;
    for (const auto& s : spots) {
        all_before.insert(all_before.end(), s.before.begin(), s.before.end());
        all_after.insert(all_after.end(), s.after.begin(), s.after.end());
    }
    const double m = config.imaging.margin_nm;
    const auto geometry = ImageGeometry::covering({-m, -m}, {static_cast<double>(n_spots - 1) * plan.spot_spacing_nm + m, m},
                                                  config.imaging.pixel_pitch_nm, config.imaging.dwell_ms);
    const PsfSpec psf = config.imaging.psf();
    const double sigma = psf.sigma_nm();
    const double bg = config.imaging.background_kcps;
    const auto img_before = render_confocal(all_before, psf, bg, geometry, root.child(100));
    const auto img_after = render_confocal(all_after, psf, bg, geometry, root.child(101));

    const std::size_t profile_row = static_cast<std::size_t>(std::lround(-geometry.origin.y / geometry.pixel_pitch_nm));
    Table profiles{{"x_nm", "before_counts", "after_counts"}, {}};
    for (std::size_t c = 0; c < geometry.width; ++c)
        profiles.add({geometry.pixel_center(profile_row, c).x, static_cast<double>(img_before.at(profile_row, c)),
                      static_cast<double>(img_after.at(profile_row, c))});

    auto window_signal = [&](const ConfocalImage& img, Point2D center) {
        double total = 0.0, npix = 0.0;
        const double radius = 4.0 * sigma;
        for (std::size_t r = 0; r < geometry.height; ++r)
            for (std::size_t c = 0; c < geometry.width; ++c)
                if (distance(geometry.pixel_center(r, c), center) <= radius) {
                    total += img.at(r, c);
                    npix += 1.0;
                }
        return std::pair{total - bg * geometry.dwell_ms * npix, total};
    };
    auto profile_peak = [&](const ConfocalImage& img, Point2D center) {
        double peak = 0.0;
        for (std::size_t c = 0; c < geometry.width; ++c)
            if (std::abs(geometry.pixel_center(profile_row, c).x - center.x) <= 2.0 * geometry.pixel_pitch_nm)
                peak = std::max(peak, static_cast<double>(img.at(profile_row, c)));
        return peak;
    };

    Table spot_table{{"spot", "ions", "x_nm", "emitters_before", "emitters_after", "expected_before_kcps",
                      "expected_after_kcps", "expected_ratio", "realized_ratio", "realized_ratio_err", "image_ratio",
                      "image_ratio_err", "peak_before_counts", "peak_after_counts"},
                     {}};
    Table emitter_rows = emitter_table("spot");
    Table emitter_after_rows = emitter_table("spot");
    ordered_json ratios = ordered_json::array();
    std::vector<double> peaks_before;
    for (std::size_t k = 0; k < n_spots; ++k) {
        const auto& s = spots[k];
        const double n_ions = static_cast<double>(s.ions.size());
        const double exp_before = n_ions * eta.eta * config.population.brightness_kcps;
        const double exp_after = n_ions * eta_after * config.population.brightness_kcps;
        const double expected_ratio = exp_before > 0.0 ? exp_after / exp_before : kNaN;
        const double nb = static_cast<double>(s.before.size());
        const double na = static_cast<double>(s.after.size());
        const double realized = nb > 0.0 ? na / nb : kNaN;
        const double realized_err = nb > 0.0 && na > 0.0 ? realized * std::sqrt(1.0 / nb + 1.0 / na) : kNaN;
        const auto [sb, tb] = window_signal(img_before, s.target);
        const auto [sa, ta] = window_signal(img_after, s.target);
        const double image_ratio = sb > 0.0 ? sa / sb : kNaN;
        const double image_err = sb > 0.0 && sa > 0.0 ? image_ratio * std::sqrt(ta / (sa * sa) + tb / (sb * sb)) : kNaN;
        const double pb = profile_peak(img_before, s.target);
        const double pa = profile_peak(img_after, s.target);
        peaks_before.push_back(pb);
        spot_table.add({static_cast<double>(k), n_ions, s.target.x, nb, na, exp_before, exp_after, expected_ratio, realized,
                        realized_err, image_ratio, image_err, pb, pa});
        add_emitter_rows(emitter_rows, static_cast<double>(k), s.before);
        add_emitter_rows(emitter_after_rows, static_cast<double>(k), s.after);
        ratios.push_back(json_or_null(expected_ratio));
    }

    std::vector<std::size_t> by_ions(n_spots), by_peak(n_spots);
    std::iota(by_ions.begin(), by_ions.end(), 0);
    std::iota(by_peak.begin(), by_peak.end(), 0);
    std::stable_sort(by_ions.begin(), by_ions.end(), [&](auto a, auto b) { return plan.spot_ions[a] < plan.spot_ions[b]; });
    std::stable_sort(by_peak.begin(), by_peak.end(), [&](auto a, auto b) { return peaks_before[a] < peaks_before[b]; });

    CampaignReport report = new_report("irradiation", config, run);
    report.summary = {{"yield", eta_json(eta)},
                      {"eta_after", eta_after},
                      {"multiplier", config.yield.irradiation_multiplier},
                      {"fluence_per_cm2", plan.fluence_per_cm2},
                      {"expected_ratios", ratios},
                      {"before_peak_order_matches_ions", by_ions == by_peak},
                      {"profile_y_nm", geometry.pixel_center(profile_row, 0).y}};
    double ions_total = 0.0;
    for (auto n : plan.spot_ions) ions_total += static_cast<double>(n);
    set_wall_model(report, config, static_cast<double>(n_spots), ions_total / static_cast<double>(n_spots));
    report.tables["spots.csv"] = std::move(spot_table);
    report.tables["profiles.csv"] = std::move(profiles);
    report.tables["emitters_before.csv"] = std::move(emitter_rows);
    report.tables["emitters_after.csv"] = std::move(emitter_after_rows);
    return report;
}

// ---------------------------------------------------------------------------

CampaignReport run_cavity_campaign(const CampaignConfig& config, const RunOptions& run) {
    config.validate();
    const auto table = config.straggle_table();
    const auto surface = config.yield_surface();
    const auto& plan = config.cavity;
    const EtaChoice eta = choose_eta(config, surface, plan.energy_kev, plan.dose_per_cm2);
    const RandomSeed root(config.seed);
    BeamSpec beam = config.beam;
    beam.energy_kev = plan.energy_kev;
    const std::size_t n_max = plan.layout.mode_maxima_offsets.size();
    if (n_max == 0) throw DomainError("cavity campaign: layout has no mode maxima");

    struct Cav {
        CavityLayout layout;
        std::vector<Point3D> ions;
        std::vector<Emitter> emitters;
        bool targeted = false;
        std::optional<TargetingResult> targeting;
        Point2D measured_vector, true_vector;
        std::string error;
    };
    std::vector<Cav> cavs(plan.count);
    const std::size_t per_row = 100;
    parallel_for(plan.count, run.jobs, [&](std::size_t k) {
        Cav& cav = cavs[k];
        cav.layout = plan.layout;
        cav.layout.center = {static_cast<double>(k % per_row) * plan.spacing_nm,
                             static_cast<double>(k / per_row) * plan.spacing_nm};
        const auto maxima = cav.layout.mode_maxima();
        for (std::size_t mi = 0; mi < maxima.size(); ++mi) {
            auto ions = sample_ion_positions({maxima[mi], plan.ions_per_maximum, plan.energy_kev}, beam, table,
                                             root.child(k).child(0).child(mi));
            cav.ions.insert(cav.ions.end(), ions.begin(), ions.end());
        }
        cav.emitters = sample_emitters(cav.ions, eta.eta, config.population, root.child(k).child(1));
    });

    std::vector<std::size_t> to_target;
    for (std::size_t k = 0; k < plan.count && to_target.size() < plan.targeting_limit; ++k)
        if (cavs[k].emitters.size() == 1) to_target.push_back(k);

    auto nearest = [](const std::vector<Point2D>& offsets, Point2D v) {
        return *std::min_element(offsets.begin(), offsets.end(),
                                 [&](Point2D a, Point2D b) { return distance(a, v) < distance(b, v); });
    };
    TargetingOptions topt;
    topt.zpl_psf_sigma_nm = plan.channels.zpl_psf.sigma_nm();
    parallel_for(to_target.size(), run.jobs, [&](std::size_t t) {
        Cav& cav = cavs[to_target[t]];
        cav.targeted = true;
        const Point2D ext = cav.layout.half_extent();
        const Point2D pad{config.imaging.margin_nm, config.imaging.margin_nm};
        const auto geometry = ImageGeometry::covering(cav.layout.center - ext - pad, cav.layout.center + ext + pad,
                                                      config.imaging.pixel_pitch_nm, config.imaging.dwell_ms);
        try {
            const auto cube = render_spectral_cube(cav.emitters, cav.layout, plan.channels, geometry, plan.axis,
                                                   root.child(to_target[t]).child(2));
            cav.targeting =
                estimate_targeting(cube, cav.layout.raman_wavelength_nm, plan.channels.zpl_wavelength_nm, topt);
            cav.measured_vector = cav.targeting->offset - nearest(plan.layout.mode_maxima_offsets, cav.targeting->offset);
            const Point2D rel = cav.emitters.front().position.lateral() - cav.layout.center;
            cav.true_vector = rel - nearest(plan.layout.mode_maxima_offsets, rel);
        } catch (const std::exception& e) {
            cav.error = e.what();
        }
    });

    Table cav_table{{"cavity", "center_x_nm", "center_y_nm", "ions", "emitters", "targeted", "dx_nm", "dy_nm",
                     "distance_nm", "distance_err_nm", "true_dx_nm", "true_dy_nm", "true_distance_nm"},
                    {}};
    Table emitters = emitter_table("cavity");
    std::vector<std::uint64_t> hist;
    std::vector<double> counts, distances, errors, true_distances;
    std::size_t covered = 0;
    ordered_json failures = ordered_json::array();
    for (std::size_t k = 0; k < plan.count; ++k) {
        const auto& cav = cavs[k];
        const std::size_t n = cav.emitters.size();
        if (hist.size() <= n) hist.resize(n + 1, 0);
        ++hist[n];
        counts.push_back(static_cast<double>(n));
        double dx = kNaN, dy = kNaN, d = kNaN, err = kNaN, tdx = kNaN, tdy = kNaN, td = kNaN;
        if (cav.targeting) {
            dx = cav.measured_vector.x;
            dy = cav.measured_vector.y;
            d = cav.measured_vector.norm();
            const auto& cov = cav.targeting->offset_covariance;
            if (d > 0.0) {
                const Eigen::Vector2d u(dx / d, dy / d);
                err = std::sqrt(std::max(u.dot(cov * u), 0.0));
            } else {
                err = std::sqrt(0.5 * cov.trace());
            }
            tdx = cav.true_vector.x;
            tdy = cav.true_vector.y;
            td = cav.true_vector.norm();
            distances.push_back(d);
            errors.push_back(err);
            true_distances.push_back(td);
            const Eigen::Vector2d resid(dx - tdx, dy - tdy);
            const double chi2 = resid.dot(cov.ldlt().solve(resid));
            if (stats::chi_square_sf(chi2, 2.0) >= 1.0 - 0.6826894921370859) ++covered;
        } else if (cav.targeted) {
            failures.push_back({{"cavity", k}, {"error", cav.error}});
        }
        cav_table.add({static_cast<double>(k), cav.layout.center.x, cav.layout.center.y, static_cast<double>(cav.ions.size()),
                       static_cast<double>(n), cav.targeted ? 1.0 : 0.0, dx, dy, d, err, tdx, tdy, td});
        add_emitter_rows(emitters, static_cast<double>(k), cav.emitters);
    }

    const double lambda = static_cast<double>(plan.ions_per_maximum * n_max) * eta.eta;
    ordered_json gof = nullptr;
    if (plan.count > 0 && lambda > 0.0) {
        const auto g = stats::poisson_goodness_of_fit(hist, lambda);
        gof = {{"statistic", g.statistic}, {"dof", g.dof}, {"p_value", g.p_value}};
    }
    const std::size_t singles = hist.size() > 1 ? hist[1] : 0;
    CampaignReport report = new_report("cavity", config, run);
    report.summary = {
        {"yield", eta_json(eta)},
        {"cavities", plan.count},
        {"expected_mean_emitters", lambda},
        {"mean_emitters", counts.empty() ? ordered_json(nullptr) : ordered_json(stats::mean(counts))},
        {"variance_emitters", counts.size() > 1 ? ordered_json(std::pow(stats::stddev(counts), 2)) : ordered_json(nullptr)},
        {"emitter_histogram", hist},
        {"poisson_fit", gof},
        {"single_emitter_cavities", singles},
        {"excluded_cavities", plan.count - singles},
        {"targeting",
         {{"attempted", to_target.size()},
          {"succeeded", distances.size()},
          {"mean_distance_nm", distances.empty() ? ordered_json(nullptr) : ordered_json(stats::mean(distances))},
          {"mean_distance_err_nm", errors.empty() ? ordered_json(nullptr) : ordered_json(stats::mean(errors))},
          {"mean_true_distance_nm",
           true_distances.empty() ? ordered_json(nullptr) : ordered_json(stats::mean(true_distances))},
          {"covered_68", covered}}},
        {"failures", failures}};
    set_wall_model(report, config, static_cast<double>(plan.count * n_max), static_cast<double>(plan.ions_per_maximum));
    report.tables["cavities.csv"] = std::move(cav_table);
    report.tables["emitters.csv"] = std::move(emitters);
    return report;
}

// ---------------------------------------------------------------------------

ProtocolStats run_conditional_protocol(const ProtocolPolicy& policy, double eta, std::uint64_t seed,
                                       std::uint64_t trials, const RunOptions& run) {
    policy.validate();
    if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("protocol: eta must be in [0, 1]");
    if (trials < 1) throw DomainError("protocol: trials must be >= 1");
    const double lambda = policy.ions_per_cycle * eta;
    constexpr std::uint64_t kBlock = 4096;
    const std::size_t blocks = static_cast<std::size_t>((trials + kBlock - 1) / kBlock);

    struct Block {
        std::vector<std::uint64_t> finals, cycles;
    };
    std::vector<Block> out(blocks);
    const RandomSeed root(seed);
    parallel_for(blocks, run.jobs, [&](std::size_t b) {
        Engine rng = root.child(b).engine();
        const std::uint64_t n = std::min<std::uint64_t>(kBlock, trials - b * kBlock);
        std::poisson_distribution<std::uint64_t> draw(lambda > 0.0 ? lambda : 1.0);
        Block& blk = out[b];
        blk.finals.reserve(n);
        blk.cycles.reserve(n);
        for (std::uint64_t t = 0; t < n; ++t) {
            std::uint64_t total = 0, cycles = 0;
            while (total < policy.target_emitters && cycles < policy.max_cycles) {
                ++cycles;
                if (lambda > 0.0) total += draw(rng);
            }
            blk.finals.push_back(total);
            blk.cycles.push_back(cycles);
        }
    });

    ProtocolStats s;
    s.lambda_per_cycle = lambda;
    s.trials = trials;
    double cycle_sum = 0.0;
    std::uint64_t success = 0, exact = 0, over = 0;
    for (const auto& blk : out) {
        for (std::size_t i = 0; i < blk.finals.size(); ++i) {
            const auto f = blk.finals[i];
            const auto c = blk.cycles[i];
            cycle_sum += static_cast<double>(c);
            if (s.final_count_histogram.size() <= f) s.final_count_histogram.resize(f + 1, 0);
            ++s.final_count_histogram[f];
            if (s.cycle_histogram.size() <= c) s.cycle_histogram.resize(c + 1, 0);
            ++s.cycle_histogram[c];
            if (f >= policy.target_emitters) {
                ++success;
                if (f == policy.target_emitters) ++exact;
                else ++over;
            }
        }
    }
    const double n = static_cast<double>(trials);
    s.mean_cycles = cycle_sum / n;
    s.success_fraction = static_cast<double>(success) / n;
    s.exact_given_halted = success ? static_cast<double>(exact) / static_cast<double>(success) : 0.0;
    s.overshoot_given_halted = success ? static_cast<double>(over) / static_cast<double>(success) : 0.0;
    return s;
}

CampaignReport run_protocol_campaign(const CampaignConfig& config, const RunOptions& run) {
    config.validate();
    const auto surface = config.yield_surface();
    EtaChoice eta;
    if (config.protocol.eta) {
        eta = {*config.protocol.eta, false, true};
    } else {
        eta = choose_eta(config, surface, config.beam.energy_kev, config.array.dose_per_cm2);
    }
    const auto s = run_conditional_protocol(config.protocol.policy, eta.eta, config.seed, config.protocol.trials, run);
    const double lambda = s.lambda_per_cycle;
    ordered_json oracle = nullptr;
    if (config.protocol.policy.target_emitters == 1 && lambda > 0.0)
        oracle = {{"mean_cycles", 1.0 / -std::expm1(-lambda)},
                  {"exact_given_halted", lambda * std::exp(-lambda) / -std::expm1(-lambda)}};

    CampaignReport report = new_report("protocol", config, run);
    report.summary = {{"yield", eta_json(eta)},
                      {"lambda_per_cycle", lambda},
                      {"trials", s.trials},
                      {"mean_cycles", s.mean_cycles},
                      {"success_fraction", s.success_fraction},
                      {"exact_given_halted", s.exact_given_halted},
                      {"overshoot_given_halted", s.overshoot_given_halted},
                      {"single_target_oracle", oracle}};
    Table finals{{"final_emitters", "trials"}, {}};
    for (std::size_t k = 0; k < s.final_count_histogram.size(); ++k)
        finals.add({static_cast<double>(k), static_cast<double>(s.final_count_histogram[k])});
    Table cycles{{"cycles", "trials"}, {}};
    for (std::size_t k = 0; k < s.cycle_histogram.size(); ++k)
        cycles.add({static_cast<double>(k), static_cast<double>(s.cycle_histogram[k])});
    report.tables["final_counts.csv"] = std::move(finals);
    report.tables["cycles.csv"] = std::move(cycles);
    set_wall_model(report, config, s.mean_cycles * static_cast<double>(s.trials), config.protocol.policy.ions_per_cycle);
    return report;
}

CampaignKind parse_campaign_kind(const std::string& name) {
    if (name == "array") return CampaignKind::Array;
    if (name == "sweep") return CampaignKind::Sweep;
    if (name == "irradiation") return CampaignKind::Irradiation;
    if (name == "cavity") return CampaignKind::Cavity;
    if (name == "protocol") return CampaignKind::Protocol;
    throw DomainError("unknown campaign kind '" + name + "' (array, sweep, irradiation, cavity, protocol)");
}

CampaignReport run_campaign(CampaignKind kind, const CampaignConfig& config, const RunOptions& run) {
    switch (kind) {
        case CampaignKind::Array: return run_array_campaign(config, run);
        case CampaignKind::Sweep: return run_sweep_campaign(config, run);
        case CampaignKind::Irradiation: return run_irradiation_comparison(config, run);
        case CampaignKind::Cavity: return run_cavity_campaign(config, run);
        case CampaignKind::Protocol: return run_protocol_campaign(config, run);
    }
    throw DomainError("unknown campaign kind");
}

}  // namespace fibsim
