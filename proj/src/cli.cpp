#include "fibsim/cli.hpp"

#include "fibsim/analysis.hpp"
#include "fibsim/campaign.hpp"
#include "fibsim/config.hpp"
#include "fibsim/error.hpp"
#include "fibsim/formats.hpp"
#include "fibsim/report.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace fibsim::cli {

using nlohmann::ordered_json;

namespace {

constexpr const char* kUnitsHelp =
    "Units are carried in key and flag names: _nm nanometres, _um micrometres, _kev kilo-electronvolts,\n"
    "_pa picoamperes, _ghz / _mhz frequency (linewidths are FWHM), _ms milliseconds, _ns nanoseconds,\n"
    "_kcps kilocounts per second, _per_cm2 areal dose or fluence.\n"
    "Config fields can be overridden with --set path=value or --path=value using dotted names\n"
    "(e.g. --array.pitch_nm=2000). Precedence: flag > environment (FIBSIM_CONFIG, FIBSIM_SEED,\n"
    "FIBSIM_OUT, FIBSIM_JOBS) > config file > default.";

struct Usage : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "fibsim-out";
    bool out_given = false;
    unsigned jobs = 1;
    int verbose = 0;
    std::vector<std::string> sets;
};

void emit_error(std::ostream& err, const std::string& type, const std::string& message,
                const std::string& location = "") {
    ordered_json j{{"error", {{"type", type}, {"message", message}}}};
    if (!location.empty()) j["error"]["location"] = location;
    err << j.dump() << '\n';
}

std::pair<std::string, std::string> split_assignment(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw Usage("override '" + s + "' must look like path=value");
    return {s.substr(0, eq), s.substr(eq + 1)};
}

CampaignConfig resolve_config(const Globals& g) {
    CampaignConfig config;
    if (!g.config_path.empty()) config = load_config(g.config_path);
    if (!g.sets.empty()) {
        auto j = config_to_json(config);
        for (const auto& s : g.sets) {
            const auto [path, value] = split_assignment(s);
            apply_override(j, path, value);
        }
        const auto base = config.base_dir;
        config = config_from_json(j, "overrides");
        config.base_dir = base;
    }
    if (g.seed) config.seed = *g.seed;
    try {
        config.validate();
    } catch (const DomainError& e) {
        throw ParseError(g.config_path.empty() ? "config" : g.config_path, e.what());
    } catch (const RangeError& e) {
        throw ParseError(g.config_path.empty() ? "config" : g.config_path, e.what());
    }
    return config;
}

void write_result(const Globals& g, const std::string& name, const ordered_json& j, std::ostream& out) {
    const std::string text = j.dump(2) + "\n";
    out << text;
    if (g.out_given) {
        std::filesystem::create_directories(g.out_dir);
        formats::write_text_file(std::filesystem::path(g.out_dir) / name, text);
    }
}

ordered_json point_json(Point2D p) { return ordered_json::array({p.x, p.y}); }

ordered_json interval_json(const Interval& i) { return ordered_json::array({i.low, i.high}); }

std::string unit_suffix(SpectrumUnit u) {
    switch (u) {
        case SpectrumUnit::Gigahertz: return "ghz";
        case SpectrumUnit::Megahertz: return "mhz";
        case SpectrumUnit::Nanometer: return "nm";
    }
    return "x";
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    // Dotted-path config overrides (--array.pitch_nm=2000 or --array.pitch_nm 2000) are pulled out
    // before CLI11 sees the arguments.
    Globals g;
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a.rfind("--", 0) == 0 && a.size() > 2) {
            const std::string body = a.substr(2);
            const auto eq = body.find('=');
            const std::string name = body.substr(0, eq);
            if (name.find('.') != std::string::npos) {
                if (eq != std::string::npos) {
                    g.sets.push_back(body);
                } else if (i + 1 < argc) {
                    g.sets.push_back(name + "=" + argv[++i]);
                } else {
                    emit_error(err, "usage", "missing value for --" + name);
                    return 2;
                }
                continue;
            }
        }
        args.push_back(a);
    }

    CLI::App app{"fibsim: focused-ion-beam emitter implantation simulator and analysis tool", "fibsim"};
    app.footer(kUnitsHelp);
    app.fallthrough();
    app.require_subcommand(1);
    app.add_option("--config", g.config_path, "Campaign config (JSON)")->envname("FIBSIM_CONFIG");
    app.add_option("--seed", g.seed, "Root random seed (recorded in the report)")->envname("FIBSIM_SEED");
    auto* out_opt = app.add_option("--out", g.out_dir, "Output directory")->envname("FIBSIM_OUT");
    app.add_option("--jobs", g.jobs, "Worker threads (results do not depend on it)")
        ->envname("FIBSIM_JOBS")
        ->check(CLI::PositiveNumber);
    std::vector<std::string> set_flags;
    app.add_option("--set", set_flags, "Config override path=value (repeatable)");
    app.add_flag("-v,--verbose", g.verbose, "Progress messages on stderr");

    std::string kind;
    auto* simulate = app.add_subcommand("simulate", "Run a simulated campaign and write a report directory");
    simulate->add_option("kind", kind, "array | sweep | irradiation | cavity | protocol")
        ->required()
        ->check(CLI::IsMember({"array", "sweep", "irradiation", "cavity", "protocol"}));

    auto* analyze = app.add_subcommand("analyze", "Fit a measured or simulated data file");
    analyze->require_subcommand(1);
    std::string input;
    double na = 1.3, wavelength_nm = 737.0, min_sep_nm = 300.0, threshold = 6.0;
    std::optional<double> psf_sigma_nm;
    auto* a_image = analyze->add_subcommand("image", "Localize emitters in a confocal image CSV");
    a_image->add_option("file", input, "Image CSV (row,col,counts)")->required();
    a_image->add_option("--na", na, "Objective numerical aperture");
    a_image->add_option("--wavelength-nm", wavelength_nm, "Detection wavelength");
    a_image->add_option("--psf-sigma-nm", psf_sigma_nm, "PSF sigma (overrides --na/--wavelength-nm)");
    a_image->add_option("--min-separation-nm", min_sep_nm, "Candidates closer than this merge");
    a_image->add_option("--threshold-sigmas", threshold, "Detection threshold in noise sigmas");

    double raman_nm = 572.8, zpl_nm = 736.9;
    auto* a_cube = analyze->add_subcommand("cube", "Raman/ZPL targeting from a spectral cube");
    a_cube->add_option("file", input, "Cube file (JSON header + CSV)")->required();
    a_cube->add_option("--raman-nm", raman_nm, "Raman reference wavelength");
    a_cube->add_option("--zpl-nm", zpl_nm, "Emitter zero-phonon line wavelength");
    a_cube->add_option("--na", na, "Objective numerical aperture");

    auto* a_g2 = analyze->add_subcommand("g2", "Fit a g2 histogram CSV (tau_ns,value,sigma)");
    a_g2->add_option("file", input, "g2 CSV")->required();
    double confidence = 0.95;
    a_g2->add_option("--confidence", confidence, "Confidence level of the intervals");

    std::string model = "gaussian";
    double instrument = 0.0;
    auto* a_spec = analyze->add_subcommand("spectrum", "Fit a single line in a spectrum CSV");
    a_spec->add_option("file", input, "Spectrum CSV")->required();
    a_spec->add_option("--model", model, "gaussian | lorentzian")->check(CLI::IsMember({"gaussian", "lorentzian"}));
    a_spec->add_option("--instrument-fwhm", instrument, "Instrument FWHM in the spectrum's x unit");

    auto* report_cmd = app.add_subcommand("report", "Inspect report directories");
    report_cmd->require_subcommand(1);
    std::string report_dir;
    auto* show = report_cmd->add_subcommand("show", "Verify and summarize a report directory");
    show->add_option("dir", report_dir, "Report directory")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        emit_error(err, "usage", e.what());
        return 2;
    }
    g.sets.insert(g.sets.begin(), set_flags.begin(), set_flags.end());
    g.out_given = out_opt->count() > 0 || std::getenv("FIBSIM_OUT") != nullptr;

    try {
        if (simulate->parsed()) {
            const CampaignConfig config = resolve_config(g);
            if (g.verbose) err << "fibsim: simulate " << kind << " seed " << config.seed << " jobs " << g.jobs << '\n';
            const CampaignReport report = run_campaign(parse_campaign_kind(kind), config, {g.jobs});
            persist_report(report, g.out_dir);
            ordered_json j{{"kind", report.kind},
                           {"out", g.out_dir},
                           {"seed", report.seed},
                           {"config_digest", report.config_digest},
                           {"summary", report.summary},
                           {"wall_model", report.wall_model}};
            out << j.dump(2) << '\n';
            return 0;
        }
        if (a_image->parsed()) {
            const auto image = formats::load_image(input);
            LocalizeOptions lo;
            lo.psf_sigma_nm = psf_sigma_nm ? *psf_sigma_nm : psf_sigma(na, wavelength_nm);
            lo.min_separation_nm = min_sep_nm;
            lo.threshold_sigmas = threshold;
            const auto loc = localize_sites(image, lo);
            const auto singles = filter_single_sites(loc.sites);
            ordered_json sites = ordered_json::array();
            for (const auto& s : loc.sites)
                sites.push_back({{"x_nm", s.position.x},
                                 {"y_nm", s.position.y},
                                 {"sigma_x_nm", s.sigma_x_nm},
                                 {"sigma_y_nm", s.sigma_y_nm},
                                 {"peak_counts", s.peak_counts},
                                 {"background_counts", s.background_counts},
                                 {"width_nm", s.width_nm},
                                 {"residual_norm", s.residual_norm}});
            ordered_json j{{"psf_sigma_nm", lo.psf_sigma_nm},
                           {"sites", sites},
                           {"single_sites", singles.size()},
                           {"diagnostics",
                            {{"candidates", loc.diagnostics.candidates},
                             {"merged", loc.diagnostics.merged},
                             {"dropped", loc.diagnostics.dropped}}},
                           {"warnings", image.warnings}};
            write_result(g, "image_fit.json", j, out);
            return 0;
        }
        if (a_cube->parsed()) {
            const auto cube = formats::load_cube(input);
            TargetingOptions topt;
            topt.zpl_psf_sigma_nm = psf_sigma(na, zpl_nm);
            const auto t = estimate_targeting(cube, raman_nm, zpl_nm, topt);
            ordered_json j{{"raman_centroid_nm", point_json(t.raman.center)},
                           {"zpl_centroid_nm", point_json(t.zpl.center)},
                           {"offset_nm", point_json(t.offset)},
                           {"distance_nm", t.distance_nm},
                           {"distance_err_nm", t.distance_error_nm},
                           {"confidence", 0.68}};
            write_result(g, "cube_fit.json", j, out);
            return 0;
        }
        if (a_g2->parsed()) {
            const auto hist = formats::load_g2(input);
            G2FitOptions gopt;
            gopt.confidence = confidence;
            const auto f = fit_g2(hist, gopt);
            ordered_json j{{"a", f.params.a},
                           {"b", f.params.b},
                           {"t1_ns", f.params.t1_ns},
                           {"t2_ns", f.params.t2_ns},
                           {"confidence", confidence},
                           {"ci",
                            {{"a", interval_json(f.ci[0])},
                             {"b", interval_json(f.ci[1])},
                             {"t1_ns", interval_json(f.ci[2])},
                             {"t2_ns", interval_json(f.ci[3])}}},
                           {"g2_zero", f.g2_zero},
                           {"g2_zero_ci", interval_json(f.g2_zero_ci)},
                           {"is_single", f.is_single},
                           {"ci_reliable", f.ci_reliable},
                           {"reduced_chi2", f.reduced_chi2}};
            write_result(g, "g2_fit.json", j, out);
            return 0;
        }
        if (a_spec->parsed()) {
            const auto spectrum = formats::load_spectrum(input);
            const auto f = fit_line(spectrum, model == "gaussian" ? LineModel::Gaussian : LineModel::Lorentzian, instrument);
            const std::string u = unit_suffix(spectrum.unit);
            ordered_json j{{"model", model},
                           {"center_" + u, f.center},
                           {"center_err_" + u, f.center_error},
                           {"fwhm_" + u, f.fwhm},
                           {"fwhm_err_" + u, f.fwhm_error},
                           {"amplitude_counts", f.amplitude},
                           {"offset_counts", f.offset},
                           {"instrument_fwhm_" + u, instrument},
                           {"instrument_limited", f.instrument_limited},
                           {"reduced_chi2", f.reduced_chi2}};
            if (spectrum.unit == SpectrumUnit::Megahertz) j["reference_ghz"] = spectrum.reference_ghz;
            write_result(g, "spectrum_fit.json", j, out);
            return 0;
        }
        if (show->parsed()) {
            const auto r = load_report(report_dir);
            ordered_json files = ordered_json::object();
            for (const auto& [name, t] : r.tables) files[name] = {{"rows", t.rows.size()}, {"columns", t.columns}};
            ordered_json j{{"kind", r.kind},
                           {"tool_version", r.tool_version},
                           {"schema_version", r.schema_version},
                           {"warnings", r.load_warnings},
                           {"seed", r.seed},
                           {"config_digest", r.config_digest},
                           {"integrity", "ok"},
                           {"summary", r.summary},
                           {"wall_model", r.wall_model},
                           {"files", files}};
            out << j.dump(2) << '\n';
            return 0;
        }
    } catch (const Usage& e) {
        emit_error(err, "usage", e.what());
        return 2;
    } catch (const ParseError& e) {
        emit_error(err, "parse_error", e.what(), e.location());
        return 2;
    } catch (const IntegrityError& e) {
        emit_error(err, "integrity_error", e.what());
        return 2;
    } catch (const FitError& e) {
        emit_error(err, "fit_error", e.what());
        return 1;
    } catch (const std::exception& e) {
        emit_error(err, "runtime_error", e.what());
        return 1;
    }
    emit_error(err, "usage", "no command given");
    return 2;
}

}  // namespace fibsim::cli
