#include "fibsim/analysis.hpp"
#include "fibsim/campaign.hpp"
#include "fibsim/config.hpp"
#include "fibsim/error.hpp"
#include "fibsim/implantation.hpp"
#include "fibsim/report.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace fibsim;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::object to_python(const nlohmann::ordered_json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

std::vector<Point2D> points_from(const Array& a) {
    if (a.ndim() != 2 || a.shape(1) != 2) throw DomainError("expected an (n, 2) array of points");
    auto r = a.unchecked<2>();
    std::vector<Point2D> out(static_cast<std::size_t>(a.shape(0)));
    for (py::ssize_t i = 0; i < a.shape(0); ++i) out[static_cast<std::size_t>(i)] = {r(i, 0), r(i, 1)};
    return out;
}

std::vector<double> vector_from(const Array& a) { return {a.data(), a.data() + a.size()}; }

Array points_to(const std::vector<Point2D>& p) {
    Array out({static_cast<py::ssize_t>(p.size()), py::ssize_t{2}});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < p.size(); ++i) {
        w(static_cast<py::ssize_t>(i), 0) = p[i].x;
        w(static_cast<py::ssize_t>(i), 1) = p[i].y;
    }
    return out;
}

py::dict tables_to(const CampaignReport& r) {
    py::dict out;
    for (const auto& [name, t] : r.tables) {
        py::dict cols;
        for (std::size_t c = 0; c < t.columns.size(); ++c) {
            Array v(static_cast<py::ssize_t>(t.rows.size()));
            auto w = v.mutable_unchecked<1>();
            for (std::size_t i = 0; i < t.rows.size(); ++i) w(static_cast<py::ssize_t>(i)) = t.rows[i][c];
            cols[py::str(t.columns[c])] = v;
        }
        out[py::str(name)] = cols;
    }
    return out;
}

ImageGeometry geometry_of(py::ssize_t height, py::ssize_t width, std::pair<double, double> origin, double pitch,
                          double dwell) {
    ImageGeometry g;
    g.origin = {origin.first, origin.second};
    g.pixel_pitch_nm = pitch;
    g.width = static_cast<std::size_t>(width);
    g.height = static_cast<std::size_t>(height);
    g.dwell_ms = dwell;
    g.validate();
    return g;
}

py::dict interval(const Interval& i) { return py::dict(py::arg("low") = i.low, py::arg("high") = i.high); }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Focused-ion-beam emitter implantation: simulation and analysis core";

    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<RangeError>(m, "RangeError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<FitError>(m, "FitError", PyExc_RuntimeError);
    py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);

    m.attr("__version__") = kToolVersion;

    m.def("psf_sigma", &psf_sigma, py::arg("numerical_aperture"), py::arg("wavelength_nm"));
    m.def("lifetime_limited_linewidth_mhz", &lifetime_limited_linewidth_mhz, py::arg("lifetime_ns"));
    m.def("wavelength_linewidth_to_frequency", &wavelength_linewidth_to_frequency, py::arg("center_nm"),
          py::arg("width_nm"));
    m.def("voigt_profile", &voigt_profile, py::arg("x"), py::arg("lorentz_fwhm"), py::arg("gauss_sigma"));

    m.def(
        "sample_ion_positions",
        [](std::pair<double, double> target, std::uint64_t n_ions, double energy_kev, double beam_fwhm_nm,
           std::uint64_t seed, std::optional<double> pointing_sigma_nm) {
            BeamSpec beam;
            beam.fwhm_nm = beam_fwhm_nm;
            beam.energy_kev = energy_kev;
            beam.pointing_sigma_nm = pointing_sigma_nm;
            const auto ions = sample_ion_positions({{target.first, target.second}, n_ions, energy_kev}, beam,
                                                   StraggleTable::defaults(), RandomSeed(seed));
            Array out({static_cast<py::ssize_t>(ions.size()), py::ssize_t{3}});
            auto w = out.mutable_unchecked<2>();
            for (std::size_t i = 0; i < ions.size(); ++i) {
                const auto k = static_cast<py::ssize_t>(i);
                w(k, 0) = ions[i].x;
                w(k, 1) = ions[i].y;
                w(k, 2) = ions[i].z;
            }
            return out;
        },
        py::arg("target"), py::arg("n_ions"), py::arg("energy_kev") = 100.0, py::arg("beam_fwhm_nm") = 40.0,
        py::arg("seed") = 1, py::arg("pointing_sigma_nm") = py::none(),
        "Ion rest positions (n, 3) in nm for one counted shot, using the shipped straggle table.");

    m.def(
        "render_confocal",
        [](const Array& positions, double brightness_kcps, std::pair<double, double> lo, std::pair<double, double> hi,
           double pitch_nm, double dwell_ms, double background_kcps, std::uint64_t seed, double numerical_aperture,
           double wavelength_nm) {
            std::vector<Emitter> em;
            for (const auto& p : points_from(positions)) {
                Emitter e;
                e.position = {p.x, p.y, 0.0};
                e.brightness_kcps = brightness_kcps;
                em.push_back(e);
            }
            const auto g = ImageGeometry::covering({lo.first, lo.second}, {hi.first, hi.second}, pitch_nm, dwell_ms);
            const auto img = render_confocal(em, {numerical_aperture, wavelength_nm}, background_kcps, g, RandomSeed(seed));
            py::array_t<std::uint32_t> counts({static_cast<py::ssize_t>(g.height), static_cast<py::ssize_t>(g.width)});
            std::copy(img.counts.begin(), img.counts.end(), counts.mutable_data());
            return py::make_tuple(counts, py::make_tuple(g.origin.x, g.origin.y), img.warnings);
        },
        py::arg("positions"), py::arg("brightness_kcps") = 30.0, py::arg("lo"), py::arg("hi"), py::arg("pitch_nm") = 50.0,
        py::arg("dwell_ms") = 1.0, py::arg("background_kcps") = 1.0, py::arg("seed") = 1,
        py::arg("numerical_aperture") = 1.3, py::arg("wavelength_nm") = 737.0,
        "Shot-noise confocal scan; returns (counts[row, col], origin, warnings).");

    m.def(
        "localize_sites",
        [](py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast> counts, std::pair<double, double> origin,
           double pitch_nm, double dwell_ms, double psf_sigma_nm, double min_separation_nm, double threshold_sigmas) {
            if (counts.ndim() != 2) throw DomainError("counts must be a 2D array");
            ConfocalImage img;
            img.geometry = geometry_of(counts.shape(0), counts.shape(1), origin, pitch_nm, dwell_ms);
            img.counts.assign(counts.data(), counts.data() + counts.size());
            LocalizeOptions o;
            o.psf_sigma_nm = psf_sigma_nm;
            o.min_separation_nm = min_separation_nm;
            o.threshold_sigmas = threshold_sigmas;
            const auto loc = localize_sites(img, o);
            py::list out;
            for (const auto& s : loc.sites)
                out.append(py::dict(py::arg("x_nm") = s.position.x, py::arg("y_nm") = s.position.y,
                                    py::arg("sigma_x_nm") = s.sigma_x_nm, py::arg("sigma_y_nm") = s.sigma_y_nm,
                                    py::arg("peak_counts") = s.peak_counts, py::arg("background_counts") = s.background_counts,
                                    py::arg("width_nm") = s.width_nm));
            return out;
        },
        py::arg("counts"), py::arg("origin"), py::arg("pitch_nm"), py::arg("dwell_ms") = 1.0,
        py::arg("psf_sigma_nm") = 122.8, py::arg("min_separation_nm") = 300.0, py::arg("threshold_sigmas") = 6.0);

    m.def(
        "fit_affine_grid",
        [](const Array& sites, double pitch_nm) {
            const auto fit = fit_affine_grid(points_from(sites), pitch_nm);
            py::array_t<long> idx({static_cast<py::ssize_t>(fit.indices.size()), py::ssize_t{2}});
            auto w = idx.mutable_unchecked<2>();
            for (std::size_t i = 0; i < fit.indices.size(); ++i) {
                w(static_cast<py::ssize_t>(i), 0) = fit.indices[i].i;
                w(static_cast<py::ssize_t>(i), 1) = fit.indices[i].j;
            }
            const auto& L = fit.transform.linear();
            const auto t = fit.transform.translation();
            return py::dict(py::arg("linear") = std::vector<double>(L.begin(), L.end()),
                            py::arg("translation_nm") = std::make_pair(t.x, t.y), py::arg("indices") = idx,
                            py::arg("displacements_nm") = points_to(fit.displacements),
                            py::arg("distances_nm") = fit.distances(), py::arg("iterations") = fit.iterations);
        },
        py::arg("sites"), py::arg("pitch_nm"));

    m.def(
        "fit_rayleigh",
        [](const Array& distances) {
            const auto f = fit_rayleigh(vector_from(distances));
            return py::dict(py::arg("sigma_nm") = f.sigma_nm, py::arg("sigma_error_nm") = f.sigma_error_nm,
                            py::arg("mean_r_nm") = f.mean_r_nm, py::arg("std_r_nm") = f.std_r_nm,
                            py::arg("samples") = f.samples);
        },
        py::arg("distances"));

    m.def(
        "synth_g2",
        [](double a, double b, double t1_ns, double t2_ns, double half_range_ns, double bin_width_ns, double total_counts,
           std::optional<std::uint64_t> seed) {
            const auto tau = symmetric_delay_bins(half_range_ns, bin_width_ns);
            std::optional<RandomSeed> s;
            if (seed) s = RandomSeed(*seed);
            const auto h = synth_g2({a, b, t1_ns, t2_ns}, tau, total_counts, s);
            return py::make_tuple(Array(h.tau_ns.size(), h.tau_ns.data()), Array(h.value.size(), h.value.data()),
                                  Array(h.sigma.size(), h.sigma.data()));
        },
        py::arg("a") = 0.8, py::arg("b") = 0.18, py::arg("t1_ns") = 3.0, py::arg("t2_ns") = 50.0,
        py::arg("half_range_ns") = 300.0, py::arg("bin_width_ns") = 2.0, py::arg("total_counts") = 1e5,
        py::arg("seed") = py::none(), "Returns (tau_ns, value, sigma).");

    m.def(
        "fit_g2",
        [](const Array& tau, const Array& value, const Array& sigma, double confidence) {
            G2Histogram h{vector_from(tau), vector_from(value), vector_from(sigma)};
            h.validate();
            G2FitOptions o;
            o.confidence = confidence;
            const auto f = fit_g2(h, o);
            py::dict ci;
            ci["a"] = interval(f.ci[0]);
            ci["b"] = interval(f.ci[1]);
            ci["t1_ns"] = interval(f.ci[2]);
            ci["t2_ns"] = interval(f.ci[3]);
            return py::dict(py::arg("a") = f.params.a, py::arg("b") = f.params.b, py::arg("t1_ns") = f.params.t1_ns,
                            py::arg("t2_ns") = f.params.t2_ns, py::arg("ci") = ci, py::arg("g2_zero") = f.g2_zero,
                            py::arg("g2_zero_ci") = interval(f.g2_zero_ci), py::arg("is_single") = f.is_single,
                            py::arg("ci_reliable") = f.ci_reliable, py::arg("reduced_chi2") = f.reduced_chi2);
        },
        py::arg("tau_ns"), py::arg("value"), py::arg("sigma"), py::arg("confidence") = 0.95);

    m.def(
        "fit_line",
        [](const Array& x, const Array& counts, const std::string& model, double instrument_fwhm) {
            if (model != "gaussian" && model != "lorentzian") throw DomainError("model must be 'gaussian' or 'lorentzian'");
            Spectrum s;
            s.x = vector_from(x);
            s.counts = vector_from(counts);
            const auto f = fit_line(s, model == "gaussian" ? LineModel::Gaussian : LineModel::Lorentzian, instrument_fwhm);
            return py::dict(py::arg("center") = f.center, py::arg("center_error") = f.center_error,
                            py::arg("fwhm") = f.fwhm, py::arg("fwhm_error") = f.fwhm_error,
                            py::arg("amplitude") = f.amplitude, py::arg("offset") = f.offset,
                            py::arg("instrument_limited") = f.instrument_limited,
                            py::arg("reduced_chi2") = f.reduced_chi2);
        },
        py::arg("x"), py::arg("counts"), py::arg("model") = "gaussian", py::arg("instrument_fwhm") = 0.0);

    m.def(
        "run_conditional_protocol",
        [](double ions_per_cycle, std::uint64_t target_emitters, std::uint64_t max_cycles, double eta,
           std::uint64_t seed, std::uint64_t trials, unsigned jobs) {
            ProtocolPolicy p{ions_per_cycle, target_emitters, max_cycles};
            const auto s = run_conditional_protocol(p, eta, seed, trials, {jobs});
            return py::dict(py::arg("lambda_per_cycle") = s.lambda_per_cycle, py::arg("trials") = s.trials,
                            py::arg("mean_cycles") = s.mean_cycles, py::arg("success_fraction") = s.success_fraction,
                            py::arg("exact_given_halted") = s.exact_given_halted,
                            py::arg("overshoot_given_halted") = s.overshoot_given_halted,
                            py::arg("final_count_histogram") = s.final_count_histogram,
                            py::arg("cycle_histogram") = s.cycle_histogram);
        },
        py::arg("ions_per_cycle"), py::arg("target_emitters") = 1, py::arg("max_cycles") = 100, py::arg("eta"),
        py::arg("seed") = 1, py::arg("trials") = 100000, py::arg("jobs") = 1);

    m.def("default_config_json", [] { return config_to_json(CampaignConfig{}).dump(); });

    py::class_<CampaignReport>(m, "Report")
        .def_readonly("kind", &CampaignReport::kind)
        .def_readonly("seed", &CampaignReport::seed)
        .def_readonly("tool_version", &CampaignReport::tool_version)
        .def_readonly("config_digest", &CampaignReport::config_digest)
        .def_readonly("load_warnings", &CampaignReport::load_warnings)
        .def_property_readonly("summary", [](const CampaignReport& r) { return to_python(r.summary); })
        .def_property_readonly("wall_model", [](const CampaignReport& r) { return to_python(r.wall_model); })
        .def_property_readonly("config", [](const CampaignReport& r) { return to_python(r.config); })
        .def_property_readonly("tables", &tables_to, "{file name: {column: ndarray}}")
        .def(
            "manifest",
            [](const CampaignReport& r, bool include_metadata) { return to_python(report_manifest(r, include_metadata)); },
            py::arg("include_metadata") = true)
        .def("persist", [](const CampaignReport& r, const std::filesystem::path& dir) { persist_report(r, dir); },
             py::arg("dir"))
        .def("__eq__", [](const CampaignReport& a, const CampaignReport& b) { return a == b; });

    m.def(
        "run_campaign",
        [](const std::string& kind, const std::string& config_json, const std::filesystem::path& base_dir, unsigned jobs) {
            const CampaignConfig c = parse_config(config_json, "<python>", base_dir);
            const auto k = parse_campaign_kind(kind);
            py::gil_scoped_release release;
            return run_campaign(k, c, {jobs});
        },
        py::arg("kind"), py::arg("config_json") = "{}", py::arg("base_dir") = std::filesystem::path(),
        py::arg("jobs") = 1);
    m.def("load_report", &load_report, py::arg("dir"));
}
