#include "fibsim/config.hpp"

#include "fibsim/error.hpp"
#include "fibsim/formats.hpp"

#include <set>

namespace fibsim {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kConfigVersion = 1;

const json& empty_object() {
    static const json e = json::object();
    return e;
}

// Reads fields of one JSON object, remembering which keys were consumed so leftovers can be reported.
class Fields {
public:
    Fields(const json& j, std::string path, const std::string& source) : j_(&j), path_(std::move(path)), source_(source) {
        if (!j.is_object()) throw ParseError(source_, where() + "expected an object");
    }

    template <class T>
    void get(const char* key, T& dst) {
        seen_.insert(key);
        const auto it = j_->find(key);
        if (it == j_->end()) return;
        try {
            dst = it->template get<T>();
        } catch (const json::exception& e) {
            throw ParseError(source_, where(key) + e.what());
        }
    }

    template <class T>
    void get(const char* key, std::optional<T>& dst) {
        seen_.insert(key);
        const auto it = j_->find(key);
        if (it == j_->end()) return;
        if (it->is_null()) {
            dst.reset();
            return;
        }
        try {
            dst = it->template get<T>();
        } catch (const json::exception& e) {
            throw ParseError(source_, where(key) + e.what());
        }
    }

    Fields sub(const char* key) {
        seen_.insert(key);
        const auto it = j_->find(key);
        return Fields(it == j_->end() ? empty_object() : *it, path_ + key + ".", source_);
    }

    const json* raw(const char* key) {
        seen_.insert(key);
        const auto it = j_->find(key);
        return it == j_->end() ? nullptr : &*it;
    }

    std::string where(const std::string& key = "") const {
        const std::string p = path_ + key;
        return p.empty() ? std::string() : "'" + (key.empty() ? p.substr(0, p.size() - 1) : p) + "': ";
    }

    void done() const {
        for (const auto& [k, v] : j_->items())
            if (!seen_.count(k)) throw ParseError(source_, "unknown config key '" + path_ + k + "'");
    }

private:
    const json* j_;
    std::string path_;
    std::string source_;
    std::set<std::string> seen_;
};

ordered_json psf_json(const PsfSpec& p) {
    return {{"numerical_aperture", p.numerical_aperture}, {"wavelength_nm", p.wavelength_nm}};
}

void read_psf(Fields f, PsfSpec& p) {
    f.get("numerical_aperture", p.numerical_aperture);
    f.get("wavelength_nm", p.wavelength_nm);
    f.done();
}

template <class T>
json optional_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace

void ProtocolPolicy::validate() const {
    if (!(ions_per_cycle >= 0.0)) throw DomainError("protocol: ions_per_cycle must be >= 0");
    if (target_emitters < 1) throw DomainError("protocol: target_emitters must be >= 1");
    if (max_cycles < 1) throw DomainError("protocol: max_cycles must be >= 1");
}

StraggleTable CampaignConfig::straggle_table() const {
    if (!straggle.file.empty()) {
        std::filesystem::path p(straggle.file);
        if (p.is_relative()) p = base_dir / p;
        return StraggleTable::load_csv(p.string());
    }
    if (!straggle.entries.empty()) return StraggleTable(straggle.entries);
    return StraggleTable::defaults();
}

YieldSurface CampaignConfig::yield_surface() const {
    YieldSurface s;
    if (!yield.file.empty()) {
        std::filesystem::path p(yield.file);
        if (p.is_relative()) p = base_dir / p;
        s = YieldSurface::load_csv(p.string());
    } else {
        s = YieldSurface::power_law(yield.eta_100kev, yield.energy_exponent.value_or(YieldSurface::default_energy_exponent()),
                                    yield.dose_exponent);
    }
    s.irradiation_multiplier = yield.irradiation_multiplier;
    s.yield_cap = yield.yield_cap;
    s.activation_fluence_per_cm2 = yield.activation_fluence_per_cm2;
    s.validate();
    return s;
}

void CampaignConfig::validate() const {
    beam.validate();
    population.validate();
    imaging.psf().validate();
    if (!(imaging.pixel_pitch_nm > 0.0) || !(imaging.dwell_ms > 0.0))
        throw DomainError("imaging: pixel_pitch_nm and dwell_ms must be positive");
    if (imaging.background_kcps < 0.0 || imaging.margin_nm < 0.0)
        throw DomainError("imaging: background_kcps and margin_nm must be >= 0");
    if (!(array.pitch_nm > 0.0)) throw DomainError("array: pitch_nm must be positive");
    if (array.columns == 0 || array.rows == 0) throw DomainError("array: needs at least one row and column");
    if (sweep.energies_kev.empty() || sweep.doses_per_cm2.empty()) throw DomainError("sweep: grids must be non-empty");
    for (double d : sweep.doses_per_cm2)
        if (!(d > 0.0)) throw DomainError("sweep: doses must be positive");
    if (!(sweep.region_um > 0.0)) throw DomainError("sweep: region_um must be positive");
    if (sweep.max_ions_per_cell == 0) throw DomainError("sweep: max_ions_per_cell must be positive");
    if (irradiation.spot_ions.empty()) throw DomainError("irradiation: needs at least one spot");
    if (!(irradiation.spot_spacing_nm > 0.0)) throw DomainError("irradiation: spot_spacing_nm must be positive");
    if (irradiation.fluence_per_cm2 < 0.0) throw DomainError("irradiation: fluence must be >= 0");
    cavity.layout.validate();
    cavity.axis.validate();
    if (!(cavity.spacing_nm > 0.0)) throw DomainError("cavity: spacing_nm must be positive");
    protocol.policy.validate();
    if (protocol.trials < 1) throw DomainError("protocol: trials must be >= 1");
    if (protocol.eta && !(*protocol.eta >= 0.0 && *protocol.eta <= 1.0)) throw DomainError("protocol: eta must be in [0, 1]");
    if (yield.eta_override && !(*yield.eta_override >= 0.0 && *yield.eta_override <= 1.0))
        throw DomainError("yield: eta_override must be in [0, 1]");
    if (!(throughput_sites_per_s > 0.0)) throw DomainError("throughput_sites_per_s must be positive");
    if (pattern_placement_sigma_nm < 0.0) throw DomainError("pattern_placement_sigma_nm must be >= 0");
    (void)straggle_table();
    (void)yield_surface();
}

ordered_json config_to_json(const CampaignConfig& c) {
    ordered_json j;
    j["version"] = kConfigVersion;
    j["seed"] = c.seed;
    j["beam"] = {{"fwhm_nm", c.beam.fwhm_nm},
                 {"energy_kev", c.beam.energy_kev},
                 {"current_pa", c.beam.current_pa},
                 {"pointing_sigma_nm", optional_json(c.beam.pointing_sigma_nm)}};
    ordered_json entries = ordered_json::array();
    for (const auto& e : c.straggle.entries)
        entries.push_back({{"energy_kev", e.energy_kev},
                           {"lateral_sigma_nm", e.lateral_sigma_nm},
                           {"depth_mean_nm", e.depth_mean_nm},
                           {"depth_sigma_nm", e.depth_sigma_nm}});
    j["straggle"] = {{"file", c.straggle.file}, {"entries", entries}};
    j["yield"] = {{"file", c.yield.file},
                  {"eta_100kev", c.yield.eta_100kev},
                  {"energy_exponent", optional_json(c.yield.energy_exponent)},
                  {"dose_exponent", c.yield.dose_exponent},
                  {"eta_override", optional_json(c.yield.eta_override)},
                  {"irradiation_multiplier", c.yield.irradiation_multiplier},
                  {"yield_cap", c.yield.yield_cap},
                  {"activation_fluence_per_cm2", c.yield.activation_fluence_per_cm2}};
    const auto& p = c.population;
    j["population"] = {{"center_ghz", p.center_ghz},
                       {"inhomogeneous_fwhm_ghz", p.inhomogeneous_fwhm_ghz},
                       {"homogeneous_median_mhz", p.homogeneous_median_mhz},
                       {"homogeneous_shape", p.homogeneous_shape},
                       {"lifetime_ns", p.lifetime_ns},
                       {"brightness_kcps", p.brightness_kcps},
                       {"transition_c_only", p.transition_c_only}};
    const auto& im = c.imaging;
    j["imaging"] = {{"numerical_aperture", im.numerical_aperture},
                    {"wavelength_nm", im.wavelength_nm},
                    {"pixel_pitch_nm", im.pixel_pitch_nm},
                    {"dwell_ms", im.dwell_ms},
                    {"background_kcps", im.background_kcps},
                    {"margin_nm", im.margin_nm},
                    {"min_separation_nm", im.min_separation_nm},
                    {"threshold_sigmas", im.threshold_sigmas}};
    j["array"] = {{"pitch_nm", c.array.pitch_nm},
                  {"columns", c.array.columns},
                  {"rows", c.array.rows},
                  {"ions_per_site", c.array.ions_per_site},
                  {"dose_per_cm2", c.array.dose_per_cm2}};
    j["sweep"] = {{"energies_kev", c.sweep.energies_kev},
                  {"doses_per_cm2", c.sweep.doses_per_cm2},
                  {"region_um", c.sweep.region_um},
                  {"max_ions_per_cell", c.sweep.max_ions_per_cell}};
    j["irradiation"] = {{"spot_ions", c.irradiation.spot_ions},
                        {"spot_spacing_nm", c.irradiation.spot_spacing_nm},
                        {"fluence_per_cm2", c.irradiation.fluence_per_cm2},
                        {"dose_per_cm2", c.irradiation.dose_per_cm2}};
    const auto& cv = c.cavity;
    ordered_json maxima = ordered_json::array();
    for (const auto& m : cv.layout.mode_maxima_offsets) maxima.push_back({m.x, m.y});
    j["cavity"] = {
        {"count", cv.count},
        {"ions_per_maximum", cv.ions_per_maximum},
        {"energy_kev", cv.energy_kev},
        {"dose_per_cm2", cv.dose_per_cm2},
        {"spacing_nm", cv.spacing_nm},
        {"targeting_limit", cv.targeting_limit},
        {"layout",
         {{"lattice_constant_nm", cv.layout.lattice_constant_nm},
          {"hole_radius_nm", cv.layout.hole_radius_nm},
          {"half_columns", cv.layout.half_columns},
          {"half_rows", cv.layout.half_rows},
          {"mode_maxima_offsets_nm", maxima},
          {"raman_wavelength_nm", cv.layout.raman_wavelength_nm}}},
        {"axis", {{"start_nm", cv.axis.start_nm}, {"step_nm", cv.axis.step_nm}, {"bins", cv.axis.bins}}},
        {"channels",
         {{"raman_psf", psf_json(cv.channels.raman_psf)},
          {"zpl_psf", psf_json(cv.channels.zpl_psf)},
          {"raman_rate_kcps", cv.channels.raman_rate_kcps},
          {"raman_fwhm_nm", cv.channels.raman_fwhm_nm},
          {"zpl_wavelength_nm", cv.channels.zpl_wavelength_nm},
          {"zpl_fwhm_nm", cv.channels.zpl_fwhm_nm},
          {"background_kcps_per_nm", cv.channels.background_kcps_per_nm}}}};
    j["protocol"] = {{"ions_per_cycle", c.protocol.policy.ions_per_cycle},
                     {"target_emitters", c.protocol.policy.target_emitters},
                     {"max_cycles", c.protocol.policy.max_cycles},
                     {"eta", optional_json(c.protocol.eta)},
                     {"trials", c.protocol.trials}};
    j["throughput_sites_per_s"] = c.throughput_sites_per_s;
    j["pattern_placement_sigma_nm"] = c.pattern_placement_sigma_nm;
    return j;
}

CampaignConfig config_from_json(const json& j, const std::string& source) {
    CampaignConfig c;
    Fields root(j, "", source);
    int version = kConfigVersion;
    root.get("version", version);
    if (version > kConfigVersion)
        throw ParseError(source, "config version " + std::to_string(version) + " is newer than supported (" +
                                     std::to_string(kConfigVersion) + ")");
    root.get("seed", c.seed);
    {
        auto f = root.sub("beam");
        f.get("fwhm_nm", c.beam.fwhm_nm);
        f.get("energy_kev", c.beam.energy_kev);
        f.get("current_pa", c.beam.current_pa);
        f.get("pointing_sigma_nm", c.beam.pointing_sigma_nm);
        f.done();
    }
    {
        auto f = root.sub("straggle");
        f.get("file", c.straggle.file);
        if (const json* e = f.raw("entries")) {
            if (!e->is_array()) throw ParseError(source, "'straggle.entries': expected an array");
            for (std::size_t k = 0; k < e->size(); ++k) {
                Fields g((*e)[k], "straggle.entries[" + std::to_string(k) + "].", source);
                StraggleEntry s;
                g.get("energy_kev", s.energy_kev);
                g.get("lateral_sigma_nm", s.lateral_sigma_nm);
                g.get("depth_mean_nm", s.depth_mean_nm);
                g.get("depth_sigma_nm", s.depth_sigma_nm);
                g.done();
                c.straggle.entries.push_back(s);
            }
        }
        f.done();
    }
    {
        auto f = root.sub("yield");
        auto& y = c.yield;
        f.get("file", y.file);
        f.get("eta_100kev", y.eta_100kev);
        f.get("energy_exponent", y.energy_exponent);
        f.get("dose_exponent", y.dose_exponent);
        f.get("eta_override", y.eta_override);
        f.get("irradiation_multiplier", y.irradiation_multiplier);
        f.get("yield_cap", y.yield_cap);
        f.get("activation_fluence_per_cm2", y.activation_fluence_per_cm2);
        f.done();
    }
    {
        auto f = root.sub("population");
        auto& p = c.population;
        f.get("center_ghz", p.center_ghz);
        f.get("inhomogeneous_fwhm_ghz", p.inhomogeneous_fwhm_ghz);
        f.get("homogeneous_median_mhz", p.homogeneous_median_mhz);
        f.get("homogeneous_shape", p.homogeneous_shape);
        f.get("lifetime_ns", p.lifetime_ns);
        f.get("brightness_kcps", p.brightness_kcps);
        f.get("transition_c_only", p.transition_c_only);
        f.done();
    }
    {
        auto f = root.sub("imaging");
        auto& im = c.imaging;
        f.get("numerical_aperture", im.numerical_aperture);
        f.get("wavelength_nm", im.wavelength_nm);
        f.get("pixel_pitch_nm", im.pixel_pitch_nm);
        f.get("dwell_ms", im.dwell_ms);
        f.get("background_kcps", im.background_kcps);
        f.get("margin_nm", im.margin_nm);
        f.get("min_separation_nm", im.min_separation_nm);
        f.get("threshold_sigmas", im.threshold_sigmas);
        f.done();
    }
    {
        auto f = root.sub("array");
        f.get("pitch_nm", c.array.pitch_nm);
        f.get("columns", c.array.columns);
        f.get("rows", c.array.rows);
        f.get("ions_per_site", c.array.ions_per_site);
        f.get("dose_per_cm2", c.array.dose_per_cm2);
        f.done();
    }
    {
        auto f = root.sub("sweep");
        f.get("energies_kev", c.sweep.energies_kev);
        f.get("doses_per_cm2", c.sweep.doses_per_cm2);
        f.get("region_um", c.sweep.region_um);
        f.get("max_ions_per_cell", c.sweep.max_ions_per_cell);
        f.done();
    }
    {
        auto f = root.sub("irradiation");
        f.get("spot_ions", c.irradiation.spot_ions);
        f.get("spot_spacing_nm", c.irradiation.spot_spacing_nm);
        f.get("fluence_per_cm2", c.irradiation.fluence_per_cm2);
        f.get("dose_per_cm2", c.irradiation.dose_per_cm2);
        f.done();
    }
    {
        auto f = root.sub("cavity");
        auto& cv = c.cavity;
        f.get("count", cv.count);
        f.get("ions_per_maximum", cv.ions_per_maximum);
        f.get("energy_kev", cv.energy_kev);
        f.get("dose_per_cm2", cv.dose_per_cm2);
        f.get("spacing_nm", cv.spacing_nm);
        f.get("targeting_limit", cv.targeting_limit);
        {
            auto g = f.sub("layout");
            g.get("lattice_constant_nm", cv.layout.lattice_constant_nm);
            g.get("hole_radius_nm", cv.layout.hole_radius_nm);
            g.get("half_columns", cv.layout.half_columns);
            g.get("half_rows", cv.layout.half_rows);
            std::optional<std::vector<std::array<double, 2>>> maxima;
            g.get("mode_maxima_offsets_nm", maxima);
            if (maxima) {
                cv.layout.mode_maxima_offsets.clear();
                for (const auto& m : *maxima) cv.layout.mode_maxima_offsets.push_back({m[0], m[1]});
            }
            g.get("raman_wavelength_nm", cv.layout.raman_wavelength_nm);
            g.done();
        }
        {
            auto g = f.sub("axis");
            g.get("start_nm", cv.axis.start_nm);
            g.get("step_nm", cv.axis.step_nm);
            g.get("bins", cv.axis.bins);
            g.done();
        }
        {
            auto g = f.sub("channels");
            auto& ch = cv.channels;
            read_psf(g.sub("raman_psf"), ch.raman_psf);
            read_psf(g.sub("zpl_psf"), ch.zpl_psf);
            g.get("raman_rate_kcps", ch.raman_rate_kcps);
            g.get("raman_fwhm_nm", ch.raman_fwhm_nm);
            g.get("zpl_wavelength_nm", ch.zpl_wavelength_nm);
            g.get("zpl_fwhm_nm", ch.zpl_fwhm_nm);
            g.get("background_kcps_per_nm", ch.background_kcps_per_nm);
            g.done();
        }
        f.done();
    }
    {
        auto f = root.sub("protocol");
        f.get("ions_per_cycle", c.protocol.policy.ions_per_cycle);
        f.get("target_emitters", c.protocol.policy.target_emitters);
        f.get("max_cycles", c.protocol.policy.max_cycles);
        f.get("eta", c.protocol.eta);
        f.get("trials", c.protocol.trials);
        f.done();
    }
    root.get("throughput_sites_per_s", c.throughput_sites_per_s);
    root.get("pattern_placement_sigma_nm", c.pattern_placement_sigma_nm);
    root.done();
    return c;
}

CampaignConfig parse_config(const std::string& text, const std::string& source, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(source, e.what());
    }
    CampaignConfig c = config_from_json(j, source);
    c.base_dir = base_dir;
    try {
        c.validate();
    } catch (const DomainError& e) {
        throw ParseError(source, e.what());
    } catch (const RangeError& e) {
        throw ParseError(source, e.what());
    }
    return c;
}

CampaignConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ParseError(path.string(), "config file not found");
    const std::string text = formats::read_text_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string(), e.what());
    }
    CampaignConfig c = config_from_json(j, path.string());
    c.base_dir = path.parent_path();
    try {
        c.validate();
    } catch (const DomainError& e) {
        throw ParseError(path.string(), e.what());
    } catch (const RangeError& e) {
        throw ParseError(path.string(), e.what());
    }
    return c;
}

void apply_override(ordered_json& j, const std::string& dotted_path, const std::string& value) {
    if (dotted_path.empty()) throw ParseError("override", "empty key");
    ordered_json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = dotted_path.find('.', start);
        const std::string key = dotted_path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(key))
            throw ParseError("override '" + dotted_path + "'", "unknown config key");
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    ordered_json parsed = ordered_json::parse(value, nullptr, false);
    *node = parsed.is_discarded() ? ordered_json(value) : parsed;
}

std::string config_digest(const CampaignConfig& config) { return formats::sha256_hex(config_to_json(config).dump()); }

}  // namespace fibsim
