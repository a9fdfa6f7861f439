#pragma once

#include "fibsim/activation.hpp"
#include "fibsim/imaging.hpp"
#include "fibsim/implantation.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fibsim {

/// Straggle table from a CSV file, inline entries, or the shipped defaults (both empty).
struct StraggleRef {
    std::string file;
    std::vector<StraggleEntry> entries;
};

/// Yield surface from a CSV grid file or the power-law model. eta_override, when
/// set, replaces the lookup for campaigns that need a fixed yield.
struct YieldRef {
    std::string file;
    double eta_100kev = 0.025;
    std::optional<double> energy_exponent;  // default: YieldSurface::default_energy_exponent()
    double dose_exponent = 0.3;
    std::optional<double> eta_override;
    double irradiation_multiplier = 10.0;
    double yield_cap = 1.0;
    double activation_fluence_per_cm2 = 1e17;
};

struct ImagingConfig {
    double numerical_aperture = 1.3;
    double wavelength_nm = 737.0;
    double pixel_pitch_nm = 100.0;
    double dwell_ms = 1.0;
    double background_kcps = 1.0;
    double margin_nm = 800.0;  // field extends this far beyond the implanted region
    double min_separation_nm = 300.0;
    double threshold_sigmas = 6.0;

    PsfSpec psf() const { return {numerical_aperture, wavelength_nm}; }
};

struct ArrayPlan {
    double pitch_nm = 2140.0;
    std::size_t columns = 14;
    std::size_t rows = 14;
    std::uint64_t ions_per_site = 40;
    double dose_per_cm2 = 1e12;  // yield-surface lookup dose
};

struct SweepPlan {
    std::vector<double> energies_kev{10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
    std::vector<double> doses_per_cm2{1e12, 3.16227766e12, 1e13, 3.16227766e13, 1e14};
    double region_um = 10.0;
    std::uint64_t max_ions_per_cell = 10000;  // larger cells shrink the region at constant dose
};

struct IrradiationPlan {
    std::vector<std::uint64_t> spot_ions{500, 2000, 5000, 10000};
    double spot_spacing_nm = 3000.0;
    double fluence_per_cm2 = 1e17;
    double dose_per_cm2 = 1e12;
};

struct CavityPlan {
    std::size_t count = 100;
    std::uint64_t ions_per_maximum = 20;
    double energy_kev = 160.0;
    double dose_per_cm2 = 1e12;
    double spacing_nm = 10000.0;
    CavityLayout layout;
    std::size_t targeting_limit = 20;
    SpectralAxis axis{560.0, 2.0, 100};
    CubeChannels channels;
};

struct ProtocolPolicy {
    double ions_per_cycle = 20.0;
    std::uint64_t target_emitters = 1;
    std::uint64_t max_cycles = 100;

    void validate() const;
};

struct ProtocolPlan {
    ProtocolPolicy policy;
    std::optional<double> eta;  // default: yield lookup at the beam energy
    std::uint64_t trials = 100000;
};

struct CampaignConfig {
    std::uint64_t seed = 1;
    BeamSpec beam;
    StraggleRef straggle;
    YieldRef yield;
    SpectralPopulation population;
    ImagingConfig imaging;
    ArrayPlan array;
    SweepPlan sweep;
    IrradiationPlan irradiation;
    CavityPlan cavity;
    ProtocolPlan protocol;
    double throughput_sites_per_s = 2e4;
    /// Experimental: Gaussian placement error of each pattern site (lithography). 0 disables.
    double pattern_placement_sigma_nm = 0.0;

    /// Directory relative file references resolve against; not serialized.
    std::filesystem::path base_dir;

    StraggleTable straggle_table() const;
    YieldSurface yield_surface() const;
    void validate() const;
};

nlohmann::ordered_json config_to_json(const CampaignConfig& config);
/// Missing keys take defaults; unknown keys are rejected.
CampaignConfig config_from_json(const nlohmann::json& j, const std::string& source = "<config>");
/// Relative file references resolve against `base_dir`.
CampaignConfig parse_config(const std::string& text, const std::string& source = "<config>",
                            const std::filesystem::path& base_dir = {});
CampaignConfig load_config(const std::filesystem::path& path);

/// Sets a dotted path (e.g. "array.pitch_nm") to `value`, parsed as JSON when
/// possible and as a string otherwise. The key must already exist.
void apply_override(nlohmann::ordered_json& j, const std::string& dotted_path, const std::string& value);

/// SHA-256 (hex) of the canonical JSON form.
std::string config_digest(const CampaignConfig& config);

}  // namespace fibsim
