#pragma once

#include "fibsim/foundation.hpp"
#include "fibsim/random.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fibsim {

struct BeamSpec {
    double fwhm_nm = 40.0;
    double energy_kev = 100.0;
    double current_pa = 0.5;
    /// Per-shot pointing error (one offset shared by every ion of a shot). Disabled when empty.
    std::optional<double> pointing_sigma_nm;

    /// Throws DomainError unless fwhm >= 0, 10 <= energy <= 200 keV, current > 0.
    void validate() const;
};

struct StraggleEntry {
    double energy_kev = 0.0;
    double lateral_sigma_nm = 0.0;
    double depth_mean_nm = 0.0;
    double depth_sigma_nm = 0.0;
};

/// Energy-indexed straggle with linear interpolation and no extrapolation.
class StraggleTable {
public:
    explicit StraggleTable(std::vector<StraggleEntry> entries);

    /// Interpolated entry; RangeError outside [min_energy, max_energy].
    StraggleEntry at(double energy_kev) const;

    const std::vector<StraggleEntry>& entries() const { return entries_; }
    double min_energy() const { return entries_.front().energy_kev; }
    double max_energy() const { return entries_.back().energy_kev; }

    /// CSV with header `energy_keV,lateral_sigma_nm,depth_mean_nm,depth_sigma_nm`.
    static StraggleTable read_csv(std::istream& in, const std::string& source = "<stream>");
    static StraggleTable load_csv(const std::string& path);
    void write_csv(std::ostream& out) const;

    /// Shipped defaults. Anchors: 19 nm lateral sigma at 100 keV and 106 nm
    /// mean depth at 160 keV; the remaining entries are placeholders meant to
    /// be replaced by a transport calculation for the user's ion/target pair.
    static StraggleTable defaults();

private:
    std::vector<StraggleEntry> entries_;
};

struct ImplantShot {
    Point2D target;
    std::uint64_t requested_ions = 0;
    double energy_kev = 100.0;
};

/// Blanking pulse length in microseconds for n ions at the given beam current (pA).
double plan_pulse(double current_pa, std::uint64_t n_ions);

/// Expected ions for an areal dose (cm^-2) over an area in um^2.
double dose_to_ions(double dose_per_cm2, double area_um2);
double ions_to_dose(double ions, double area_um2);

/// Quadrature sum of the beam sigma and the lateral straggle sigma.
double expected_lateral_sigma(const BeamSpec& beam, double straggle_sigma_nm);

/// Ion rest positions for one counted shot.
std::vector<Point3D> sample_ion_positions(const ImplantShot& shot, const BeamSpec& beam,
                                          const StraggleTable& table, const RandomSeed& seed);

/// Ions spread uniformly over an axis-aligned rectangle (raster area exposure), then straggled.
std::vector<Point3D> sample_area_exposure(Point2D center, double width_nm, double height_nm,
                                          std::uint64_t n_ions, double energy_kev, const BeamSpec& beam,
                                          const StraggleTable& table, const RandomSeed& seed);

}  // namespace fibsim
