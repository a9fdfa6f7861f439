#include "fibsim/implantation.hpp"

#include "fibsim/error.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fibsim {

void BeamSpec::validate() const {
    if (!(fwhm_nm >= 0.0)) throw DomainError("beam fwhm must be >= 0 nm");
    if (!(energy_kev >= 10.0 && energy_kev <= 200.0)) {
        throw DomainError("beam energy must lie in the machine range [10, 200] keV");
    }
    if (!(current_pa > 0.0)) throw DomainError("beam current must be positive");
    if (pointing_sigma_nm && !(*pointing_sigma_nm >= 0.0)) {
        throw DomainError("beam pointing sigma must be >= 0 nm");
    }
}

StraggleTable::StraggleTable(std::vector<StraggleEntry> entries) : entries_(std::move(entries)) {
    if (entries_.empty()) throw DomainError("straggle table is empty");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& e = entries_[i];
        if (!(e.lateral_sigma_nm >= 0.0 && e.depth_sigma_nm >= 0.0 && e.depth_mean_nm >= 0.0)) {
            throw DomainError("straggle table: sigmas and depth must be >= 0");
        }
        if (i > 0 && !(e.energy_kev > entries_[i - 1].energy_kev)) {
            throw DomainError("straggle table: energies must be strictly increasing");
        }
    }
}

StraggleEntry StraggleTable::at(double energy_kev) const {
    if (!(energy_kev >= min_energy() && energy_kev <= max_energy())) {
        std::ostringstream msg;
        msg << "energy " << energy_kev << " keV outside straggle table range [" << min_energy() << ", "
            << max_energy() << "] keV";
        throw RangeError(msg.str());
    }
    auto hi = std::lower_bound(entries_.begin(), entries_.end(), energy_kev,
                               [](const StraggleEntry& e, double v) { return e.energy_kev < v; });
    if (hi->energy_kev == energy_kev || hi == entries_.begin()) return *hi;
    auto lo = std::prev(hi);
    const double t = (energy_kev - lo->energy_kev) / (hi->energy_kev - lo->energy_kev);
    auto lerp = [t](double a, double b) { return a + t * (b - a); };
    return {energy_kev, lerp(lo->lateral_sigma_nm, hi->lateral_sigma_nm), lerp(lo->depth_mean_nm, hi->depth_mean_nm),
            lerp(lo->depth_sigma_nm, hi->depth_sigma_nm)};
}

StraggleTable StraggleTable::read_csv(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t line_no = 0;
    auto location = [&] { return source + ":" + std::to_string(line_no); };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        break;
    }
    if (line != "energy_keV,lateral_sigma_nm,depth_mean_nm,depth_sigma_nm") {
        throw ParseError(location(), "expected header energy_keV,lateral_sigma_nm,depth_mean_nm,depth_sigma_nm");
    }
    std::vector<StraggleEntry> entries;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        StraggleEntry e;
        char c1 = 0, c2 = 0, c3 = 0;
        if (!(fields >> e.energy_kev >> c1 >> e.lateral_sigma_nm >> c2 >> e.depth_mean_nm >> c3 >> e.depth_sigma_nm) ||
            c1 != ',' || c2 != ',' || c3 != ',') {
            throw ParseError(location(), "expected four numeric fields");
        }
        entries.push_back(e);
    }
    try {
        return StraggleTable(std::move(entries));
    } catch (const DomainError& e) {
        throw ParseError(source, e.what());
    }
}

StraggleTable StraggleTable::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, "cannot open straggle table");
    return read_csv(in, path);
}

void StraggleTable::write_csv(std::ostream& out) const {
    out << "energy_keV,lateral_sigma_nm,depth_mean_nm,depth_sigma_nm\n" << std::setprecision(17);
    for (const auto& e : entries_) {
        out << e.energy_kev << ',' << e.lateral_sigma_nm << ',' << e.depth_mean_nm << ',' << e.depth_sigma_nm << '\n';
    }
}

StraggleTable StraggleTable::defaults() {
    return StraggleTable({
        {10.0, 4.0, 11.0, 5.0},
        {50.0, 11.0, 43.0, 15.0},
        {100.0, 19.0, 75.0, 22.0},
        {160.0, 25.0, 106.0, 28.0},
        {200.0, 28.0, 125.0, 31.0},
    });
}

double plan_pulse(double current_pa, std::uint64_t n_ions) {
    if (!(current_pa > 0.0)) throw DomainError("plan_pulse: beam current must be positive");
    const double seconds = static_cast<double>(n_ions) * kElementaryChargeC / (current_pa * 1e-12);
    return seconds * 1e6;
}

double dose_to_ions(double dose_per_cm2, double area_um2) {
    if (!(dose_per_cm2 >= 0.0)) throw DomainError("dose_to_ions: dose must be >= 0");
    if (!(area_um2 > 0.0)) throw DomainError("dose_to_ions: area must be positive");
    return dose_per_cm2 * area_um2 * 1e-8;
}

double ions_to_dose(double ions, double area_um2) {
    if (!(ions >= 0.0)) throw DomainError("ions_to_dose: ion count must be >= 0");
    if (!(area_um2 > 0.0)) throw DomainError("ions_to_dose: area must be positive");
    return ions / (area_um2 * 1e-8);
}

double expected_lateral_sigma(const BeamSpec& beam, double straggle_sigma_nm) {
    if (!(beam.fwhm_nm >= 0.0) || !(straggle_sigma_nm >= 0.0)) {
        throw DomainError("expected_lateral_sigma: widths must be >= 0");
    }
    const double beam_sigma = beam.fwhm_nm / kFwhmPerSigma;
    return std::hypot(beam_sigma, straggle_sigma_nm);
}

namespace {

// Gaussian draw that returns the mean exactly when sigma is zero.
double gaussian(Engine& rng, double mean, double sigma) {
    if (sigma == 0.0) return mean;
    std::normal_distribution<double> dist(mean, sigma);
    return dist(rng);
}

Point3D straggle_one(Engine& rng, Point2D aim, double lateral_sigma, const StraggleEntry& entry) {
    const double x = gaussian(rng, aim.x, lateral_sigma);
    const double y = gaussian(rng, aim.y, lateral_sigma);
    // Ions cannot come to rest above the surface.
    const double z = std::max(0.0, gaussian(rng, entry.depth_mean_nm, entry.depth_sigma_nm));
    return {x, y, z};
}

}  // namespace

std::vector<Point3D> sample_ion_positions(const ImplantShot& shot, const BeamSpec& beam,
                                          const StraggleTable& table, const RandomSeed& seed) {
    const StraggleEntry entry = table.at(shot.energy_kev);
    const double sigma = expected_lateral_sigma(beam, entry.lateral_sigma_nm);
    Engine rng = seed.engine();
    Point2D aim = shot.target;
    if (beam.pointing_sigma_nm && *beam.pointing_sigma_nm > 0.0) {
        aim.x = gaussian(rng, aim.x, *beam.pointing_sigma_nm);
        aim.y = gaussian(rng, aim.y, *beam.pointing_sigma_nm);
    }
    std::vector<Point3D> ions;
    ions.reserve(shot.requested_ions);
    for (std::uint64_t i = 0; i < shot.requested_ions; ++i) ions.push_back(straggle_one(rng, aim, sigma, entry));
    return ions;
}

std::vector<Point3D> sample_area_exposure(Point2D center, double width_nm, double height_nm,
                                          std::uint64_t n_ions, double energy_kev, const BeamSpec& beam,
                                          const StraggleTable& table, const RandomSeed& seed) {
    if (!(width_nm > 0.0 && height_nm > 0.0)) throw DomainError("area exposure needs a positive extent");
    const StraggleEntry entry = table.at(energy_kev);
    const double sigma = expected_lateral_sigma(beam, entry.lateral_sigma_nm);
    Engine rng = seed.engine();
    std::uniform_real_distribution<double> ux(center.x - 0.5 * width_nm, center.x + 0.5 * width_nm);
    std::uniform_real_distribution<double> uy(center.y - 0.5 * height_nm, center.y + 0.5 * height_nm);
    std::vector<Point3D> ions;
    ions.reserve(n_ions);
    for (std::uint64_t i = 0; i < n_ions; ++i) {
        const Point2D aim{ux(rng), uy(rng)};
        ions.push_back(straggle_one(rng, aim, sigma, entry));
    }
    return ions;
}

}  // namespace fibsim
