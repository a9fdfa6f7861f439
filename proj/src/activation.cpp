#include "fibsim/activation.hpp"

#include "fibsim/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace fibsim {

namespace {

bool strictly_increasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] > v[i - 1])) return false;
    return true;
}

// Segment index and (possibly out-of-[0,1]) fraction for linear inter/extrapolation.
std::pair<std::size_t, double> locate(const std::vector<double>& grid, double value) {
    if (grid.size() == 1) return {0, 0.0};
    auto it = std::upper_bound(grid.begin(), grid.end(), value);
    std::size_t hi = static_cast<std::size_t>(it - grid.begin());
    hi = std::clamp<std::size_t>(hi, 1, grid.size() - 1);
    const std::size_t lo = hi - 1;
    return {lo, (value - grid[lo]) / (grid[hi] - grid[lo])};
}

}  // namespace

void YieldSurface::validate() const {
    if (energies_kev.empty() || log10_doses.empty()) throw DomainError("yield surface grid is empty");
    if (eta.size() != energies_kev.size() * log10_doses.size()) throw DomainError("yield surface: eta size mismatch");
    if (!strictly_increasing(energies_kev) || !strictly_increasing(log10_doses)) {
        throw DomainError("yield surface: grid axes must be strictly increasing");
    }
    for (double v : eta)
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("yield surface: eta must lie in [0, 1]");
    for (std::size_t i = 0; i < energies_kev.size(); ++i) {
        for (std::size_t j = 0; j < log10_doses.size(); ++j) {
            if (i > 0 && at(i, j) < at(i - 1, j)) throw DomainError("yield surface: eta must not decrease with energy");
            if (j > 0 && at(i, j) > at(i, j - 1)) throw DomainError("yield surface: eta must not increase with dose");
        }
    }
    if (!(irradiation_multiplier >= 1.0)) throw DomainError("irradiation multiplier must be >= 1");
    if (!(yield_cap > 0.0 && yield_cap <= 1.0)) throw DomainError("yield cap must lie in (0, 1]");
    if (!(activation_fluence_per_cm2 >= 0.0)) throw DomainError("activation fluence must be >= 0");
}

double YieldSurface::default_energy_exponent() { return std::log(29.0 / 30.0) / std::log(0.9); }

YieldSurface YieldSurface::power_law(double eta_100kev, double energy_exponent, double dose_exponent) {
    if (!(eta_100kev >= 0.0 && eta_100kev <= 1.0)) throw DomainError("eta at 100 keV must lie in [0, 1]");
    if (!(energy_exponent >= 0.0 && dose_exponent >= 0.0)) {
        throw DomainError("power-law exponents must be >= 0 to keep the surface monotone");
    }
    YieldSurface s;
    for (int e = 10; e <= 100; e += 10) s.energies_kev.push_back(e);
    for (int k = 0; k <= 8; ++k) s.log10_doses.push_back(12.0 + 0.25 * k);
    for (double e : s.energies_kev) {
        for (double ld : s.log10_doses) {
            const double v = eta_100kev * std::pow(e / 100.0, energy_exponent) * std::pow(10.0, -dose_exponent * (ld - 12.0));
            s.eta.push_back(std::clamp(v, 0.0, 1.0));
        }
    }
    s.validate();
    return s;
}

YieldSurface YieldSurface::defaults() { return power_law(0.025, default_energy_exponent(), 0.3); }

YieldSurface YieldSurface::read_csv(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t line_no = 0;
    auto location = [&] { return source + ":" + std::to_string(line_no); };
    bool header = false;
    std::map<std::pair<double, double>, double> nodes;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != "energy_keV,dose_cm2,eta") throw ParseError(location(), "expected header energy_keV,dose_cm2,eta");
            header = true;
            continue;
        }
        std::istringstream fields(line);
        double e = 0, d = 0, v = 0;
        char c1 = 0, c2 = 0;
        if (!(fields >> e >> c1 >> d >> c2 >> v) || c1 != ',' || c2 != ',') {
            throw ParseError(location(), "expected three numeric fields");
        }
        if (!(d > 0.0)) throw ParseError(location(), "dose must be positive");
        if (!nodes.emplace(std::pair{e, std::log10(d)}, v).second) throw ParseError(location(), "duplicate grid node");
    }
    if (!header) throw ParseError(source, "missing header");
    YieldSurface s;
    for (const auto& [key, v] : nodes) {
        if (s.energies_kev.empty() || s.energies_kev.back() != key.first) s.energies_kev.push_back(key.first);
    }
    for (const auto& [key, v] : nodes) {
        if (key.first != s.energies_kev.front()) break;
        s.log10_doses.push_back(key.second);
    }
    if (nodes.size() != s.energies_kev.size() * s.log10_doses.size()) {
        throw ParseError(source, "yield grid is not a complete rectangle");
    }
    for (const auto& [key, v] : nodes) s.eta.push_back(v);
    for (std::size_t i = 0; i < s.energies_kev.size(); ++i) {
        for (std::size_t j = 0; j < s.log10_doses.size(); ++j) {
            if (!nodes.contains({s.energies_kev[i], s.log10_doses[j]})) {
                throw ParseError(source, "yield grid is not a complete rectangle");
            }
        }
    }
    try {
        s.validate();
    } catch (const DomainError& e) {
        throw ParseError(source, e.what());
    }
    return s;
}

YieldSurface YieldSurface::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, "cannot open yield grid");
    return read_csv(in, path);
}

void YieldSurface::write_csv(std::ostream& out) const {
    out << "energy_keV,dose_cm2,eta\n" << std::setprecision(17);
    for (std::size_t i = 0; i < energies_kev.size(); ++i)
        for (std::size_t j = 0; j < log10_doses.size(); ++j)
            out << energies_kev[i] << ',' << std::pow(10.0, log10_doses[j]) << ',' << at(i, j) << '\n';
}

YieldLookup yield_lookup(const YieldSurface& surface, double energy_kev, double dose_per_cm2) {
    if (!(dose_per_cm2 > 0.0)) throw DomainError("yield_lookup: dose must be positive");
    const auto& es = surface.energies_kev;
    const auto& ds = surface.log10_doses;
    const double e_lo = es.front(), e_hi = es.back();
    const double d_lo = std::pow(10.0, ds.front()), d_hi = std::pow(10.0, ds.back());
    if (energy_kev < 0.5 * e_lo || energy_kev > 2.0 * e_hi || dose_per_cm2 < 0.5 * d_lo || dose_per_cm2 > 2.0 * d_hi) {
        std::ostringstream msg;
        msg << "yield_lookup: (" << energy_kev << " keV, " << dose_per_cm2 << " cm^-2) beyond the extrapolation limit of grid ["
            << e_lo << ", " << e_hi << "] keV x [" << d_lo << ", " << d_hi << "] cm^-2";
        throw RangeError(msg.str());
    }
    const double log_dose = std::log10(dose_per_cm2);
    YieldLookup out;
    out.extrapolated = energy_kev < e_lo || energy_kev > e_hi || log_dose < ds.front() || log_dose > ds.back();
    auto [i, u] = locate(es, energy_kev);
    auto [j, v] = locate(ds, log_dose);
    const std::size_t i1 = std::min(i + 1, es.size() - 1);
    const std::size_t j1 = std::min(j + 1, ds.size() - 1);
    const double value = (1 - u) * (1 - v) * surface.at(i, j) + u * (1 - v) * surface.at(i1, j) +
                         (1 - u) * v * surface.at(i, j1) + u * v * surface.at(i1, j1);
    out.eta = std::clamp(value, 0.0, 1.0);
    return out;
}

double apply_irradiation(double eta, double fluence_per_cm2, const YieldSurface& surface) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("apply_irradiation: eta must lie in [0, 1]");
    if (!(fluence_per_cm2 >= 0.0)) throw DomainError("apply_irradiation: fluence must be >= 0");
    if (fluence_per_cm2 > 0.0 && fluence_per_cm2 >= surface.activation_fluence_per_cm2) {
        return std::min(eta * surface.irradiation_multiplier, surface.yield_cap);
    }
    return eta;
}

FineStructure FineStructure::four_line_template() {
    // Lines A..D in descending frequency: A-B and C-D split by the ground
    // state (48 GHz), B-C by excited minus ground (259 - 48 GHz).
    return {{153.5, 105.5, -105.5, -153.5}, {0.2, 0.3, 0.3, 0.2}};
}

FineStructure FineStructure::transition_c_only() { return {{153.5, 105.5, -105.5, -153.5}, {0.0, 0.0, 1.0, 0.0}}; }

SpectralPopulation SpectralPopulation::with_mean_linewidth(double mean_mhz, double shape) {
    SpectralPopulation pop;
    pop.homogeneous_shape = shape;
    pop.homogeneous_median_mhz = mean_mhz * std::exp(-0.5 * shape * shape);
    return pop;
}

void SpectralPopulation::validate() const {
    if (!(center_ghz > 0.0 && inhomogeneous_fwhm_ghz > 0.0 && homogeneous_median_mhz > 0.0 && homogeneous_shape >= 0.0)) {
        throw DomainError("spectral population: widths must be positive");
    }
    if (!(lifetime_ns > 0.0)) throw DomainError("spectral population: lifetime must be positive");
    if (!(brightness_kcps > 0.0)) throw DomainError("spectral population: brightness must be positive");
}

std::uint64_t sample_emitter_count(std::uint64_t n_ions, double eta, Engine& rng) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("sample_emitter_count: eta must lie in [0, 1]");
    const double mean = static_cast<double>(n_ions) * eta;
    if (mean == 0.0) return 0;
    std::poisson_distribution<std::uint64_t> dist(mean);
    return dist(rng);
}

std::uint64_t sample_emitter_count(std::uint64_t n_ions, double eta, const RandomSeed& seed) {
    Engine rng = seed.engine();
    return sample_emitter_count(n_ions, eta, rng);
}

std::vector<Emitter> sample_emitters(std::span<const Point3D> ions, double eta, const SpectralPopulation& pop,
                                     const RandomSeed& seed) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("sample_emitters: eta must lie in [0, 1]");
    pop.validate();
    Engine rng = seed.engine();
    std::bernoulli_distribution activate(eta);
    std::normal_distribution<double> center(pop.center_ghz, pop.inhomogeneous_fwhm_ghz / kFwhmPerSigma);
    std::lognormal_distribution<double> width(std::log(pop.homogeneous_median_mhz), pop.homogeneous_shape);
    const double floor_mhz = pop.lifetime_limit_mhz();
    const FineStructure fs =
        pop.transition_c_only ? FineStructure::transition_c_only() : FineStructure::four_line_template();

    std::vector<Emitter> out;
    for (std::size_t i = 0; i < ions.size(); ++i) {
        if (!activate(rng)) continue;
        Emitter e;
        e.position = ions[i];
        e.zpl_center_ghz = center(rng);
        e.homogeneous_fwhm_mhz = std::max(floor_mhz, width(rng));
        e.brightness_kcps = pop.brightness_kcps;
        e.fine_structure = fs;
        e.ion_index = i;
        out.push_back(e);
    }
    return out;
}

}  // namespace fibsim
