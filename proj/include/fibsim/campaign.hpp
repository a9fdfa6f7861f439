#pragma once

#include "fibsim/config.hpp"
#include "fibsim/report.hpp"

#include <cstdint>
#include <vector>

namespace fibsim {

struct RunOptions {
    unsigned jobs = 1;
};

/// Seconds to implant n_sites at the given rate.
double throughput_estimate(double n_sites, double sites_per_s);

/// Square array: implant, activate, render the whole field, then localize,
/// keep single emitters, register the lattice and fit the radial spread.
CampaignReport run_array_campaign(const CampaignConfig& config, const RunOptions& run = {});

/// Area exposures over the (energy, dose) grid with yield estimated from the integrated image intensity.
CampaignReport run_sweep_campaign(const CampaignConfig& config, const RunOptions& run = {});

/// Counted spots imaged before and after electron irradiation.
CampaignReport run_irradiation_comparison(const CampaignConfig& config, const RunOptions& run = {});

/// Implantation into L3 cavity mode maxima: emitter-count statistics for every cavity and
/// spectral-cube targeting for the first `targeting_limit` single-emitter cavities.
CampaignReport run_cavity_campaign(const CampaignConfig& config, const RunOptions& run = {});

struct ProtocolStats {
    double lambda_per_cycle = 0.0;
    std::uint64_t trials = 0;
    double mean_cycles = 0.0;
    double success_fraction = 0.0;          // reached the target before max_cycles
    double exact_given_halted = 0.0;        // P(final == target | success)
    double overshoot_given_halted = 0.0;    // P(final > target | success)
    std::vector<std::uint64_t> final_count_histogram;  // index = final emitter count
    std::vector<std::uint64_t> cycle_histogram;        // index = cycles used
};

/// Repeats Poisson(ions_per_cycle * eta) cycles until the cumulative emitter count reaches the target.
ProtocolStats run_conditional_protocol(const ProtocolPolicy& policy, double eta, std::uint64_t seed,
                                       std::uint64_t trials, const RunOptions& run = {});
CampaignReport run_protocol_campaign(const CampaignConfig& config, const RunOptions& run = {});

enum class CampaignKind { Array, Sweep, Irradiation, Cavity, Protocol };
CampaignKind parse_campaign_kind(const std::string& name);
CampaignReport run_campaign(CampaignKind kind, const CampaignConfig& config, const RunOptions& run = {});

}  // namespace fibsim
