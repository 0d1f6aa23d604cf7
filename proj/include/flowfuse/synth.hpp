#pragma once

// Synthetic two-platform trip traces with a known, tunable relationship.
//
// Two latent processes drive demand out of every origin zone i, each a
// city-wide factor (variance share `common`) plus a zone-specific part:
//   level(t, i)  slow unit-variance AR(1) with coefficient `persistence`
//   shock(t, i)  white noise
// The auxiliary platform sees rho-correlated copies (rho * x + sqrt(1 - rho^2)
// * x') of both. It registers shocks on the day they occur, while taxi demand
// feels them one day (P intervals) later:
//
//   taxi(t) = base(i, j) * profile[t mod P]
//             * max(0, 1 + noise * (level(t, i) + lag * shock(t - P, i)))
//   aux(t)  = aux_scale * base(i, j) * profile[t mod P]
//             * max(0, 1 + noise * (level_aux(t, i) + lag * shock_aux(t, i)))
//
// Counts are Poisson quantiles of Gaussian-copula uniforms whose
// cross-platform correlation is rho as well.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "flowfuse/graphbuild.hpp"
#include "flowfuse/ingest.hpp"

namespace flowfuse {

struct SynthConfig {
    int zones = 20;
    int days = 14;
    int intervals_per_day = 8;
    double base_intensity = 8.0;  // mean trips per active zone pair and interval
    double density = 1.0;         // share of zone pairs with non-zero base
    std::vector<double> profile;  // empty: default_profile(intervals_per_day)
    double rho = 0.9;
    double lag = 0.5;
    double noise = 0.8;
    double persistence = 0.97;  // AR(1) coefficient of the demand level
    double common = 0.8;        // variance share of the city-wide latent factor
    double aux_scale = 0.5;     // auxiliary volume relative to taxi
    std::uint64_t seed = 1;

    /// Throws ConfigError naming the offending field.
    void validate() const;
    std::int64_t interval_count() const { return static_cast<std::int64_t>(days) * intervals_per_day; }
    std::vector<double> resolved_profile() const;
};

/// Smooth daily cycle with a night trough and an afternoon peak, mean 1.
std::vector<double> default_profile(int intervals_per_day);

struct SynthTrace {
    ZoneRegistry registry;  // zones 1..M
    std::vector<EdgeCount> taxi;
    std::vector<EdgeCount> aux;
    Matrix base;  // M x M pair intensities before scaling
};

SynthTrace generate(const SynthConfig& cfg);

/// Writes taxi.csv, aux.csv (edge lists) and zones.txt under `dir`.
void write_trace(const std::filesystem::path& dir, const SynthTrace& trace);

/// Sum of counts per global interval, zero-filled to `interval_count`.
std::vector<double> interval_totals(std::span<const EdgeCount> rows, std::int64_t interval_count);

}  // namespace flowfuse
