#include "flowfuse/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "flowfuse/errors.hpp"
#include "flowfuse/random.hpp"

namespace flowfuse {

namespace {

constexpr std::uint64_t kTagBase = 1;
constexpr std::uint64_t kTagLevel = 2;
constexpr std::uint64_t kTagAuxLevel = 3;
constexpr std::uint64_t kTagShock = 4;
constexpr std::uint64_t kTagAuxShock = 5;
constexpr std::uint64_t kTagCounts = 6;

// Above this mean the Poisson quantile is taken from its normal approximation.
constexpr double kNormalApproxAbove = 200.0;

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

std::int64_t poisson_quantile(double lambda, double g) {
    if (lambda <= 0.0) return 0;
    if (lambda > kNormalApproxAbove)
        return std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(lambda + std::sqrt(lambda) * g + 0.5)));
    const double u = std_normal_cdf(g);
    double p = std::exp(-lambda);
    double cdf = p;
    std::int64_t k = 0;
    const double cap = lambda + 40.0 * std::sqrt(lambda) + 40.0;
    while (u > cdf && static_cast<double>(k) < cap) {
        ++k;
        p *= lambda / static_cast<double>(k);
        cdf += p;
    }
    return k;
}

// Unit-variance AR(1) paths for every zone, rows = time starting at
// t = -P so that the lag term is defined from the first interval on.
Matrix ar_paths(std::uint64_t seed, std::int64_t steps, int zones, double phi) {
    Rng rng(seed);
    Matrix z(steps, zones);
    const double innov = std::sqrt(1.0 - phi * phi);
    for (int i = 0; i < zones; ++i) z(0, i) = rng.normal();
    for (std::int64_t t = 1; t < steps; ++t)
        for (int i = 0; i < zones; ++i) z(t, i) = phi * z(t - 1, i) + innov * rng.normal();
    return z;
}

}  // namespace

std::vector<double> default_profile(int p) {
    std::vector<double> out(static_cast<std::size_t>(std::max(p, 0)));
    for (int k = 0; k < p; ++k)
        out[static_cast<std::size_t>(k)] = 1.0 - 0.4 * std::cos(2.0 * std::numbers::pi * (k + 0.5) / p - 0.5);
    return out;
}

std::vector<double> SynthConfig::resolved_profile() const {
    return profile.empty() ? default_profile(intervals_per_day) : profile;
}

void SynthConfig::validate() const {
    if (zones < 1) throw ConfigError("synth.zones must be >= 1");
    if (days < 1) throw ConfigError("synth.days must be >= 1");
    if (intervals_per_day < 1) throw ConfigError("synth.intervals_per_day must be >= 1");
    if (!(base_intensity >= 0.0) || !std::isfinite(base_intensity))
        throw ConfigError("synth.base_intensity must be a finite value >= 0");
    if (!(density > 0.0 && density <= 1.0)) throw ConfigError("synth.density must lie in (0, 1]");
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("synth.rho must lie in [0, 1]");
    if (!(lag >= 0.0) || !std::isfinite(lag)) throw ConfigError("synth.lag must be a finite value >= 0");
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("synth.noise must be a finite value >= 0");
    if (!(persistence >= 0.0 && persistence < 1.0)) throw ConfigError("synth.persistence must lie in [0, 1)");
    if (!(common >= 0.0 && common <= 1.0)) throw ConfigError("synth.common must lie in [0, 1]");
    if (!(aux_scale >= 0.0) || !std::isfinite(aux_scale))
        throw ConfigError("synth.aux_scale must be a finite value >= 0");
    if (!profile.empty()) {
        if (static_cast<int>(profile.size()) != intervals_per_day)
            throw ConfigError("synth.profile must have intervals_per_day entries");
        for (double v : profile)
            if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("synth.profile entries must be finite and >= 0");
    }
}

SynthTrace generate(const SynthConfig& cfg) {
    cfg.validate();
    const int m = cfg.zones;
    const int p = cfg.intervals_per_day;
    const std::int64_t n = cfg.interval_count();
    const auto profile = cfg.resolved_profile();

    SynthTrace out{ZoneRegistry::range(1, m), {}, {}, Matrix::Zero(m, m)};

    // Gravity-style pair weights, rescaled so active pairs average base_intensity.
    {
        Rng rng(derive_seed(cfg.seed, {kTagBase}));
        std::vector<double> mass(static_cast<std::size_t>(m));
        for (auto& w : mass) w = std::exp(0.5 * rng.normal());
        double sum = 0.0;
        int active = 0;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                if (rng.uniform() < cfg.density) {
                    out.base(i, j) = mass[static_cast<std::size_t>(i)] * mass[static_cast<std::size_t>(j)];
                    sum += out.base(i, j);
                    ++active;
                }
        if (active > 0) out.base *= cfg.base_intensity * active / sum;
    }

    const std::int64_t steps = n + p;
    // City-wide factor plus zone-specific part, each unit variance.
    auto latent = [&](std::uint64_t tag, double phi) {
        const Matrix zone_part = ar_paths(derive_seed(cfg.seed, {tag, 0}), steps, m, phi);
        const Matrix city = ar_paths(derive_seed(cfg.seed, {tag, 1}), steps, 1, phi);
        return Matrix(std::sqrt(cfg.common) * city.replicate(1, m) + std::sqrt(1.0 - cfg.common) * zone_part);
    };
    const double mix = std::sqrt(1.0 - cfg.rho * cfg.rho);
    // Slow demand level, seen by both platforms at the same time.
    const Matrix level = latent(kTagLevel, cfg.persistence);
    const Matrix level_aux = cfg.rho * level + mix * latent(kTagAuxLevel, cfg.persistence);
    // Short-lived shocks: the auxiliary platform registers them the day
    // before they reach taxi demand.
    const Matrix shock = latent(kTagShock, 0.0);
    const Matrix shock_aux = cfg.rho * shock + mix * latent(kTagAuxShock, 0.0);

    // Row t + p of a latent matrix is interval t.
    auto taxi_multiplier = [&](std::int64_t t, int i) {
        return std::max(0.0, 1.0 + cfg.noise * (level(t + p, i) + cfg.lag * shock(t, i)));
    };
    auto aux_multiplier = [&](std::int64_t t, int i) {
        return std::max(0.0, 1.0 + cfg.noise * (level_aux(t + p, i) + cfg.lag * shock_aux(t + p, i)));
    };

    for (std::int64_t t = 0; t < n; ++t) {
        // One stream per interval keeps intervals independent of each other.
        Rng rng(derive_seed(cfg.seed, {kTagCounts, static_cast<std::uint64_t>(t)}));
        const double season = profile[static_cast<std::size_t>(t % p)];
        for (int i = 0; i < m; ++i) {
            const double taxi_mult = taxi_multiplier(t, i);
            const double aux_mult = aux_multiplier(t, i);
            for (int j = 0; j < m; ++j) {
                // Both normals are drawn for every pair so the stream does not
                // depend on which pairs are active.
                const double g_shared = rng.normal();
                const double g_own = rng.normal();
                const double b = out.base(i, j);
                if (b <= 0.0) continue;
                const double lt = b * season * taxi_mult;
                const double la = cfg.aux_scale * b * season * aux_mult;
                const auto ct = poisson_quantile(lt, g_shared);
                const auto ca = poisson_quantile(la, cfg.rho * g_shared + mix * g_own);
                if (ct > 0) out.taxi.push_back({t, i + 1, j + 1, ct});
                if (ca > 0) out.aux.push_back({t, i + 1, j + 1, ca});
            }
        }
    }
    return out;
}

void write_trace(const std::filesystem::path& dir, const SynthTrace& trace) {
    std::filesystem::create_directories(dir);
    write_edge_list(dir / "taxi.csv", trace.taxi);
    write_edge_list(dir / "aux.csv", trace.aux);
    std::ofstream zones(dir / "zones.txt");
    if (!zones) throw DataError("cannot write " + (dir / "zones.txt").string());
    for (int id : trace.registry.ids()) zones << id << '\n';
}

std::vector<double> interval_totals(std::span<const EdgeCount> rows, std::int64_t interval_count) {
    std::vector<double> out(static_cast<std::size_t>(interval_count), 0.0);
    for (const auto& r : rows) {
        if (r.interval < 0 || r.interval >= interval_count)
            throw DataError("interval_totals: interval " + std::to_string(r.interval) + " out of range");
        out[static_cast<std::size_t>(r.interval)] += static_cast<double>(r.count);
    }
    return out;
}

}  // namespace flowfuse
