#pragma once

// Small random two-platform datasets for model and training tests.

#include <vector>

#include "flowfuse/graphbuild.hpp"
#include "flowfuse/ingest.hpp"
#include "flowfuse/models.hpp"
#include "flowfuse/random.hpp"

namespace flowfuse::testing {

inline std::vector<EdgeCount> random_edge_rows(Rng& rng, int zones, std::int64_t intervals,
                                               double density, int max_count) {
    std::vector<EdgeCount> rows;
    for (std::int64_t t = 0; t < intervals; ++t)
        for (int o = 1; o <= zones; ++o)
            for (int d = 1; d <= zones; ++d)
                if (rng.uniform() < density)
                    rows.push_back({t, o, d, 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_count)))});
    return rows;
}

struct ToyData {
    ZoneRegistry registry;
    PlatformSeries taxi;
    PlatformSeries aux;
    std::vector<Sample> samples;
    DatasetTransforms transforms;
    std::vector<PreparedSample> prepared;
};

inline ToyData make_toy_data(std::uint64_t seed, int zones, std::int64_t intervals, int k = 3,
                             int per_day = 4, double density = 0.4) {
    Rng rng(seed);
    ToyData d{ZoneRegistry::range(1, zones), {}, {}, {}, {}, {}};
    const auto taxi_rows = random_edge_rows(rng, zones, intervals, density, 9);
    const auto aux_rows = random_edge_rows(rng, zones, intervals, density, 5);
    d.taxi = build_series(taxi_rows, d.registry, Platform::Taxi, intervals);
    d.aux = build_series(aux_rows, d.registry, Platform::Aux, intervals);
    d.samples = make_samples(d.taxi, d.aux, k, per_day);
    auto fit = [](const PlatformSeries& s) {
        std::vector<NodeFeatureMatrix> f;
        for (const auto& snap : s.snapshots) f.push_back(snap->features);
        return FeatureTransform::fit(f);
    };
    d.transforms = {fit(d.taxi), fit(d.aux)};
    SamplePreparer prep(d.transforms);
    d.prepared = prep.prepare(d.samples);
    return d;
}

inline ModelConfig toy_config(Architecture arch, int zones, int k = 3, int per_day = 4) {
    ModelConfig c;
    c.architecture = arch;
    c.zones = zones;
    c.history = k;
    c.intervals_per_day = per_day;
    c.gcn_width = 6;
    c.embed_width = 3;
    c.recurrent_width = 5;
    c.fc_widths = {6, 7};
    c.graph_width = 4;
    c.cheb_order = 3;
    return c;
}

}  // namespace flowfuse::testing
