#pragma once

// Loss, optimizer, data splitting, the training loop and raw-space metrics.

#include <cstdint>
#include <span>
#include <vector>

#include "flowfuse/models.hpp"
#include "flowfuse/random.hpp"

namespace flowfuse {

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 16;
    int epochs = 200;
    int patience = 20;                 // epochs without validation improvement
    double split_fraction = 0.7;       // train share of all samples
    double validation_fraction = 0.1;  // tail of the train share held out
    std::uint64_t seed = 0;
    int threads = 1;                   // > 1 evaluates batch members in parallel
    bool random_split = false;

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

/// Number of leading samples that go to the train side: floor(fraction * n).
std::size_t split_point(std::size_t n, double fraction);

template <class T>
struct Split {
    std::vector<T> train;
    std::vector<T> test;
};

/// First floor(fraction * n) samples (already ordered by target) train, the
/// rest test.
template <class T>
Split<T> chrono_split(std::span<const T> samples, double fraction) {
    const std::size_t cut = split_point(samples.size(), fraction);
    return {std::vector<T>(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(cut)),
            std::vector<T>(samples.begin() + static_cast<std::ptrdiff_t>(cut), samples.end())};
}

/// Same sizes as chrono_split, membership drawn with a seeded shuffle; each
/// side keeps chronological order.
template <class T>
Split<T> random_split(std::span<const T> samples, double fraction, std::uint64_t seed) {
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const std::size_t cut = split_point(samples.size(), fraction);
    std::vector<bool> in_train(samples.size(), false);
    for (std::size_t i = 0; i < cut; ++i) in_train[idx[i]] = true;
    Split<T> out;
    for (std::size_t i = 0; i < samples.size(); ++i) (in_train[i] ? out.train : out.test).push_back(samples[i]);
    return out;
}

/// Mean of squared elementwise differences, recorded on the tape.
ad::Var mse_loss(const ad::Var& pred, const ad::Var& target);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected Adam update of every parameter; missing gradients count as
/// zero. Advances the shared step counter and clears gradients.
void adam_step(ParamStore& store, const AdamConfig& cfg);

struct BatchMember {
    const PreparedSample* sample = nullptr;
    ForwardContext ctx;
};

/// Forward/backward of every member with loss scaled by 1/batch size, so the
/// parameter gradients hold the batch-averaged gradient. Returns the batch
/// mean loss. With threads > 1 members run concurrently and their gradients
/// are summed afterwards in member order.
double backward_batch(Forecaster& model, std::span<const BatchMember> batch, int threads = 1);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;      // mean transformed-space MSE over the epoch
    double validation_mae = 0.0;  // raw-space MAE, NaN without a validation slice
};

struct TrainResult {
    std::vector<EpochRecord> curve;
    int best_epoch = -1;  // epoch whose parameters were kept
    bool stopped_early = false;
};

/// Mini-batch Adam on `samples` (chronological). The trailing
/// validation_fraction of them drives early stopping and best-parameter
/// selection. Throws NumericalError on a non-finite loss.
TrainResult train(Forecaster& model, std::span<const PreparedSample> samples, const TrainConfig& cfg,
                  const FeatureTransform& taxi);

struct MetricsReport {
    double mae = 0.0;
    double mse = 0.0;
    std::vector<double> zone_mae;  // per zone, over samples and both channels
    std::size_t sample_count = 0;

    /// Share of zones whose error exceeds the mean per-zone error.
    double fraction_zones_above_mean() const;
};

/// Metrics over raw 2 x M predictions (clamped at 0) and targets. Entries are
/// summed in order of target index so the result does not depend on the
/// order of `pairs`.
struct ScoredPrediction {
    std::int64_t target_index = 0;
    Matrix prediction;
    Matrix target;
};
MetricsReport score(std::span<const ScoredPrediction> pairs);

MetricsReport evaluate(const Forecaster& model, std::span<const PreparedSample> samples,
                       const FeatureTransform& taxi);

/// Predicts the training mean of each (channel, zone, slot of day). Slots
/// absent from training fall back to the (channel, zone) mean.
MetricsReport mean_predictor_baseline(std::span<const PreparedSample> train,
                                      std::span<const PreparedSample> test, int intervals_per_day);

/// Everything one experiment needs: prepared train/test samples and the
/// feature transforms fitted on the snapshots the train samples touch.
struct Dataset {
    ZoneRegistry registry;
    DatasetTransforms transforms;
    std::vector<PreparedSample> train;
    std::vector<PreparedSample> test;
    std::size_t sample_count() const { return train.size() + test.size(); }
};

struct DatasetSpec {
    std::int64_t interval_count = 0;
    int history = 3;
    int intervals_per_day = 8;
    double split_fraction = 0.7;
    bool random_split = false;
    std::uint64_t split_seed = 0;
};

Dataset build_dataset(std::span<const EdgeCount> taxi, std::span<const EdgeCount> aux,
                      const ZoneRegistry& registry, const DatasetSpec& spec);

}  // namespace flowfuse
