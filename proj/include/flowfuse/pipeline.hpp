#pragma once

// End-to-end steps shared by the command-line tool and the acceptance suite:
// load an edge-list dataset, train one architecture, compare several.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowfuse/config.hpp"
#include "flowfuse/training.hpp"

namespace flowfuse {

/// Reads zones.txt, taxi.csv and aux.csv from cfg.paths.data_dir and builds
/// the split dataset described by cfg.
Dataset load_dataset(const RunConfig& cfg);
Dataset make_dataset(const RunConfig& cfg, std::span<const EdgeCount> taxi, std::span<const EdgeCount> aux,
                     const ZoneRegistry& registry);

struct RunOutcome {
    Forecaster model;
    TrainResult training;
    MetricsReport metrics;  // on the test split
    double seconds = 0.0;   // wall time of training
};

/// Builds, trains and evaluates one architecture with the seeds of `cfg`.
RunOutcome train_and_evaluate(const RunConfig& cfg, const Dataset& data, Architecture arch);

struct ComparisonRow {
    Architecture architecture = Architecture::Full;
    MetricsReport metrics;
    int best_epoch = -1;
    std::size_t epochs_run = 0;
    double seconds = 0.0;
};

struct Comparison {
    std::vector<ComparisonRow> rows;
    MetricsReport mean_predictor;  // per-slot mean of the train targets
    std::size_t train_samples = 0;
    std::size_t test_samples = 0;
};

/// Trains every architecture on the same dataset. With `parallel` the runs
/// execute concurrently; rows keep the order of `archs` either way. When
/// `run_root` is set each run leaves its artifacts in run_root/<name>.
Comparison compare(const RunConfig& cfg, const Dataset& data, std::span<const Architecture> archs,
                   bool parallel, const std::optional<std::filesystem::path>& run_root = std::nullopt);

/// Architecture sets of the two comparison commands.
std::vector<Architecture> baseline_lineup();  // full model first, then the baselines
std::vector<Architecture> ablation_lineup();  // full model and its three ablations

void print_table(std::ostream& out, const Comparison& c);
void write_table_csv(std::ostream& out, const Comparison& c);

// Run directory artifacts.
void write_run_artifacts(const std::filesystem::path& dir, const RunConfig& cfg, const RunOutcome& run,
                         const DatasetTransforms& transforms);
void write_loss_curve(std::ostream& out, const TrainResult& r);
void write_transforms(std::ostream& out, const DatasetTransforms& t);
void write_metrics(std::ostream& out, const MetricsReport& m, const MetricsReport& mean_predictor);
void write_zone_errors(std::ostream& out, const MetricsReport& m, const ZoneRegistry& registry);

}  // namespace flowfuse
