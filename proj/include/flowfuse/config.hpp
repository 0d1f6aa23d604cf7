#pragma once

// Run configuration: every knob of a pipeline run in one place, read from a
// key=value file whose dotted prefixes act as sections.
//
//   # comment
//   seed = 7
//   model.architecture = full
//   train.epochs = 50
//
// Precedence, lowest first: built-in defaults, config file, environment
// variables (paths only), command-line overrides. Unknown keys are errors.
//
// Seeds: the top-level seed feeds every stochastic component through
// derive_seed(seed, {tag}) with tag 1 = synthetic data, 2 = parameter
// initialisation, 3 = training (shuffling and dropout), 4 = random split.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flowfuse/ingest.hpp"
#include "flowfuse/models.hpp"
#include "flowfuse/synth.hpp"
#include "flowfuse/training.hpp"

namespace flowfuse {

struct PathSettings {
    std::filesystem::path data_dir = "data";  // taxi.csv, aux.csv, zones.txt
    std::filesystem::path run_dir = "runs/latest";
    std::vector<std::filesystem::path> taxi_trips;  // raw trip CSVs for `ingest`
    std::vector<std::filesystem::path> aux_trips;
};

struct DataSettings {
    int days = 14;
    int intervals_per_day = 8;
    int history = 3;
};

struct IngestSettings {
    std::string epoch = "2021-01-01";  // start of interval 0
    std::string zones = "1-265";       // registry, ranges and ids
    unsigned threads = 1;
    TripSchema taxi = TripSchema::defaults_for(Platform::Taxi);
    TripSchema aux = TripSchema::defaults_for(Platform::Aux);
};

enum class SeedTag : std::uint64_t { Synth = 1, Init = 2, Train = 3, Split = 4 };

struct RunConfig {
    std::uint64_t seed = 1;
    PathSettings paths;
    DataSettings data;
    IngestSettings ingest;
    SynthConfig synth;  // days / intervals_per_day / seed come from data and seed
    ModelConfig model;  // zones / history / intervals_per_day come from data
    TrainConfig train;  // seed comes from seed
    bool parallel_runs = false;

    /// Set one key from its text form. Throws ConfigError for unknown keys or
    /// malformed values.
    void set(std::string_view key, std::string_view value);
    /// Apply "key = value" lines; '#' starts a comment.
    void apply_text(std::string_view text, std::string_view origin = "<text>");
    void apply_file(const std::filesystem::path& path);
    /// Path overrides from FLOWFUSE_DATA_DIR, FLOWFUSE_RUN_DIR,
    /// FLOWFUSE_TAXI_TRIPS and FLOWFUSE_AUX_TRIPS.
    void apply_environment(const std::function<std::optional<std::string>(const char*)>& getenv);
    void apply_environment();

    /// Checks every field; throws ConfigError naming the first bad one.
    void validate() const;

    /// Every key with its current value, one per line, in a fixed order.
    /// Feeding it back through apply_text reproduces this configuration.
    std::string to_text() const;
    static std::vector<std::string> keys();

    std::uint64_t derived_seed(SeedTag tag) const;
    SynthConfig synth_config() const;
    ModelConfig model_config(int zones) const;
    ModelConfig model_config(int zones, Architecture arch) const;
    TrainConfig train_config() const;
    DatasetSpec dataset_spec() const;
    TimelineSpec timeline() const;
};

}  // namespace flowfuse
