#pragma once

// The fused spatio-temporal forecaster, its ablation variants and the
// comparison baselines, all behind one Forecaster interface.
//
// Every architecture consumes the same PreparedSample: k taxi intervals
// T-k..T-1 plus the auxiliary platform at T-P, and predicts the 2 x M
// (inflow, outflow) matrix of taxi interval T in transformed feature space.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "flowfuse/autodiff.hpp"
#include "flowfuse/graphbuild.hpp"
#include "flowfuse/layers.hpp"
#include "flowfuse/params.hpp"

namespace flowfuse {

enum class Architecture {
    // Full model and its ablations.
    Full,
    NoSpatial,
    NoTemporal,
    NoFusion,
    // Baselines.
    Gcn,
    Lstm,
    Gru,
    Rnn,
    Gat,
    Cgcn,
};

inline constexpr std::array<Architecture, 4> kVariants = {
    Architecture::Full, Architecture::NoSpatial, Architecture::NoTemporal, Architecture::NoFusion};
inline constexpr std::array<Architecture, 6> kBaselines = {
    Architecture::Gcn, Architecture::Lstm, Architecture::Gru,
    Architecture::Rnn, Architecture::Gat,  Architecture::Cgcn};

std::string_view to_string(Architecture a);
Architecture parse_architecture(std::string_view s);
bool is_baseline(Architecture a);

struct ModelConfig {
    int zones = 265;
    int history = 3;            // k
    int intervals_per_day = 8;  // P
    int gcn_width = 32;
    int embed_width = 16;
    int recurrent_width = 32;
    std::vector<int> fc_widths = {32, 128};  // hidden widths; output is 2M
    int graph_width = 32;                    // baseline graph layers
    int cheb_order = 3;
    double dropout = 0.1;
    bool aux_first = true;
    Architecture architecture = Architecture::Full;

    /// Throws ConfigError naming the offending field.
    void validate() const;
    /// Canonical text of every field that shapes the parameter set.
    std::string canonical() const;
    /// FNV-1a 64 of canonical().
    std::uint64_t hash() const;

    bool uses_auxiliary() const { return architecture != Architecture::NoFusion; }
    /// Number of intervals fed to the model (k, plus one when fused).
    int sequence_length() const { return history + (uses_auxiliary() ? 1 : 0); }
};

/// Closed-form parameter count of the architecture described by `cfg`.
std::size_t expected_parameter_count(const ModelConfig& cfg);

/// Model-ready view of one snapshot.
struct PreparedSnapshot {
    std::int64_t index = 0;
    Platform platform = Platform::Taxi;
    Matrix norm_adj;        // normalize_adjacency(raw counts)
    Matrix laplacian;       // scaled_laplacian(norm_adj)
    Matrix attention_mask;  // attention_mask(raw counts)
    Matrix node_inputs;     // M x 2 transformed (inflow, outflow), node-major
};
using PreparedSnapshotPtr = std::shared_ptr<const PreparedSnapshot>;

struct PreparedSample {
    std::vector<PreparedSnapshotPtr> history;
    PreparedSnapshotPtr auxiliary;
    Matrix target;      // 2 x M transformed
    Matrix target_raw;  // 2 x M counts
    std::int64_t target_index = 0;
};

struct DatasetTransforms {
    FeatureTransform taxi;
    FeatureTransform aux;
};

/// Converts graph samples into prepared samples, sharing the prepared form of
/// snapshots that appear in several samples.
class SamplePreparer {
public:
    explicit SamplePreparer(DatasetTransforms transforms) : transforms_(std::move(transforms)) {}

    PreparedSample prepare(const Sample& s);
    std::vector<PreparedSample> prepare(std::span<const Sample> samples);
    const DatasetTransforms& transforms() const { return transforms_; }

private:
    PreparedSnapshotPtr snapshot(const SnapshotPtr& s);
    DatasetTransforms transforms_;
    std::unordered_map<const FlowSnapshot*, PreparedSnapshotPtr> cache_;
};

/// Raw-count prediction, clamped at 0.
struct FlowPrediction {
    Matrix flows;  // 2 x M
};

struct ForwardContext {
    ad::Mode mode = ad::Mode::Eval;
    std::uint64_t seed = 0;  // dropout stream; per (run, epoch, sample)
};

class Forecaster {
public:
    Forecaster(ModelConfig config, std::uint64_t init_seed);

    Forecaster(Forecaster&&) = default;
    Forecaster& operator=(Forecaster&&) = default;

    const ModelConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// 2 x M prediction in transformed space, recorded on `tape`.
    ad::Var forward(ad::Tape& tape, const PreparedSample& sample, const ForwardContext& ctx) const;

    /// Eval-mode forward without gradient tracking.
    Matrix predict_transformed(const PreparedSample& sample) const;
    FlowPrediction predict(const PreparedSample& sample, const FeatureTransform& taxi) const;

    /// Spatial stack for one snapshot: FC(Dropout(GCN(A_hat, X))), M x E.
    ad::Var spatial_embed(ad::Tape& tape, const PreparedSnapshot& snap, const ForwardContext& ctx,
                          int position) const;

private:
    struct SpatialStack {
        layers::GcnParams gcn;
        layers::DenseParams fc;
    };

    std::vector<const PreparedSnapshot*> sequence(const PreparedSample& s) const;
    ad::Var head(const ad::Var& features) const;
    ad::Var flat_features(ad::Tape& tape, const PreparedSnapshot& snap) const;
    ad::Var graph_layer(ad::Tape& tape, const PreparedSnapshot& snap, const ForwardContext& ctx,
                        int position) const;

    ModelConfig config_;
    ParamStore params_;
    std::optional<SpatialStack> taxi_stack_;
    std::optional<SpatialStack> aux_stack_;
    std::optional<layers::RecurrentCell> cell_;
    std::optional<layers::GcnParams> graph_gcn_;
    std::optional<layers::ChebParams> graph_cheb_;
    std::optional<layers::GatParams> graph_gat_;
    std::vector<layers::DenseParams> head_;
};

// ---------------------------------------------------------------------------
// Checkpoints. Layout (all integers little-endian):
//   8 bytes  magic "FLOWCKPT"
//   u32      format version (1)
//   u64      ModelConfig::hash()
//   u32      parameter count
//   per parameter: u32 name length, name bytes, u32 rows, u32 cols,
//                  rows*cols IEEE-754 doubles, row-major, little-endian

inline constexpr std::string_view kCheckpointMagic = "FLOWCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedMatrix {
    std::string name;
    Matrix value;
};

struct CheckpointData {
    std::uint32_t version = 0;
    std::uint64_t config_hash = 0;
    std::vector<NamedMatrix> parameters;
};

void write_checkpoint(std::ostream& out, const Forecaster& model);
void save_checkpoint(const std::filesystem::path& path, const Forecaster& model);
/// Throws DataError on a bad magic, version, or truncated file.
CheckpointData read_checkpoint(std::istream& in);
CheckpointData read_checkpoint(const std::filesystem::path& path);
/// Loads values into `model`; throws ConfigError when the checkpoint was
/// written for a different configuration.
void load_checkpoint(const std::filesystem::path& path, Forecaster& model);
void load_checkpoint(const CheckpointData& data, Forecaster& model);

}  // namespace flowfuse
