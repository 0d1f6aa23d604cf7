#pragma once

// Per-interval flow graphs, node features, feature scaling, and sample
// assembly on the global interval timeline.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "flowfuse/ingest.hpp"

namespace flowfuse {

using Matrix = Eigen::MatrixXd;

/// Directed trip-count adjacency: entry (i, j) counts trips i -> j.
struct FlowGraph {
    IntervalIndex interval;
    Platform platform = Platform::Taxi;
    Matrix adjacency;

    double total() const { return adjacency.sum(); }
    Eigen::Index zones() const { return adjacency.rows(); }
};

/// Row 0: inflow per zone (column sums). Row 1: outflow per zone (row sums).
struct NodeFeatureMatrix {
    IntervalIndex interval;
    Platform platform = Platform::Taxi;
    Matrix features;  // 2 x M

    static constexpr Eigen::Index kInflow = 0;
    static constexpr Eigen::Index kOutflow = 1;
};

/// Rows of a single interval go in; zone ids are mapped through the
/// registry. Throws DataError on an unknown zone or a repeated
/// (origin, dest) pair.
FlowGraph build_flow_graph(std::span<const EdgeCount> rows, const ZoneRegistry& registry,
                           IntervalIndex interval, Platform platform);

/// Self-loop trips count toward both the inflow and the outflow of their zone.
NodeFeatureMatrix node_features(const FlowGraph& g);

/// D^-1/2 (A + A^T + I) D^-1/2 with D the degree diagonal of A + A^T + I.
Matrix normalize_adjacency(const Matrix& adjacency);

/// Per-channel x -> (log(1 + x) - mean_c) / std_c.
class FeatureTransform {
public:
    static constexpr double kStdFloor = 1e-8;

    FeatureTransform() = default;
    FeatureTransform(Eigen::Vector2d mean, Eigen::Vector2d stddev);

    /// Fit on every (channel, zone) entry of the given matrices. Throws
    /// DataError when `features` is empty.
    static FeatureTransform fit(std::span<const NodeFeatureMatrix> features);

    /// 2 x M raw counts -> transformed.
    Matrix apply(const Matrix& raw) const;
    /// Transformed -> raw counts.
    Matrix invert(const Matrix& transformed) const;

    const Eigen::Vector2d& mean() const { return mean_; }
    const Eigen::Vector2d& stddev() const { return stddev_; }

private:
    Eigen::Vector2d mean_ = Eigen::Vector2d::Zero();
    Eigen::Vector2d stddev_ = Eigen::Vector2d::Ones();
};

/// One interval of one platform: graph plus its features.
struct FlowSnapshot {
    FlowGraph graph;
    NodeFeatureMatrix features;
};
using SnapshotPtr = std::shared_ptr<const FlowSnapshot>;

/// Snapshots for every global index 0..interval_count-1 of one platform.
struct PlatformSeries {
    Platform platform = Platform::Taxi;
    std::vector<SnapshotPtr> snapshots;

    std::size_t size() const { return snapshots.size(); }
    const FlowSnapshot& at(std::int64_t g) const { return *snapshots.at(static_cast<std::size_t>(g)); }
};

/// Build the full series from a sorted edge list. Intervals without rows
/// become zero graphs. Rows with interval >= interval_count are a DataError.
PlatformSeries build_series(std::span<const EdgeCount> rows, const ZoneRegistry& registry,
                            Platform platform, std::int64_t interval_count);

/// One supervised example (history[i] is taxi at T - k + i).
struct Sample {
    std::vector<SnapshotPtr> history;
    SnapshotPtr auxiliary;  // aux platform at T - P
    SnapshotPtr target;     // taxi at T

    std::int64_t target_index() const { return target->graph.interval.global; }
};

/// One sample per target T with T >= max(k, P), in increasing T. Throws
/// DataError when the two series differ in length, ConfigError on k < 1 or
/// P < 1.
std::vector<Sample> make_samples(const PlatformSeries& taxi, const PlatformSeries& aux, int k,
                                 int intervals_per_day);

/// Dense text matrix: first line M, then M rows of M numbers. Non-square
/// matrices use "rows cols" on the first line.
void write_dense_matrix(std::ostream& out, const Matrix& m);
Matrix read_dense_matrix(std::istream& in);

/// Dump adjacency and features of every interval as dense text files under
/// `dir` (adjacency_<platform>_<g>.txt, features_<platform>_<g>.txt).
void persist_series(const std::filesystem::path& dir, const PlatformSeries& series);

}  // namespace flowfuse
