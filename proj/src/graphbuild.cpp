#include "flowfuse/graphbuild.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "flowfuse/errors.hpp"

namespace flowfuse {

FlowGraph build_flow_graph(std::span<const EdgeCount> rows, const ZoneRegistry& registry,
                           IntervalIndex interval, Platform platform) {
    const auto m = static_cast<Eigen::Index>(registry.size());
    FlowGraph g{interval, platform, Matrix::Zero(m, m)};
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> seen =
        Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(m, m, false);
    for (const auto& r : rows) {
        const auto o = registry.index_of(r.origin);
        const auto d = registry.index_of(r.dest);
        if (!o || !d)
            throw DataError("interval " + std::to_string(interval.global) + ": zone " +
                            std::to_string(o ? r.dest : r.origin) + " not in registry");
        const auto oi = static_cast<Eigen::Index>(*o);
        const auto di = static_cast<Eigen::Index>(*d);
        if (seen(oi, di))
            throw DataError("interval " + std::to_string(interval.global) + ": duplicate edge " +
                            std::to_string(r.origin) + "->" + std::to_string(r.dest));
        seen(oi, di) = true;
        g.adjacency(oi, di) = static_cast<double>(r.count);
    }
    return g;
}

NodeFeatureMatrix node_features(const FlowGraph& g) {
    NodeFeatureMatrix n{g.interval, g.platform, Matrix(2, g.adjacency.cols())};
    n.features.row(NodeFeatureMatrix::kInflow) = g.adjacency.colwise().sum();
    n.features.row(NodeFeatureMatrix::kOutflow) = g.adjacency.rowwise().sum().transpose();
    return n;
}

Matrix normalize_adjacency(const Matrix& adjacency) {
    const Eigen::Index m = adjacency.rows();
    Matrix a = adjacency + adjacency.transpose();
    a.diagonal().array() += 1.0;
    const Eigen::VectorXd inv_sqrt = a.rowwise().sum().array().rsqrt();
    Matrix out = inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
    // Exact symmetry regardless of summation order.
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i + 1; j < m; ++j) out(j, i) = out(i, j);
    return out;
}

// ---------------------------------------------------------------------------

FeatureTransform::FeatureTransform(Eigen::Vector2d mean, Eigen::Vector2d stddev)
    : mean_(std::move(mean)), stddev_(stddev.cwiseMax(kStdFloor)) {}

FeatureTransform FeatureTransform::fit(std::span<const NodeFeatureMatrix> features) {
    if (features.empty()) throw DataError("feature transform: empty training set");
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    double count = 0.0;
    for (const auto& f : features) {
        sum += f.features.array().log1p().matrix().rowwise().sum();
        count += static_cast<double>(f.features.cols());
    }
    const Eigen::Vector2d mean = sum / count;
    Eigen::Vector2d sq = Eigen::Vector2d::Zero();
    for (const auto& f : features) {
        const Matrix centered = f.features.array().log1p().matrix().colwise() - mean;
        sq += centered.array().square().matrix().rowwise().sum();
    }
    const Eigen::Vector2d stddev = (sq / count).cwiseSqrt();
    return FeatureTransform(mean, stddev);
}

Matrix FeatureTransform::apply(const Matrix& raw) const {
    if (raw.rows() != 2) throw std::invalid_argument("feature transform expects 2 x M input");
    Matrix out = raw.array().log1p().matrix();
    for (Eigen::Index c = 0; c < 2; ++c)
        out.row(c) = (out.row(c).array() - mean_(c)) / stddev_(c);
    return out;
}

Matrix FeatureTransform::invert(const Matrix& transformed) const {
    if (transformed.rows() != 2) throw std::invalid_argument("feature transform expects 2 x M input");
    Matrix out(2, transformed.cols());
    for (Eigen::Index c = 0; c < 2; ++c)
        out.row(c) = (transformed.row(c).array() * stddev_(c) + mean_(c)).exp() - 1.0;
    return out;
}

// ---------------------------------------------------------------------------

PlatformSeries build_series(std::span<const EdgeCount> rows, const ZoneRegistry& registry,
                            Platform platform, std::int64_t interval_count) {
    PlatformSeries series{platform, {}};
    series.snapshots.reserve(static_cast<std::size_t>(interval_count));
    std::size_t pos = 0;
    for (std::int64_t g = 0; g < interval_count; ++g) {
        const std::size_t begin = pos;
        while (pos < rows.size() && rows[pos].interval == g) ++pos;
        if (pos < rows.size() && rows[pos].interval < g)
            throw DataError("edge list is not sorted by interval");
        auto snap = std::make_shared<FlowSnapshot>();
        snap->graph = build_flow_graph(rows.subspan(begin, pos - begin), registry,
                                       IntervalIndex{g}, platform);
        snap->features = node_features(snap->graph);
        series.snapshots.push_back(std::move(snap));
    }
    if (pos != rows.size())
        throw DataError("edge list row at interval " + std::to_string(rows[pos].interval) +
                        " lies outside the configured horizon of " +
                        std::to_string(interval_count) + " intervals");
    return series;
}

std::vector<Sample> make_samples(const PlatformSeries& taxi, const PlatformSeries& aux, int k,
                                 int intervals_per_day) {
    if (k < 1) throw ConfigError("history length k must be >= 1");
    if (intervals_per_day < 1) throw ConfigError("intervals_per_day must be >= 1");
    if (taxi.size() != aux.size())
        throw DataError("taxi and auxiliary series cover different ranges (" +
                        std::to_string(taxi.size()) + " vs " + std::to_string(aux.size()) +
                        " intervals)");
    std::vector<Sample> samples;
    const auto n = static_cast<std::int64_t>(taxi.size());
    for (std::int64_t t = std::max<std::int64_t>(k, intervals_per_day); t < n; ++t) {
        Sample s;
        s.history.reserve(static_cast<std::size_t>(k));
        for (std::int64_t h = t - k; h < t; ++h) s.history.push_back(taxi.snapshots[static_cast<std::size_t>(h)]);
        s.auxiliary = aux.snapshots[static_cast<std::size_t>(t - intervals_per_day)];
        s.target = taxi.snapshots[static_cast<std::size_t>(t)];
        samples.push_back(std::move(s));
    }
    return samples;
}

// ---------------------------------------------------------------------------

void write_dense_matrix(std::ostream& out, const Matrix& m) {
    if (m.rows() == m.cols())
        out << m.rows() << '\n';
    else
        out << m.rows() << ' ' << m.cols() << '\n';
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ' ';
            out << m(i, j);
        }
        out << '\n';
    }
}

Matrix read_dense_matrix(std::istream& in) {
    std::string first;
    if (!std::getline(in, first)) throw DataError("dense matrix: missing size line");
    std::istringstream dims(first);
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    if (!(dims >> rows) || rows < 0) throw DataError("dense matrix: bad size line");
    if (!(dims >> cols)) cols = rows;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            if (!(in >> m(i, j))) throw DataError("dense matrix: truncated data");
    return m;
}

void persist_series(const std::filesystem::path& dir, const PlatformSeries& series) {
    std::filesystem::create_directories(dir);
    const std::string tag(to_string(series.platform));
    for (const auto& snap : series.snapshots) {
        const std::string g = std::to_string(snap->graph.interval.global);
        std::ofstream a(dir / ("adjacency_" + tag + "_" + g + ".txt"));
        write_dense_matrix(a, snap->graph.adjacency);
        std::ofstream f(dir / ("features_" + tag + "_" + g + ".txt"));
        write_dense_matrix(f, snap->features.features);
        if (!a || !f) throw DataError("failed writing snapshot files under " + dir.string());
    }
}

}  // namespace flowfuse
