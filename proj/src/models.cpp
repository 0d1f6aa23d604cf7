#include "flowfuse/models.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "flowfuse/errors.hpp"
#include "flowfuse/random.hpp"

namespace flowfuse {

using ad::Tape;
using ad::Var;
using layers::Activation;

namespace {

constexpr std::array<std::pair<Architecture, std::string_view>, 10> kArchNames = {{
    {Architecture::Full, "full"},
    {Architecture::NoSpatial, "no_spatial"},
    {Architecture::NoTemporal, "no_temporal"},
    {Architecture::NoFusion, "no_fusion"},
    {Architecture::Gcn, "gcn"},
    {Architecture::Lstm, "lstm"},
    {Architecture::Gru, "gru"},
    {Architecture::Rnn, "rnn"},
    {Architecture::Gat, "gat"},
    {Architecture::Cgcn, "cgcn"},
}};

// Dropout stream tags.
constexpr std::uint64_t kTagSpatialDropout = 1;
constexpr std::uint64_t kTagGraphDropout = 2;

}  // namespace

std::string_view to_string(Architecture a) {
    for (const auto& [arch, name] : kArchNames)
        if (arch == a) return name;
    return "?";
}

Architecture parse_architecture(std::string_view s) {
    for (const auto& [arch, name] : kArchNames)
        if (name == s) return arch;
    throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

bool is_baseline(Architecture a) {
    return std::find(kBaselines.begin(), kBaselines.end(), a) != kBaselines.end();
}

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    auto positive = [](int v, const char* field) {
        if (v < 1) throw ConfigError(std::string("model.") + field + " must be >= 1, got " + std::to_string(v));
    };
    positive(zones, "zones");
    positive(history, "history");
    positive(intervals_per_day, "intervals_per_day");
    positive(gcn_width, "gcn_width");
    positive(embed_width, "embed_width");
    positive(recurrent_width, "recurrent_width");
    positive(graph_width, "graph_width");
    positive(cheb_order, "cheb_order");
    if (fc_widths.empty()) throw ConfigError("model.fc_widths must list at least one hidden width");
    for (int w : fc_widths) positive(w, "fc_widths");
    if (!(dropout >= 0.0 && dropout < 1.0))
        throw ConfigError("model.dropout must lie in [0, 1), got " + std::to_string(dropout));
}

std::string ModelConfig::canonical() const {
    std::ostringstream os;
    os << "arch=" << to_string(architecture) << ";zones=" << zones << ";history=" << history
       << ";intervals_per_day=" << intervals_per_day << ";gcn_width=" << gcn_width
       << ";embed_width=" << embed_width << ";recurrent_width=" << recurrent_width << ";fc_widths=";
    for (std::size_t i = 0; i < fc_widths.size(); ++i) os << (i ? "," : "") << fc_widths[i];
    os << ";graph_width=" << graph_width << ";cheb_order=" << cheb_order
       << ";aux_first=" << (aux_first ? 1 : 0);
    return os.str();
}

std::uint64_t ModelConfig::hash() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : canonical()) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
    auto dense = [](std::size_t in, std::size_t out) { return in * out + out; };
    auto cell = [](std::size_t gates, std::size_t in, std::size_t hidden) {
        return gates * (in * hidden + hidden * hidden + hidden);
    };
    const auto m = static_cast<std::size_t>(c.zones);
    const auto seq = static_cast<std::size_t>(c.sequence_length());
    const auto embed = static_cast<std::size_t>(c.embed_width);
    const auto rec = static_cast<std::size_t>(c.recurrent_width);
    const auto graph = static_cast<std::size_t>(c.graph_width);

    auto head = [&](std::size_t in) {
        std::size_t n = 0;
        for (int w : c.fc_widths) {
            n += dense(in, static_cast<std::size_t>(w));
            in = static_cast<std::size_t>(w);
        }
        return n + dense(in, 2 * m);
    };
    const std::size_t spatial = dense(2, static_cast<std::size_t>(c.gcn_width)) +
                                dense(static_cast<std::size_t>(c.gcn_width), embed);
    switch (c.architecture) {
        case Architecture::Full:
            return 2 * spatial + cell(4, m * embed, rec) + head(rec);
        case Architecture::NoFusion:
            return spatial + cell(4, m * embed, rec) + head(rec);
        case Architecture::NoSpatial:
        case Architecture::Lstm:
            return cell(4, 2 * m, rec) + head(rec);
        case Architecture::Gru:
            return cell(3, 2 * m, rec) + head(rec);
        case Architecture::Rnn:
            return cell(1, 2 * m, rec) + head(rec);
        case Architecture::NoTemporal:
            return 2 * spatial + head(seq * m * embed);
        case Architecture::Gcn:
            return dense(2, graph) + head(seq * m * graph);
        case Architecture::Cgcn:
            return static_cast<std::size_t>(c.cheb_order) * 2 * graph + graph + head(seq * m * graph);
        case Architecture::Gat:
            return 2 * graph + 2 * graph + head(seq * m * graph);
    }
    return 0;
}

// ---------------------------------------------------------------------------

PreparedSnapshotPtr SamplePreparer::snapshot(const SnapshotPtr& s) {
    if (auto it = cache_.find(s.get()); it != cache_.end()) return it->second;
    auto p = std::make_shared<PreparedSnapshot>();
    p->index = s->graph.interval.global;
    p->platform = s->graph.platform;
    p->norm_adj = normalize_adjacency(s->graph.adjacency);
    p->laplacian = layers::scaled_laplacian(p->norm_adj);
    p->attention_mask = layers::attention_mask(s->graph.adjacency);
    const FeatureTransform& tf = p->platform == Platform::Taxi ? transforms_.taxi : transforms_.aux;
    p->node_inputs = tf.apply(s->features.features).transpose();
    cache_.emplace(s.get(), p);
    return p;
}

PreparedSample SamplePreparer::prepare(const Sample& s) {
    PreparedSample out;
    for (const auto& h : s.history) out.history.push_back(snapshot(h));
    out.auxiliary = snapshot(s.auxiliary);
    out.target_raw = s.target->features.features;
    out.target = transforms_.taxi.apply(out.target_raw);
    out.target_index = s.target_index();
    return out;
}

std::vector<PreparedSample> SamplePreparer::prepare(std::span<const Sample> samples) {
    std::vector<PreparedSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(prepare(s));
    return out;
}

// ---------------------------------------------------------------------------

Forecaster::Forecaster(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(derive_seed(init_seed, {0x1417}));
    const Eigen::Index m = config_.zones;
    const Eigen::Index seq = config_.sequence_length();
    auto make_stack = [&](const std::string& prefix) {
        SpatialStack s;
        s.gcn = layers::GcnParams::create(params_, prefix + ".gcn", 2, config_.gcn_width, rng);
        s.fc = layers::DenseParams::create(params_, prefix + ".fc", config_.gcn_width, config_.embed_width, rng);
        return s;
    };
    Eigen::Index head_in = 0;
    switch (config_.architecture) {
        case Architecture::Full:
        case Architecture::NoFusion:
            taxi_stack_ = make_stack("spatial.taxi");
            if (config_.uses_auxiliary()) aux_stack_ = make_stack("spatial.aux");
            cell_ = layers::RecurrentCell::create(params_, "temporal.lstm", layers::CellKind::Lstm,
                                                  m * config_.embed_width, config_.recurrent_width, rng);
            head_in = config_.recurrent_width;
            break;
        case Architecture::NoTemporal:
            taxi_stack_ = make_stack("spatial.taxi");
            aux_stack_ = make_stack("spatial.aux");
            head_in = seq * m * config_.embed_width;
            break;
        case Architecture::NoSpatial:
        case Architecture::Lstm:
        case Architecture::Gru:
        case Architecture::Rnn: {
            const auto kind = config_.architecture == Architecture::Gru   ? layers::CellKind::Gru
                              : config_.architecture == Architecture::Rnn ? layers::CellKind::Rnn
                                                                          : layers::CellKind::Lstm;
            cell_ = layers::RecurrentCell::create(params_, std::string("temporal.") + std::string(layers::to_string(kind)),
                                                  kind, 2 * m, config_.recurrent_width, rng);
            head_in = config_.recurrent_width;
            break;
        }
        case Architecture::Gcn:
            graph_gcn_ = layers::GcnParams::create(params_, "graph.gcn", 2, config_.graph_width, rng);
            head_in = seq * m * config_.graph_width;
            break;
        case Architecture::Cgcn:
            graph_cheb_ = layers::ChebParams::create(params_, "graph.cheb", 2, config_.graph_width,
                                                     config_.cheb_order, rng);
            head_in = seq * m * config_.graph_width;
            break;
        case Architecture::Gat:
            graph_gat_ = layers::GatParams::create(params_, "graph.gat", 2, config_.graph_width, rng);
            head_in = seq * m * config_.graph_width;
            break;
    }
    Eigen::Index in = head_in;
    for (std::size_t i = 0; i < config_.fc_widths.size(); ++i) {
        head_.push_back(layers::DenseParams::create(params_, "head.fc" + std::to_string(i), in,
                                                    config_.fc_widths[i], rng));
        in = config_.fc_widths[i];
    }
    head_.push_back(layers::DenseParams::create(params_, "head.out", in, 2 * m, rng));
}

std::vector<const PreparedSnapshot*> Forecaster::sequence(const PreparedSample& s) const {
    if (static_cast<int>(s.history.size()) != config_.history)
        throw ConfigError("sample carries " + std::to_string(s.history.size()) +
                          " history intervals, model expects " + std::to_string(config_.history));
    std::vector<const PreparedSnapshot*> seq;
    if (config_.uses_auxiliary() && config_.aux_first) seq.push_back(s.auxiliary.get());
    for (const auto& h : s.history) seq.push_back(h.get());
    if (config_.uses_auxiliary() && !config_.aux_first) seq.push_back(s.auxiliary.get());
    for (const auto* p : seq)
        if (p->node_inputs.rows() != config_.zones)
            throw ConfigError("sample has " + std::to_string(p->node_inputs.rows()) +
                              " zones, model expects " + std::to_string(config_.zones));
    return seq;
}

Var Forecaster::spatial_embed(Tape& tape, const PreparedSnapshot& snap, const ForwardContext& ctx,
                              int position) const {
    const auto& stack = snap.platform == Platform::Aux ? aux_stack_ : taxi_stack_;
    if (!stack) throw std::logic_error("architecture has no spatial stack for this platform");
    Var g = layers::gcn_forward(tape.constant(snap.norm_adj), tape.constant(snap.node_inputs), stack->gcn);
    Var d = ad::dropout(g, config_.dropout, ctx.mode,
                        derive_seed(ctx.seed, {kTagSpatialDropout, static_cast<std::uint64_t>(position)}));
    return layers::fc_forward(d, stack->fc, Activation::Linear);
}

Var Forecaster::graph_layer(Tape& tape, const PreparedSnapshot& snap, const ForwardContext& ctx,
                            int position) const {
    Var x = tape.constant(snap.node_inputs);
    Var g;
    if (graph_gcn_)
        g = layers::gcn_forward(tape.constant(snap.norm_adj), x, *graph_gcn_);
    else if (graph_cheb_)
        g = layers::cheb_forward(tape.constant(snap.laplacian), x, *graph_cheb_);
    else
        g = layers::gat_forward(snap.attention_mask, x, *graph_gat_);
    return ad::dropout(g, config_.dropout, ctx.mode,
                       derive_seed(ctx.seed, {kTagGraphDropout, static_cast<std::uint64_t>(position)}));
}

Var Forecaster::flat_features(Tape& tape, const PreparedSnapshot& snap) const {
    return ad::reshape(tape.constant(snap.node_inputs), 1, 2 * static_cast<Eigen::Index>(config_.zones));
}

Var Forecaster::head(const Var& features) const {
    Var x = features;
    for (std::size_t i = 0; i + 1 < head_.size(); ++i) x = layers::fc_forward(x, head_[i], Activation::Relu);
    x = layers::fc_forward(x, head_.back(), Activation::Linear);
    return ad::reshape(x, 2, config_.zones);
}

Var Forecaster::forward(Tape& tape, const PreparedSample& sample, const ForwardContext& ctx) const {
    const auto seq = sequence(sample);
    auto flatten = [](const Var& v) { return ad::reshape(v, 1, v.rows() * v.cols()); };
    std::vector<Var> steps;
    steps.reserve(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const int pos = static_cast<int>(i);
        switch (config_.architecture) {
            case Architecture::Full:
            case Architecture::NoFusion:
            case Architecture::NoTemporal:
                steps.push_back(flatten(spatial_embed(tape, *seq[i], ctx, pos)));
                break;
            case Architecture::NoSpatial:
            case Architecture::Lstm:
            case Architecture::Gru:
            case Architecture::Rnn:
                steps.push_back(flat_features(tape, *seq[i]));
                break;
            case Architecture::Gcn:
            case Architecture::Cgcn:
            case Architecture::Gat:
                steps.push_back(flatten(graph_layer(tape, *seq[i], ctx, pos)));
                break;
        }
    }
    if (cell_) return head(cell_->run(steps));
    Var joined = steps.front();
    for (std::size_t i = 1; i < steps.size(); ++i) joined = ad::concat_cols(joined, steps[i]);
    return head(joined);
}

Matrix Forecaster::predict_transformed(const PreparedSample& sample) const {
    Tape tape(false);
    return forward(tape, sample, ForwardContext{ad::Mode::Eval, 0}).value();
}

FlowPrediction Forecaster::predict(const PreparedSample& sample, const FeatureTransform& taxi) const {
    return FlowPrediction{taxi.invert(predict_transformed(sample)).cwiseMax(0.0)};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 8);
}

std::uint64_t get_uint(std::istream& in, int bytes) {
    unsigned char b[8] = {};
    if (!in.read(reinterpret_cast<char*>(b), bytes)) throw DataError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Forecaster& model) {
    const ParamStore& ps = model.params();
    out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
    put_u32(out, kCheckpointVersion);
    put_u64(out, model.config().hash());
    put_u32(out, static_cast<std::uint32_t>(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& e = ps.entry(i);
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        const Matrix& v = e.tensor.value;
        put_u32(out, static_cast<std::uint32_t>(v.rows()));
        put_u32(out, static_cast<std::uint32_t>(v.cols()));
        for (Eigen::Index r = 0; r < v.rows(); ++r)
            for (Eigen::Index c = 0; c < v.cols(); ++c) put_u64(out, std::bit_cast<std::uint64_t>(v(r, c)));
    }
}

void save_checkpoint(const std::filesystem::path& path, const Forecaster& model) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    write_checkpoint(out, model);
    if (!out) throw DataError("write failed for " + path.string());
}

CheckpointData read_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::string_view(magic, 8) != kCheckpointMagic)
        throw DataError("checkpoint: bad magic header");
    CheckpointData d;
    d.version = static_cast<std::uint32_t>(get_uint(in, 4));
    if (d.version != kCheckpointVersion)
        throw DataError("checkpoint: unsupported format version " + std::to_string(d.version));
    d.config_hash = get_uint(in, 8);
    const auto count = get_uint(in, 4);
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedMatrix nm;
        const auto len = get_uint(in, 4);
        if (len > 4096) throw DataError("checkpoint: implausible parameter name length");
        nm.name.resize(len);
        if (!in.read(nm.name.data(), static_cast<std::streamsize>(len))) throw DataError("checkpoint: truncated file");
        const auto rows = static_cast<Eigen::Index>(get_uint(in, 4));
        const auto cols = static_cast<Eigen::Index>(get_uint(in, 4));
        nm.value.resize(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) nm.value(r, c) = std::bit_cast<double>(get_uint(in, 8));
        d.parameters.push_back(std::move(nm));
    }
    return d;
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    return read_checkpoint(in);
}

void load_checkpoint(const CheckpointData& data, Forecaster& model) {
    if (data.config_hash != model.config().hash())
        throw ConfigError("checkpoint was written for a different model configuration");
    ParamStore& ps = model.params();
    if (data.parameters.size() != ps.size())
        throw ConfigError("checkpoint holds " + std::to_string(data.parameters.size()) +
                          " parameters, model has " + std::to_string(ps.size()));
    std::vector<Matrix> values;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& nm = data.parameters[i];
        const auto& e = ps.entry(i);
        if (nm.name != e.name || nm.value.rows() != e.tensor.rows() || nm.value.cols() != e.tensor.cols())
            throw ConfigError("checkpoint parameter '" + nm.name + "' does not match model parameter '" +
                              e.name + "'");
        values.push_back(nm.value);
    }
    ps.assign_values(values);
}

void load_checkpoint(const std::filesystem::path& path, Forecaster& model) {
    load_checkpoint(read_checkpoint(path), model);
}

}  // namespace flowfuse
