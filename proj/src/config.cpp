#include "flowfuse/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "flowfuse/errors.hpp"

namespace flowfuse {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
    std::vector<std::string_view> out;
    if (trim(s).empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto comma = s.find(',', start);
        out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
    throw ConfigError("config key '" + std::string(key) + "': cannot read '" + std::string(value) + "' as " +
                      expected);
}

template <class T>
T parse_integer(std::string_view key, std::string_view v) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
    return out;
}

double parse_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a number");
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_value(key, v, "true/false");
}

char parse_char(std::string_view key, std::string_view v) {
    if (v == "\\t" || v == "tab") return '\t';
    if (v.size() != 1) bad_value(key, v, "a single character");
    return v[0];
}

// Shortest text that reads back to the same double.
std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

template <class T>
std::string join(const std::vector<T>& xs) {
    std::ostringstream os;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) os << ',';
        if constexpr (std::is_same_v<T, double>)
            os << format_double(xs[i]);
        else if constexpr (std::is_same_v<T, std::filesystem::path>)
            os << xs[i].string();
        else
            os << xs[i];
    }
    return os.str();
}

struct Field {
    std::string key;
    std::function<std::string()> get;
    std::function<void(std::string_view)> set;
};

template <class T>
Field integer_field(std::string key, T& ref) {
    return {key, [&ref] { return std::to_string(ref); },
            [&ref, key](std::string_view v) { ref = parse_integer<T>(key, v); }};
}

Field double_field(std::string key, double& ref) {
    return {key, [&ref] { return format_double(ref); }, [&ref, key](std::string_view v) { ref = parse_double(key, v); }};
}

Field bool_field(std::string key, bool& ref) {
    return {key, [&ref] { return std::string(ref ? "true" : "false"); },
            [&ref, key](std::string_view v) { ref = parse_bool(key, v); }};
}

Field string_field(std::string key, std::string& ref) {
    return {key, [&ref] { return ref; }, [&ref](std::string_view v) { ref = std::string(v); }};
}

Field path_field(std::string key, std::filesystem::path& ref) {
    return {key, [&ref] { return ref.string(); }, [&ref](std::string_view v) { ref = std::filesystem::path(v); }};
}

Field path_list_field(std::string key, std::vector<std::filesystem::path>& ref) {
    return {key, [&ref] { return join(ref); },
            [&ref](std::string_view v) {
                ref.clear();
                for (auto item : split_list(v))
                    if (!item.empty()) ref.emplace_back(item);
            }};
}

void schema_fields(std::vector<Field>& f, const std::string& prefix, TripSchema& s) {
    f.push_back(string_field(prefix + ".pickup_time", s.pickup_time));
    f.push_back(string_field(prefix + ".dropoff_time", s.dropoff_time));
    f.push_back(string_field(prefix + ".pickup_zone", s.pickup_zone));
    f.push_back(string_field(prefix + ".dropoff_zone", s.dropoff_zone));
    f.push_back({prefix + ".delimiter",
                 [&s] { return s.delimiter == '\t' ? std::string("tab") : std::string(1, s.delimiter); },
                 [&s, key = prefix + ".delimiter"](std::string_view v) { s.delimiter = parse_char(key, v); }});
}

std::vector<Field> fields(RunConfig& c) {
    std::vector<Field> f;
    f.push_back(integer_field("seed", c.seed));
    f.push_back(path_field("paths.data_dir", c.paths.data_dir));
    f.push_back(path_field("paths.run_dir", c.paths.run_dir));
    f.push_back(path_list_field("paths.taxi_trips", c.paths.taxi_trips));
    f.push_back(path_list_field("paths.aux_trips", c.paths.aux_trips));

    f.push_back(integer_field("data.days", c.data.days));
    f.push_back(integer_field("data.intervals_per_day", c.data.intervals_per_day));
    f.push_back(integer_field("data.history", c.data.history));

    f.push_back(string_field("ingest.epoch", c.ingest.epoch));
    f.push_back(string_field("ingest.zones", c.ingest.zones));
    f.push_back(integer_field("ingest.threads", c.ingest.threads));
    schema_fields(f, "ingest.taxi", c.ingest.taxi);
    schema_fields(f, "ingest.aux", c.ingest.aux);

    f.push_back(integer_field("synth.zones", c.synth.zones));
    f.push_back(double_field("synth.base_intensity", c.synth.base_intensity));
    f.push_back(double_field("synth.density", c.synth.density));
    f.push_back({"synth.profile", [&c] { return join(c.synth.profile); },
                 [&c](std::string_view v) {
                     c.synth.profile.clear();
                     for (auto item : split_list(v)) c.synth.profile.push_back(parse_double("synth.profile", item));
                 }});
    f.push_back(double_field("synth.rho", c.synth.rho));
    f.push_back(double_field("synth.lag", c.synth.lag));
    f.push_back(double_field("synth.noise", c.synth.noise));
    f.push_back(double_field("synth.persistence", c.synth.persistence));
    f.push_back(double_field("synth.common", c.synth.common));
    f.push_back(double_field("synth.aux_scale", c.synth.aux_scale));

    f.push_back({"model.architecture", [&c] { return std::string(to_string(c.model.architecture)); },
                 [&c](std::string_view v) { c.model.architecture = parse_architecture(v); }});
    f.push_back(integer_field("model.gcn_width", c.model.gcn_width));
    f.push_back(integer_field("model.embed_width", c.model.embed_width));
    f.push_back(integer_field("model.recurrent_width", c.model.recurrent_width));
    f.push_back({"model.fc_widths", [&c] { return join(c.model.fc_widths); },
                 [&c](std::string_view v) {
                     c.model.fc_widths.clear();
                     for (auto item : split_list(v)) c.model.fc_widths.push_back(parse_integer<int>("model.fc_widths", item));
                 }});
    f.push_back(integer_field("model.graph_width", c.model.graph_width));
    f.push_back(integer_field("model.cheb_order", c.model.cheb_order));
    f.push_back(double_field("model.dropout", c.model.dropout));
    f.push_back(bool_field("model.aux_first", c.model.aux_first));

    f.push_back(double_field("train.learning_rate", c.train.learning_rate));
    f.push_back(integer_field("train.batch_size", c.train.batch_size));
    f.push_back(integer_field("train.epochs", c.train.epochs));
    f.push_back(integer_field("train.patience", c.train.patience));
    f.push_back(double_field("train.split_fraction", c.train.split_fraction));
    f.push_back(double_field("train.validation_fraction", c.train.validation_fraction));
    f.push_back(bool_field("train.random_split", c.train.random_split));
    f.push_back(integer_field("train.threads", c.train.threads));

    f.push_back(bool_field("run.parallel", c.parallel_runs));
    return f;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
    for (auto& f : fields(*this))
        if (f.key == key) {
            f.set(trim(value));
            return;
        }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::apply_text(std::string_view text, std::string_view origin) {
    std::size_t line_no = 0, start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
        ++line_no;
        start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected 'key = value'");
        try {
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_text(ss.str(), path.string());
}

void RunConfig::apply_environment(const std::function<std::optional<std::string>(const char*)>& getenv) {
    static constexpr std::pair<const char*, const char*> kVars[] = {
        {"FLOWFUSE_DATA_DIR", "paths.data_dir"},
        {"FLOWFUSE_RUN_DIR", "paths.run_dir"},
        {"FLOWFUSE_TAXI_TRIPS", "paths.taxi_trips"},
        {"FLOWFUSE_AUX_TRIPS", "paths.aux_trips"},
    };
    for (const auto& [var, key] : kVars)
        if (auto v = getenv(var)) set(key, *v);
}

void RunConfig::apply_environment() {
    apply_environment([](const char* name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name)) return std::string(v);
        return std::nullopt;
    });
}

void RunConfig::validate() const {
    if (data.days < 1) throw ConfigError("data.days must be >= 1");
    if (data.intervals_per_day < 1) throw ConfigError("data.intervals_per_day must be >= 1");
    if (data.history < 1) throw ConfigError("data.history must be >= 1");
    if (ingest.threads < 1) throw ConfigError("ingest.threads must be >= 1");
    if (!parse_timestamp(ingest.epoch)) throw ConfigError("ingest.epoch: cannot parse '" + ingest.epoch + "'");
    timeline().validate();
    ZoneRegistry::parse(ingest.zones);
    synth_config().validate();
    model_config(1).validate();
    train_config().validate();
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& f : fields(const_cast<RunConfig&>(*this))) os << f.key << " = " << f.get() << '\n';
    return os.str();
}

std::vector<std::string> RunConfig::keys() {
    RunConfig c;
    std::vector<std::string> out;
    for (const auto& f : fields(c)) out.push_back(f.key);
    return out;
}

std::uint64_t RunConfig::derived_seed(SeedTag tag) const {
    return derive_seed(seed, {static_cast<std::uint64_t>(tag)});
}

SynthConfig RunConfig::synth_config() const {
    SynthConfig s = synth;
    s.days = data.days;
    s.intervals_per_day = data.intervals_per_day;
    s.seed = derived_seed(SeedTag::Synth);
    return s;
}

ModelConfig RunConfig::model_config(int zones) const { return model_config(zones, model.architecture); }

ModelConfig RunConfig::model_config(int zones, Architecture arch) const {
    ModelConfig m = model;
    m.zones = zones;
    m.history = data.history;
    m.intervals_per_day = data.intervals_per_day;
    m.architecture = arch;
    return m;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t = train;
    t.seed = derived_seed(SeedTag::Train);
    return t;
}

DatasetSpec RunConfig::dataset_spec() const {
    DatasetSpec d;
    d.interval_count = static_cast<std::int64_t>(data.days) * data.intervals_per_day;
    d.history = data.history;
    d.intervals_per_day = data.intervals_per_day;
    d.split_fraction = train.split_fraction;
    d.random_split = train.random_split;
    d.split_seed = derived_seed(SeedTag::Split);
    return d;
}

TimelineSpec RunConfig::timeline() const {
    TimelineSpec t;
    const auto epoch = parse_timestamp(ingest.epoch);
    if (!epoch) throw ConfigError("ingest.epoch: cannot parse '" + ingest.epoch + "'");
    t.epoch = *epoch;
    t.days = data.days;
    t.intervals_per_day = data.intervals_per_day;
    return t;
}

}  // namespace flowfuse
