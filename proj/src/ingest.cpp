#include "flowfuse/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <future>
#include <map>
#include <sstream>
#include <tuple>

#include "flowfuse/errors.hpp"

namespace flowfuse {

std::string_view to_string(Platform p) {
    switch (p) {
        case Platform::Taxi: return "taxi";
        case Platform::Aux: return "aux";
    }
    return "?";
}

Platform parse_platform(std::string_view s) {
    if (s == "taxi") return Platform::Taxi;
    if (s == "aux") return Platform::Aux;
    throw ConfigError("unknown platform '" + std::string(s) + "' (expected taxi or aux)");
}

IntervalIndex IntervalIndex::from_day_slot(std::int64_t day, int slot, int intervals_per_day) {
    return IntervalIndex{day * intervals_per_day + slot};
}

// ---------------------------------------------------------------------------
// Zone registry

ZoneRegistry::ZoneRegistry(std::vector<int> zone_ids) : ids_(std::move(zone_ids)) {
    index_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (!index_.emplace(ids_[i], i).second)
            throw ConfigError("zone registry: duplicate zone id " + std::to_string(ids_[i]));
    }
}

ZoneRegistry ZoneRegistry::range(int first, int last) {
    if (last < first)
        throw ConfigError("zone registry: empty range " + std::to_string(first) + "-" +
                          std::to_string(last));
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(last - first + 1));
    for (int z = first; z <= last; ++z) ids.push_back(z);
    return ZoneRegistry(std::move(ids));
}

namespace {

std::optional<long long> to_integer(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    long long v = 0;
    const char* begin = s.data();
    if (*begin == '+') ++begin;
    auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Splits on `delim`; fields wrapped in double quotes have the quotes
// stripped (embedded delimiters inside quotes are honoured).
void split_fields(std::string_view line, char delim, std::vector<std::string_view>& out) {
    out.clear();
    std::size_t i = 0;
    while (true) {
        if (i < line.size() && line[i] == '"') {
            const std::size_t close = line.find('"', i + 1);
            if (close == std::string_view::npos) {
                out.push_back(line.substr(i + 1));
                return;
            }
            out.push_back(line.substr(i + 1, close - i - 1));
            const std::size_t next = line.find(delim, close);
            if (next == std::string_view::npos) return;
            i = next + 1;
            continue;
        }
        const std::size_t next = line.find(delim, i);
        if (next == std::string_view::npos) {
            out.push_back(line.substr(i));
            return;
        }
        out.push_back(line.substr(i, next - i));
        i = next + 1;
    }
}

}  // namespace

ZoneRegistry ZoneRegistry::parse(std::string_view spec) {
    std::vector<int> ids;
    std::vector<std::string_view> parts;
    split_fields(spec, ',', parts);
    for (auto part : parts) {
        part = trim(part);
        if (part.empty()) continue;
        const auto dash = part.find('-', 1);
        if (dash == std::string_view::npos) {
            auto v = to_integer(part);
            if (!v) throw ConfigError("zone registry: bad zone id '" + std::string(part) + "'");
            ids.push_back(static_cast<int>(*v));
        } else {
            auto lo = to_integer(part.substr(0, dash));
            auto hi = to_integer(part.substr(dash + 1));
            if (!lo || !hi || *hi < *lo)
                throw ConfigError("zone registry: bad range '" + std::string(part) + "'");
            for (long long z = *lo; z <= *hi; ++z) ids.push_back(static_cast<int>(z));
        }
    }
    if (ids.empty()) throw ConfigError("zone registry: no zones in '" + std::string(spec) + "'");
    return ZoneRegistry(std::move(ids));
}

ZoneRegistry ZoneRegistry::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("zone registry: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    std::replace_if(text.begin(), text.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }, ',');
    return parse(text);
}

std::optional<std::size_t> ZoneRegistry::index_of(int zone_id) const {
    auto it = index_.find(zone_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

// ---------------------------------------------------------------------------
// Schema and timestamps

TripSchema TripSchema::defaults_for(Platform p) {
    TripSchema s;
    if (p == Platform::Aux) {
        s.pickup_time = "pickup_datetime";
        s.dropoff_time = "dropoff_datetime";
    }
    return s;
}

std::optional<Timestamp> parse_timestamp(std::string_view text) {
    text = trim(text);
    if (text.empty()) return std::nullopt;
    if (text.find('-', 1) == std::string_view::npos) {
        auto v = to_integer(text);
        if (!v) return std::nullopt;
        return static_cast<Timestamp>(*v);
    }
    // YYYY-MM-DD[( |T)HH:MM:SS]
    auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
        if (pos + len > text.size()) return std::nullopt;
        int v = 0;
        for (std::size_t i = pos; i < pos + len; ++i) {
            if (text[i] < '0' || text[i] > '9') return std::nullopt;
            v = v * 10 + (text[i] - '0');
        }
        return v;
    };
    if (text.size() != 10 && text.size() != 19) return std::nullopt;
    if (text[4] != '-' || text[7] != '-') return std::nullopt;
    auto y = num(0, 4), mo = num(5, 2), d = num(8, 2);
    if (!y || !mo || !d) return std::nullopt;
    int hh = 0, mm = 0, ss = 0;
    if (text.size() == 19) {
        if ((text[10] != ' ' && text[10] != 'T') || text[13] != ':' || text[16] != ':')
            return std::nullopt;
        auto h = num(11, 2), m = num(14, 2), s = num(17, 2);
        if (!h || !m || !s || *h > 23 || *m > 59 || *s > 59) return std::nullopt;
        hh = *h;
        mm = *m;
        ss = *s;
    }
    using namespace std::chrono;
    const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)},
                             day{static_cast<unsigned>(*d)}};
    if (!ymd.ok()) return std::nullopt;
    const auto days_since = sys_days{ymd}.time_since_epoch().count();
    return static_cast<Timestamp>(days_since) * 86400 + hh * 3600 + mm * 60 + ss;
}

// ---------------------------------------------------------------------------
// Trip reader

TripReader::TripReader(std::istream& in, Platform platform, const TripSchema& schema,
                       const ZoneRegistry& registry)
    : in_(in), platform_(platform), registry_(registry), delim_(schema.delimiter) {
    if (!std::getline(in_, line_)) throw ConfigError("trip file: missing header row");
    if (!line_.empty() && line_.back() == '\r') line_.pop_back();
    split_fields(line_, delim_, fields_);
    auto find = [&](const std::string& name) {
        for (std::size_t i = 0; i < fields_.size(); ++i)
            if (trim(fields_[i]) == name) return i;
        throw ConfigError("trip file: header has no column '" + name + "'");
    };
    col_pickup_time_ = find(schema.pickup_time);
    col_dropoff_time_ = find(schema.dropoff_time);
    col_pickup_zone_ = find(schema.pickup_zone);
    col_dropoff_zone_ = find(schema.dropoff_zone);
    min_columns_ = 1 + std::max({col_pickup_time_, col_dropoff_time_, col_pickup_zone_,
                                 col_dropoff_zone_});
}

std::optional<TripRecord> TripReader::next() {
    while (std::getline(in_, line_)) {
        if (!line_.empty() && line_.back() == '\r') line_.pop_back();
        if (trim(line_).empty()) continue;
        split_fields(line_, delim_, fields_);
        if (fields_.size() < min_columns_) {
            ++stats_.malformed;
            continue;
        }
        auto pt = parse_timestamp(fields_[col_pickup_time_]);
        auto dt = parse_timestamp(fields_[col_dropoff_time_]);
        auto pz = to_integer(fields_[col_pickup_zone_]);
        auto dz = to_integer(fields_[col_dropoff_zone_]);
        if (!pt || !dt || !pz || !dz || *dt < *pt) {
            ++stats_.malformed;
            continue;
        }
        if (!registry_.contains(static_cast<int>(*pz)) || !registry_.contains(static_cast<int>(*dz))) {
            ++stats_.unknown_zone;
            continue;
        }
        ++stats_.accepted;
        return TripRecord{*pt, *dt, static_cast<int>(*pz), static_cast<int>(*dz), platform_};
    }
    return std::nullopt;
}

ParsedTrips parse_trips(std::istream& in, Platform platform, const TripSchema& schema,
                        const ZoneRegistry& registry) {
    TripReader reader(in, platform, schema, registry);
    ParsedTrips out;
    while (auto rec = reader.next()) out.records.push_back(*rec);
    out.stats = reader.stats();
    return out;
}

ParsedTrips parse_trips(const std::filesystem::path& path, Platform platform,
                        const TripSchema& schema, const ZoneRegistry& registry) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open trip file " + path.string());
    return parse_trips(in, platform, schema, registry);
}

ParsedTrips parse_trip_files(std::span<const std::filesystem::path> paths, Platform platform,
                             const TripSchema& schema, const ZoneRegistry& registry,
                             unsigned threads) {
    std::vector<ParsedTrips> parts(paths.size());
    if (threads <= 1 || paths.size() <= 1) {
        for (std::size_t i = 0; i < paths.size(); ++i)
            parts[i] = parse_trips(paths[i], platform, schema, registry);
    } else {
        std::vector<std::future<ParsedTrips>> pending;
        for (std::size_t begin = 0; begin < paths.size(); begin += threads) {
            const std::size_t end = std::min(paths.size(), begin + threads);
            pending.clear();
            for (std::size_t i = begin; i < end; ++i)
                pending.push_back(std::async(std::launch::async, [&, i] {
                    return parse_trips(paths[i], platform, schema, registry);
                }));
            for (std::size_t i = begin; i < end; ++i) parts[i] = pending[i - begin].get();
        }
    }
    ParsedTrips merged;
    for (auto& p : parts) {
        merged.records.insert(merged.records.end(), p.records.begin(), p.records.end());
        merged.stats.accepted += p.stats.accepted;
        merged.stats.malformed += p.stats.malformed;
        merged.stats.unknown_zone += p.stats.unknown_zone;
    }
    return merged;
}

// ---------------------------------------------------------------------------
// Discretization

void TimelineSpec::validate() const {
    if (intervals_per_day <= 0 || 86400 % intervals_per_day != 0)
        throw ConfigError("intervals_per_day must divide 86400, got " +
                          std::to_string(intervals_per_day));
    if (days <= 0) throw ConfigError("days must be >= 1, got " + std::to_string(days));
}

Discretized discretize(std::span<const TripRecord> records, const TimelineSpec& timeline) {
    timeline.validate();
    const Timestamp len = timeline.interval_seconds();
    const std::int64_t horizon = timeline.interval_count();
    std::map<std::tuple<std::int64_t, int, int>, std::int64_t> counts;
    Discretized out;
    for (const auto& r : records) {
        const Timestamp offset = r.pickup_time - timeline.epoch;
        if (offset < 0) {
            ++out.out_of_range;
            continue;
        }
        const std::int64_t g = offset / len;
        if (g >= horizon) {
            ++out.out_of_range;
            continue;
        }
        ++counts[{g, r.pickup_zone, r.dropoff_zone}];
    }
    out.rows.reserve(counts.size());
    for (const auto& [key, c] : counts)
        out.rows.push_back(EdgeCount{std::get<0>(key), std::get<1>(key), std::get<2>(key), c});
    return out;
}

// ---------------------------------------------------------------------------
// Edge-list files

void write_edge_list(std::ostream& out, std::span<const EdgeCount> rows) {
    out << kEdgeListHeader << '\n';
    for (const auto& r : rows)
        out << r.interval << ',' << r.origin << ',' << r.dest << ',' << r.count << '\n';
}

void write_edge_list(const std::filesystem::path& path, std::span<const EdgeCount> rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write edge list " + path.string());
    write_edge_list(out, rows);
    if (!out) throw DataError("write failed for " + path.string());
}

std::vector<EdgeCount> read_edge_list(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("edge list: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line) != kEdgeListHeader)
        throw DataError("edge list: expected header '" + std::string(kEdgeListHeader) + "'");
    std::vector<EdgeCount> rows;
    std::vector<std::string_view> f;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        split_fields(line, ',', f);
        if (f.size() != 4) throw DataError("edge list line " + std::to_string(lineno) + ": expected 4 fields");
        auto g = to_integer(f[0]), o = to_integer(f[1]), d = to_integer(f[2]), c = to_integer(f[3]);
        if (!g || !o || !d || !c || *g < 0 || *c < 0)
            throw DataError("edge list line " + std::to_string(lineno) + ": malformed row");
        EdgeCount row{*g, static_cast<int>(*o), static_cast<int>(*d), *c};
        if (!rows.empty()) {
            const auto& p = rows.back();
            if (std::tie(p.interval, p.origin, p.dest) >= std::tie(row.interval, row.origin, row.dest))
                throw DataError("edge list line " + std::to_string(lineno) +
                                ": rows must be strictly ascending by (interval, origin, dest)");
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<EdgeCount> read_edge_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open edge list " + path.string());
    return read_edge_list(in);
}

}  // namespace flowfuse
