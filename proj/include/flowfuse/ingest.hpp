#pragma once

// Trip-record parsing and time discretization.
//
// Raw trips are bucketed by pickup time into half-open intervals
// [epoch + g*len, epoch + (g+1)*len) on one contiguous global timeline,
// then aggregated into (interval, origin, dest, count) rows: the edge-list
// interchange format consumed by graphbuild.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace flowfuse {

enum class Platform { Taxi, Aux };

std::string_view to_string(Platform p);
Platform parse_platform(std::string_view s);

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

struct TripRecord {
    Timestamp pickup_time = 0;
    Timestamp dropoff_time = 0;
    int pickup_zone = 0;
    int dropoff_zone = 0;
    Platform platform = Platform::Taxi;
};

/// Position on the global interval timeline; day = g / P, slot = g mod P.
struct IntervalIndex {
    std::int64_t global = 0;

    static IntervalIndex from_day_slot(std::int64_t day, int slot, int intervals_per_day);
    std::int64_t day(int intervals_per_day) const { return global / intervals_per_day; }
    int slot(int intervals_per_day) const { return static_cast<int>(global % intervals_per_day); }

    friend auto operator<=>(const IntervalIndex&, const IntervalIndex&) = default;
};

/// Ordered set of zone ids; position in the list is the matrix index.
class ZoneRegistry {
public:
    ZoneRegistry() = default;
    explicit ZoneRegistry(std::vector<int> zone_ids);

    /// Contiguous ids first..=last.
    static ZoneRegistry range(int first, int last);
    /// "1-265", "3,7,9", or a mix such as "1-4,10".
    static ZoneRegistry parse(std::string_view spec);
    /// Whitespace- or comma-separated ids from a file.
    static ZoneRegistry load(const std::filesystem::path& path);

    std::size_t size() const { return ids_.size(); }
    const std::vector<int>& ids() const { return ids_; }
    int id_at(std::size_t index) const { return ids_.at(index); }
    std::optional<std::size_t> index_of(int zone_id) const;
    bool contains(int zone_id) const { return index_.contains(zone_id); }

private:
    std::vector<int> ids_;
    std::unordered_map<int, std::size_t> index_;
};

/// Column names for a delimiter-separated trip file.
struct TripSchema {
    std::string pickup_time = "tpep_pickup_datetime";
    std::string dropoff_time = "tpep_dropoff_datetime";
    std::string pickup_zone = "PULocationID";
    std::string dropoff_zone = "DOLocationID";
    char delimiter = ',';

    /// NYC TLC names: yellow taxi for Taxi, high-volume for-hire for Aux.
    static TripSchema defaults_for(Platform p);
};

/// Parse "YYYY-MM-DD", "YYYY-MM-DD HH:MM:SS" (or with 'T'), or integer
/// epoch seconds. Returns nullopt on anything else.
std::optional<Timestamp> parse_timestamp(std::string_view text);

struct ParseStats {
    std::size_t accepted = 0;
    std::size_t malformed = 0;     // unparseable fields or dropoff before pickup
    std::size_t unknown_zone = 0;  // zone id missing from the registry
    std::size_t skipped() const { return malformed + unknown_zone; }
};

/// Row-at-a-time reader over one trip file. Single owner.
class TripReader {
public:
    /// Throws ConfigError when the header lacks a mapped column.
    TripReader(std::istream& in, Platform platform, const TripSchema& schema,
               const ZoneRegistry& registry);

    /// Next valid record; invalid rows are skipped and counted.
    std::optional<TripRecord> next();
    const ParseStats& stats() const { return stats_; }

private:
    std::istream& in_;
    Platform platform_;
    const ZoneRegistry& registry_;
    char delim_;
    std::size_t col_pickup_time_ = 0;
    std::size_t col_dropoff_time_ = 0;
    std::size_t col_pickup_zone_ = 0;
    std::size_t col_dropoff_zone_ = 0;
    std::size_t min_columns_ = 0;
    ParseStats stats_;
    std::string line_;
    std::vector<std::string_view> fields_;
};

struct ParsedTrips {
    std::vector<TripRecord> records;
    ParseStats stats;
};

ParsedTrips parse_trips(std::istream& in, Platform platform, const TripSchema& schema,
                        const ZoneRegistry& registry);
ParsedTrips parse_trips(const std::filesystem::path& path, Platform platform,
                        const TripSchema& schema, const ZoneRegistry& registry);

/// Parse several files, concurrently when threads > 1. Records are
/// concatenated in file order, so the result does not depend on scheduling.
ParsedTrips parse_trip_files(std::span<const std::filesystem::path> paths, Platform platform,
                             const TripSchema& schema, const ZoneRegistry& registry,
                             unsigned threads = 1);

/// One aggregated edge-list row. Zone fields hold registry ids, not indices.
struct EdgeCount {
    std::int64_t interval = 0;
    int origin = 0;
    int dest = 0;
    std::int64_t count = 0;

    friend bool operator==(const EdgeCount&, const EdgeCount&) = default;
};

struct TimelineSpec {
    Timestamp epoch = 0;
    int intervals_per_day = 8;
    int days = 1;

    std::int64_t interval_count() const {
        return static_cast<std::int64_t>(days) * intervals_per_day;
    }
    Timestamp interval_seconds() const { return 86400 / intervals_per_day; }
    /// Throws ConfigError unless P divides 86400 and days >= 1.
    void validate() const;
};

struct Discretized {
    std::vector<EdgeCount> rows;  // sorted by (interval, origin, dest)
    std::size_t out_of_range = 0;
};

/// Bucket trips by pickup time; trips outside [epoch, horizon) are skipped.
Discretized discretize(std::span<const TripRecord> records, const TimelineSpec& timeline);

inline constexpr std::string_view kEdgeListHeader = "global_index,origin_zone,dest_zone,count";

void write_edge_list(std::ostream& out, std::span<const EdgeCount> rows);
void write_edge_list(const std::filesystem::path& path, std::span<const EdgeCount> rows);

/// Strict reader: any malformed or out-of-order row is a DataError.
std::vector<EdgeCount> read_edge_list(std::istream& in);
std::vector<EdgeCount> read_edge_list(const std::filesystem::path& path);

}  // namespace flowfuse
