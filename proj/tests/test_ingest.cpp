#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "doctest.h"
#include "flowfuse/errors.hpp"
#include "flowfuse/ingest.hpp"
#include "flowfuse/random.hpp"

using namespace flowfuse;

namespace {

std::map<std::string, std::string> read_expected(const std::string& path) {
    std::ifstream in(path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

const ZoneRegistry& nyc_zones() {
    static const ZoneRegistry r = ZoneRegistry::range(1, 265);
    return r;
}

Timestamp jan1() { return *parse_timestamp("2021-01-01"); }

}  // namespace

TEST_CASE("timestamp parsing") {
    CHECK(parse_timestamp("1970-01-01 00:00:00") == 0);
    CHECK(parse_timestamp("2021-01-01") == 1609459200);
    CHECK(parse_timestamp("2021-01-01T03:00:00") == 1609459200 + 3 * 3600);
    CHECK(parse_timestamp("1609459200") == 1609459200);
    CHECK_FALSE(parse_timestamp("2021-02-30 00:00:00"));
    CHECK_FALSE(parse_timestamp("2021-01-01 24:00:00"));
    CHECK_FALSE(parse_timestamp("garbage"));
    CHECK_FALSE(parse_timestamp(""));
}

TEST_CASE("zone registry") {
    auto r = ZoneRegistry::parse("5, 1-3,10");
    CHECK(r.size() == 5);
    CHECK(r.index_of(5) == 0u);
    CHECK(r.index_of(2) == 2u);
    CHECK(r.index_of(10) == 4u);
    CHECK_FALSE(r.index_of(4));
    CHECK_THROWS_AS(ZoneRegistry::parse("1,2,2"), ConfigError);
    CHECK_THROWS_AS(ZoneRegistry::parse("x"), ConfigError);
    CHECK(nyc_zones().size() == 265);
}

TEST_CASE("interval index is bijective with (day, slot)") {
    for (std::int64_t g = 0; g < 248; ++g) {
        IntervalIndex i{g};
        CHECK(IntervalIndex::from_day_slot(i.day(8), i.slot(8), 8) == i);
    }
}

TEST_CASE("4-row fixture with one malformed timestamp") {
    std::istringstream in(
        "tpep_pickup_datetime,tpep_dropoff_datetime,PULocationID,DOLocationID\n"
        "2021-01-01 00:10:00,2021-01-01 00:20:00,1,2\n"
        "2021-01-01 0x:10:00,2021-01-01 00:20:00,1,2\n"
        "2021-01-01 05:10:00,2021-01-01 05:20:00,3,3\n"
        "2021-01-02 23:59:59,2021-01-03 00:20:00,265,1\n");
    auto parsed = parse_trips(in, Platform::Taxi, TripSchema{}, nyc_zones());
    CHECK(parsed.records.size() == 3);
    CHECK(parsed.stats.skipped() == 1);
    CHECK(parsed.stats.malformed == 1);
    CHECK(parsed.records[2].pickup_zone == 265);
}

TEST_CASE("empty file with a valid header") {
    std::istringstream in("tpep_pickup_datetime,tpep_dropoff_datetime,PULocationID,DOLocationID\n");
    auto parsed = parse_trips(in, Platform::Taxi, TripSchema{}, nyc_zones());
    CHECK(parsed.records.empty());
    CHECK(parsed.stats.skipped() == 0);
}

TEST_CASE("missing header column is a configuration error") {
    std::istringstream in("pickup,dropoff,PULocationID,DOLocationID\n");
    CHECK_THROWS_AS(parse_trips(in, Platform::Taxi, TripSchema{}, nyc_zones()), ConfigError);
    std::istringstream empty("");
    CHECK_THROWS_AS(parse_trips(empty, Platform::Taxi, TripSchema{}, nyc_zones()), ConfigError);
}

TEST_CASE("aux schema defaults and out-of-registry zones") {
    std::istringstream in(
        "hvfhs_license_num,pickup_datetime,dropoff_datetime,PULocationID,DOLocationID\n"
        "HV0005,2021-01-01 00:10:00,2021-01-01 00:20:00,1,2\n"
        "HV0005,2021-01-01 00:10:00,2021-01-01 00:20:00,1,266\n"
        "\"HV0005\",\"2021-01-01 00:10:00\",\"2021-01-01 00:20:00\",\"7\",\"8\"\n");
    auto parsed = parse_trips(in, Platform::Aux, TripSchema::defaults_for(Platform::Aux), nyc_zones());
    CHECK(parsed.records.size() == 2);
    CHECK(parsed.stats.unknown_zone == 1);
    CHECK(parsed.records[1].platform == Platform::Aux);
    CHECK(parsed.records[1].dropoff_zone == 8);
}

TEST_CASE("10,000-row fixture matches the independent recount") {
    const std::string dir = FLOWFUSE_TEST_DATA_DIR;
    auto expected = read_expected(dir + "/trips_10k.expected");
    REQUIRE(expected.count("accepted") == 1);
    auto parsed = parse_trips(std::filesystem::path(dir + "/trips_10k.csv"), Platform::Taxi,
                              TripSchema{}, nyc_zones());
    CHECK(parsed.stats.accepted == std::stoul(expected["accepted"]));
    CHECK(parsed.records.size() == std::stoul(expected["accepted"]));
    CHECK(parsed.stats.malformed == std::stoul(expected["malformed"]));
    CHECK(parsed.stats.unknown_zone == std::stoul(expected["unknown_zone"]));

    TimelineSpec tl{jan1(), 8, 31};
    auto disc = discretize(parsed.records, tl);
    CHECK(disc.out_of_range == 0);
    std::vector<std::int64_t> totals(248, 0);
    for (const auto& r : disc.rows) totals[static_cast<std::size_t>(r.interval)] += r.count;
    std::istringstream per(expected["per_interval"]);
    std::string tok;
    std::size_t i = 0;
    while (std::getline(per, tok, ',')) {
        CHECK(totals.at(i) == std::stoll(tok));
        ++i;
    }
    CHECK(i == 248);
}

TEST_CASE("interval boundaries are half-open") {
    const Timestamp e = jan1();
    std::vector<TripRecord> trips = {
        {e + 2 * 3600 + 59 * 60 + 59, e + 4 * 3600, 1, 2, Platform::Taxi},
        {e + 3 * 3600, e + 4 * 3600, 1, 2, Platform::Taxi},
    };
    auto d = discretize(trips, TimelineSpec{e, 8, 1});
    REQUIRE(d.rows.size() == 2);
    CHECK(d.rows[0].interval == 0);
    CHECK(d.rows[1].interval == 1);
}

TEST_CASE("31 days at P=8 spans global indices 0..247") {
    const Timestamp e = jan1();
    std::vector<TripRecord> trips = {
        {e, e, 1, 1, Platform::Taxi},
        {e + 31 * 86400 - 1, e + 31 * 86400, 1, 1, Platform::Taxi},
        {e + 31 * 86400, e + 31 * 86400, 1, 1, Platform::Taxi},
        {e - 1, e, 1, 1, Platform::Taxi},
    };
    auto d = discretize(trips, TimelineSpec{e, 8, 31});
    REQUIRE(d.rows.size() == 2);
    CHECK(d.rows.front().interval == 0);
    CHECK(d.rows.back().interval == 247);
    CHECK(d.out_of_range == 2);
}

TEST_CASE("invalid timelines are rejected") {
    std::vector<TripRecord> none;
    CHECK_THROWS_AS(discretize(none, TimelineSpec{0, 7, 1}), ConfigError);
    CHECK_THROWS_AS(discretize(none, TimelineSpec{0, 8, 0}), ConfigError);
}

TEST_CASE("random trips: per-interval totals match a naive recount; invariants") {
    Rng rng(11);
    const Timestamp e = jan1();
    std::vector<TripRecord> trips;
    for (int i = 0; i < 1000; ++i) {
        const Timestamp t = e + static_cast<Timestamp>(rng.below(2 * 86400));
        trips.push_back({t, t + static_cast<Timestamp>(rng.below(7200)), 1 + static_cast<int>(rng.below(10)),
                         1 + static_cast<int>(rng.below(10)), Platform::Taxi});
    }
    TimelineSpec tl{e, 8, 2};
    auto d = discretize(trips, tl);

    std::vector<std::int64_t> naive(16, 0);
    for (const auto& t : trips) naive[static_cast<std::size_t>((t.pickup_time - e) / 10800)] += 1;
    std::vector<std::int64_t> got(16, 0);
    std::int64_t total = 0;
    for (const auto& r : d.rows) {
        got[static_cast<std::size_t>(r.interval)] += r.count;
        total += r.count;
    }
    CHECK(got == naive);
    CHECK(total == 1000);

    for (std::size_t i = 1; i < d.rows.size(); ++i) {
        const auto& a = d.rows[i - 1];
        const auto& b = d.rows[i];
        CHECK(std::tie(a.interval, a.origin, a.dest) < std::tie(b.interval, b.origin, b.dest));
    }

    // Dropoff times do not influence assignment.
    auto perturbed = trips;
    for (auto& t : perturbed) t.dropoff_time += static_cast<Timestamp>(rng.below(50000));
    CHECK(discretize(perturbed, tl).rows == d.rows);
    CHECK(discretize(trips, tl).rows == d.rows);
}

TEST_CASE("edge list round trip and strict reading") {
    std::vector<EdgeCount> rows = {{0, 1, 2, 5}, {0, 2, 1, 2}, {3, 1, 1, 7}};
    std::ostringstream out;
    write_edge_list(out, rows);
    CHECK(out.str().rfind("global_index,origin_zone,dest_zone,count\n", 0) == 0);
    std::istringstream in(out.str());
    CHECK(read_edge_list(in) == rows);

    std::istringstream bad_header("a,b,c,d\n");
    CHECK_THROWS_AS(read_edge_list(bad_header), DataError);
    std::istringstream unsorted("global_index,origin_zone,dest_zone,count\n1,1,1,1\n0,1,1,1\n");
    CHECK_THROWS_AS(read_edge_list(unsorted), DataError);
    std::istringstream dup("global_index,origin_zone,dest_zone,count\n0,1,1,1\n0,1,1,2\n");
    CHECK_THROWS_AS(read_edge_list(dup), DataError);
    std::istringstream neg("global_index,origin_zone,dest_zone,count\n0,1,1,-1\n");
    CHECK_THROWS_AS(read_edge_list(neg), DataError);
}

TEST_CASE("parsing several files concurrently is order-stable") {
    const std::string dir = FLOWFUSE_TEST_DATA_DIR;
    std::vector<std::filesystem::path> paths(3, std::filesystem::path(dir + "/trips_10k.csv"));
    auto serial = parse_trip_files(paths, Platform::Taxi, TripSchema{}, nyc_zones(), 1);
    auto parallel = parse_trip_files(paths, Platform::Taxi, TripSchema{}, nyc_zones(), 3);
    REQUIRE(serial.records.size() == parallel.records.size());
    CHECK(serial.stats.accepted == parallel.stats.accepted);
    TimelineSpec tl{jan1(), 8, 31};
    CHECK(discretize(serial.records, tl).rows == discretize(parallel.records, tl).rows);
}
