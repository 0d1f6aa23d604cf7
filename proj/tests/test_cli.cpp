#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "flowfuse/cli.hpp"
#include "flowfuse/config.hpp"
#include "flowfuse/errors.hpp"
#include "flowfuse/pipeline.hpp"

using namespace flowfuse;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

// Each case works in its own scratch directory; every command gets the
// data and run directories plus a short training schedule.
class Workspace {
public:
    explicit Workspace(const std::string& name)
        : root_(std::filesystem::temp_directory_path() / ("flowfuse_cli_" + name)) {
        std::filesystem::remove_all(root_);
        std::filesystem::create_directories(root_);
    }
    ~Workspace() { std::filesystem::remove_all(root_); }

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path run_dir() const { return root_ / "run"; }

    Result run(std::vector<std::string> args) const {
        std::vector<std::string> full = {"--set", "paths.data_dir=" + (root_ / "data").string(),
                                         "--set", "paths.run_dir=" + run_dir().string(),
                                         "--set", "train.epochs=3",
                                         "--set", "synth.zones=6",
                                         "--set", "data.days=4"};
        full.insert(full.end(), args.begin(), args.end());
        std::ostringstream out, err;
        const int code = cli::run(full, out, err);
        return {code, out.str(), err.str()};
    }

private:
    std::filesystem::path root_;
};

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::vector<std::string> file_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return lines(ss.str());
}

}  // namespace

TEST_CASE("synth, train, evaluate, predict") {
    Workspace ws("pipeline");
    auto r = ws.run({"synth"});
    REQUIRE(r.code == 0);
    CHECK(std::filesystem::exists(ws.root() / "data" / "zones.txt"));

    r = ws.run({"train"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    for (const char* f : {"config.txt", "model.ckpt", "loss_curve.csv", "transforms.txt"})
        CHECK(std::filesystem::exists(ws.run_dir() / f));
    CHECK(file_lines(ws.run_dir() / "loss_curve.csv").size() == 4);

    r = ws.run({"evaluate"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("mae = ") != std::string::npos);
    CHECK(r.out.find("mean_predictor.mae = ") != std::string::npos);
    CHECK(file_lines(ws.run_dir() / "zone_errors.csv").size() == 7);

    // 4 days of 8 intervals: targets 8..31.
    r = ws.run({"predict", "--interval", "20"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto rows = lines(r.out);
    REQUIRE(rows.size() == 7);
    CHECK(rows[0] == "zone_id,pred_inflow,pred_outflow,true_inflow,true_outflow");
    CHECK(rows[1].rfind("1,", 0) == 0);

    CHECK(ws.run({"predict", "--interval", "3"}).code == cli::kData);
    CHECK(ws.run({"predict", "--interval", "32"}).code == cli::kData);
}

TEST_CASE("evaluate reuses the saved configuration") {
    Workspace ws("snapshot");
    REQUIRE(ws.run({"synth"}).code == 0);
    REQUIRE(ws.run({"--set", "model.architecture=gru", "train"}).code == 0);
    // No architecture on this command line; the snapshot supplies gru.
    const auto r = ws.run({"evaluate"});
    CHECK_MESSAGE(r.code == 0, r.err);
    // An explicit conflicting override changes the shape and is rejected.
    CHECK(ws.run({"--set", "model.recurrent_width=7", "evaluate"}).code == cli::kConfig);
}

TEST_CASE("comparison tables") {
    Workspace ws("tables");
    REQUIRE(ws.run({"synth"}).code == 0);
    const auto csv = (ws.root() / "b.csv").string();
    auto r = ws.run({"baselines", "--csv", csv});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    auto rows = file_lines(csv);
    // header, 7 models, mean predictor
    REQUIRE(rows.size() == 9);
    CHECK(rows[0] == "model,mae,mse,best_epoch,epochs_run,seconds");
    CHECK(rows[1].rfind("full,", 0) == 0);
    CHECK(rows[7].rfind("cgcn,", 0) == 0);
    for (const char* name : {"full", "gcn", "lstm", "gru", "rnn", "gat", "cgcn"})
        CHECK(std::filesystem::exists(ws.run_dir() / "baselines" / name / "model.ckpt"));

    r = ws.run({"ablate"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    rows = file_lines(ws.run_dir() / "ablations" / "table.csv");
    REQUIRE(rows.size() == 6);
    CHECK(rows[4].rfind("no_fusion,", 0) == 0);
    CHECK(r.out.find("no_temporal") != std::string::npos);
}

TEST_CASE("parallel comparison matches sequential") {
    Workspace ws("parallel");
    REQUIRE(ws.run({"synth"}).code == 0);
    REQUIRE(ws.run({"ablate", "--csv", (ws.root() / "seq.csv").string()}).code == 0);
    REQUIRE(ws.run({"ablate", "--parallel", "--csv", (ws.root() / "par.csv").string()}).code == 0);
    auto strip_seconds = [](std::vector<std::string> rows) {
        for (auto& r : rows) r = r.substr(0, r.rfind(','));
        return rows;
    };
    CHECK(strip_seconds(file_lines(ws.root() / "seq.csv")) == strip_seconds(file_lines(ws.root() / "par.csv")));
}

TEST_CASE("exit codes") {
    Workspace ws("codes");
    CHECK(ws.run({}).code == cli::kConfig);
    CHECK(ws.run({"frobnicate"}).code == cli::kConfig);
    CHECK(ws.run({"--help"}).code == cli::kOk);

    auto r = ws.run({"--set", "model.bogus=1", "synth"});
    CHECK(r.code == cli::kConfig);
    CHECK(r.err.find("model.bogus") != std::string::npos);
    CHECK(ws.run({"--set", "train.epochs=many", "synth"}).code == cli::kConfig);
    CHECK(ws.run({"--set", "synth.rho=2", "synth"}).code == cli::kConfig);

    // No data yet.
    r = ws.run({"train"});
    CHECK(r.code == cli::kData);
    CHECK(r.err.find("zones.txt") != std::string::npos);
    CHECK(ws.run({"evaluate"}).code == cli::kData);
    CHECK(ws.run({"ingest"}).code == cli::kConfig);

    REQUIRE(ws.run({"synth"}).code == 0);
    r = ws.run({"--set", "train.learning_rate=1e200", "train"});
    CHECK(r.code == cli::kNumerical);
    CHECK(r.err.find("non-finite") != std::string::npos);

    std::ofstream(ws.root() / "data" / "taxi.csv") << "global_index,origin_zone,dest_zone,count\n0,1,2,x\n";
    CHECK(ws.run({"train"}).code == cli::kData);
}

TEST_CASE("ingest raw trips") {
    Workspace ws("ingest");
    const auto taxi = ws.root() / "yellow.csv";
    const auto aux = ws.root() / "fhv.csv";
    std::ofstream(taxi) << "tpep_pickup_datetime,tpep_dropoff_datetime,PULocationID,DOLocationID\n"
                        << "2021-01-01 00:10:00,2021-01-01 00:20:00,1,2\n"
                        << "2021-01-01 00:40:00,2021-01-01 00:50:00,1,2\n"
                        << "2021-01-01 04:00:00,2021-01-01 04:30:00,3,1\n"
                        << "garbage\n";
    std::ofstream(aux) << "pickup_datetime,dropoff_datetime,PULocationID,DOLocationID\n"
                       << "2021-01-02 01:00:00,2021-01-02 01:05:00,2,3\n";
    const auto r = ws.run({"--set", "paths.taxi_trips=" + taxi.string(), "--set", "paths.aux_trips=" + aux.string(),
                           "--set", "ingest.zones=1-3", "ingest"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.err.find("1 malformed") != std::string::npos);
    CHECK(file_lines(ws.root() / "data" / "taxi.csv") ==
          std::vector<std::string>{"global_index,origin_zone,dest_zone,count", "0,1,2,2", "1,3,1,1"});
    CHECK(file_lines(ws.root() / "data" / "aux.csv") ==
          std::vector<std::string>{"global_index,origin_zone,dest_zone,count", "8,2,3,1"});
    CHECK(file_lines(ws.root() / "data" / "zones.txt") == std::vector<std::string>{"1", "2", "3"});
}

TEST_CASE("configuration text round trip") {
    RunConfig a;
    a.seed = 99;
    a.set("model.fc_widths", "8, 9,10");
    a.set("synth.profile", "0.5,1.5,1,1,1,1,1,1");
    a.set("train.learning_rate", "0.1");
    a.set("synth.noise", "0.30000000000000004");
    a.set("ingest.taxi.delimiter", "tab");
    a.set("paths.taxi_trips", "a.csv,b.csv");
    a.set("model.architecture", "cgcn");
    a.set("run.parallel", "yes");

    RunConfig b;
    b.apply_text(a.to_text());
    CHECK(b.to_text() == a.to_text());
    CHECK(b.model.fc_widths == std::vector<int>{8, 9, 10});
    CHECK(b.synth.noise == a.synth.noise);
    CHECK(b.ingest.taxi.delimiter == '\t');
    CHECK(b.paths.taxi_trips.size() == 2);
    CHECK(b.model.architecture == Architecture::Cgcn);
    CHECK(b.parallel_runs);
    CHECK(lines(a.to_text()).size() == RunConfig::keys().size());
}

TEST_CASE("configuration precedence and errors") {
    RunConfig c;
    c.apply_text("# comment\nseed = 5\ntrain.epochs = 7  # trailing\n\npaths.run_dir = from_file\n");
    CHECK(c.seed == 5);
    CHECK(c.train.epochs == 7);
    c.apply_environment([](const char* name) -> std::optional<std::string> {
        if (std::string(name) == "FLOWFUSE_RUN_DIR") return "from_env";
        return std::nullopt;
    });
    CHECK(c.paths.run_dir == "from_env");
    CHECK(c.paths.data_dir == "data");

    try {
        c.apply_text("seed = 1\nnot a pair\n", "run.cfg");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("run.cfg:2") != std::string::npos);
    }
    CHECK_THROWS_AS(c.set("model.dropout", "0.1x"), ConfigError);
    CHECK_THROWS_AS(c.set("model.aux_first", "maybe"), ConfigError);
    CHECK_THROWS_AS(c.apply_file("/nonexistent/flowfuse.cfg"), ConfigError);

    RunConfig bad;
    bad.data.intervals_per_day = 7;  // does not divide a day into whole seconds
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.ingest.epoch = "yesterday";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("derived settings") {
    RunConfig c;
    c.seed = 3;
    c.data.days = 31;
    const auto spec = c.dataset_spec();
    CHECK(spec.interval_count == 248);
    CHECK(c.synth_config().days == 31);
    CHECK(c.model_config(20).zones == 20);
    CHECK(c.model_config(20, Architecture::Gat).architecture == Architecture::Gat);
    CHECK(c.derived_seed(SeedTag::Synth) != c.derived_seed(SeedTag::Init));
    CHECK(c.train_config().seed == c.derived_seed(SeedTag::Train));
    CHECK(spec.split_seed == c.derived_seed(SeedTag::Split));
}

TEST_CASE("shipped example configuration is valid") {
    RunConfig c;
    c.apply_file(std::filesystem::path(FLOWFUSE_TEST_DATA_DIR) / ".." / ".." / "configs" / "example.cfg");
    CHECK_NOTHROW(c.validate());
    CHECK(c.to_text() == RunConfig{}.to_text());
}
