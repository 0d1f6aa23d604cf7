#include "flowfuse/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <limits>
#include <ostream>

#include "flowfuse/config.hpp"
#include "flowfuse/errors.hpp"
#include "flowfuse/pipeline.hpp"
#include "flowfuse/synth.hpp"

namespace flowfuse::cli {

namespace {

struct GlobalOptions {
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

RunConfig resolve(const GlobalOptions& g, const std::filesystem::path* snapshot = nullptr) {
    RunConfig cfg;
    if (snapshot) cfg.apply_file(*snapshot);
    if (!g.config_file.empty()) cfg.apply_file(g.config_file);
    cfg.apply_environment();
    for (const auto& kv : g.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed) cfg.seed = *g.seed;
    cfg.validate();
    return cfg;
}

// evaluate and predict start from the configuration saved by `train`, so
// only the run directory has to be repeated on the command line.
RunConfig resolve_trained(const GlobalOptions& g) {
    const auto first = resolve(g);
    const auto snapshot = first.paths.run_dir / "config.txt";
    if (!std::filesystem::exists(snapshot))
        throw DataError("no trained model in " + first.paths.run_dir.string() + " (run `flowfuse train` first)");
    return resolve(g, &snapshot);
}

Forecaster load_model(const RunConfig& cfg, const Dataset& data) {
    Forecaster model(cfg.model_config(static_cast<int>(data.registry.size())), cfg.derived_seed(SeedTag::Init));
    load_checkpoint(cfg.paths.run_dir / "model.ckpt", model);
    return model;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out.precision(std::numeric_limits<double>::max_digits10);
    return out;
}

void cmd_synth(const GlobalOptions& g, std::ostream& out) {
    const auto cfg = resolve(g);
    const auto trace = generate(cfg.synth_config());
    write_trace(cfg.paths.data_dir, trace);
    out << "wrote " << trace.taxi.size() << " taxi rows and " << trace.aux.size() << " aux rows for "
        << trace.registry.size() << " zones to " << cfg.paths.data_dir.string() << '\n';
}

void cmd_ingest(const GlobalOptions& g, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve(g);
    if (cfg.paths.taxi_trips.empty() || cfg.paths.aux_trips.empty())
        throw ConfigError("ingest needs paths.taxi_trips and paths.aux_trips");
    const auto registry = ZoneRegistry::parse(cfg.ingest.zones);
    const auto timeline = cfg.timeline();
    std::filesystem::create_directories(cfg.paths.data_dir);

    auto one = [&](Platform p, const std::vector<std::filesystem::path>& files, const TripSchema& schema) {
        const auto parsed = parse_trip_files(files, p, schema, registry, cfg.ingest.threads);
        const auto disc = discretize(parsed.records, timeline);
        err << to_string(p) << ": " << parsed.stats.accepted << " trips accepted, " << parsed.stats.malformed
            << " malformed, " << parsed.stats.unknown_zone << " unknown zone, " << disc.out_of_range
            << " outside the timeline\n";
        const auto path = cfg.paths.data_dir / (p == Platform::Taxi ? "taxi.csv" : "aux.csv");
        write_edge_list(path, disc.rows);
        out << "wrote " << disc.rows.size() << " rows to " << path.string() << '\n';
    };
    one(Platform::Taxi, cfg.paths.taxi_trips, cfg.ingest.taxi);
    one(Platform::Aux, cfg.paths.aux_trips, cfg.ingest.aux);
    auto zones = open_out(cfg.paths.data_dir / "zones.txt");
    for (int id : registry.ids()) zones << id << '\n';
}

void cmd_train(const GlobalOptions& g, std::ostream& out) {
    const auto cfg = resolve(g);
    const auto data = load_dataset(cfg);
    const auto run = train_and_evaluate(cfg, data, cfg.model.architecture);
    write_run_artifacts(cfg.paths.run_dir, cfg, run, data.transforms);
    out << to_string(cfg.model.architecture) << ": best epoch " << run.training.best_epoch << " of "
        << run.training.curve.size() << (run.training.stopped_early ? " (stopped early)" : "") << ", test mae "
        << run.metrics.mae << ", mse " << run.metrics.mse << '\n'
        << "run directory: " << cfg.paths.run_dir.string() << '\n';
}

void cmd_evaluate(const GlobalOptions& g, std::ostream& out) {
    const auto cfg = resolve_trained(g);
    const auto data = load_dataset(cfg);
    const auto model = load_model(cfg, data);
    const auto metrics = evaluate(model, data.test, data.transforms.taxi);
    const auto reference = mean_predictor_baseline(data.train, data.test, cfg.data.intervals_per_day);
    {
        auto f = open_out(cfg.paths.run_dir / "metrics.txt");
        write_metrics(f, metrics, reference);
        auto z = open_out(cfg.paths.run_dir / "zone_errors.csv");
        write_zone_errors(z, metrics, data.registry);
    }
    write_metrics(out, metrics, reference);
}

void cmd_compare(const GlobalOptions& g, const std::vector<Architecture>& lineup, const std::string& name,
                 bool parallel_flag, const std::string& csv_path, std::ostream& out) {
    const auto cfg = resolve(g);
    const auto data = load_dataset(cfg);
    const auto table =
        compare(cfg, data, lineup, parallel_flag || cfg.parallel_runs, cfg.paths.run_dir / name);
    print_table(out, table);
    auto f = open_out(cfg.paths.run_dir / name / "table.csv");
    write_table_csv(f, table);
    if (!csv_path.empty()) {
        auto c = open_out(csv_path);
        write_table_csv(c, table);
    }
}

void cmd_predict(const GlobalOptions& g, std::int64_t interval, std::ostream& out) {
    const auto cfg = resolve_trained(g);
    const auto data = load_dataset(cfg);
    const PreparedSample* sample = nullptr;
    for (const auto* part : {&data.train, &data.test})
        for (const auto& s : *part)
            if (s.target_index == interval) sample = &s;
    if (!sample) {
        const auto first = std::max(cfg.data.history, cfg.data.intervals_per_day);
        throw DataError("interval " + std::to_string(interval) + " has no sample; valid targets are " +
                        std::to_string(first) + ".." + std::to_string(cfg.dataset_spec().interval_count - 1));
    }
    const auto model = load_model(cfg, data);
    const auto pred = model.predict(*sample, data.transforms.taxi);
    const auto prec = out.precision(std::numeric_limits<double>::max_digits10);
    out << "zone_id,pred_inflow,pred_outflow,true_inflow,true_outflow\n";
    for (std::size_t i = 0; i < data.registry.size(); ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        out << data.registry.id_at(i) << ',' << pred.flows(0, c) << ',' << pred.flows(1, c) << ','
            << sample->target_raw(0, c) << ',' << sample->target_raw(1, c) << '\n';
    }
    out.precision(prec);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cross-platform traffic flow forecasting"};
    app.name("flowfuse");
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    std::uint64_t seed = 0;
    app.add_option("-c,--config", g.config_file, "key = value configuration file");
    app.add_option("-s,--set", g.overrides, "override one key, e.g. --set train.epochs=20")->take_all();
    auto* seed_opt = app.add_option("--seed", seed, "top-level seed");

    auto* synth = app.add_subcommand("synth", "write a synthetic two-platform dataset to paths.data_dir");
    auto* ingest = app.add_subcommand("ingest", "aggregate raw trip files into edge lists in paths.data_dir");
    auto* train_cmd = app.add_subcommand("train", "train model.architecture and save it to paths.run_dir");
    auto* eval_cmd = app.add_subcommand("evaluate", "score the trained model on the test split");
    bool parallel = false;
    std::string csv_path;
    auto* baselines = app.add_subcommand("baselines", "train the full model and every baseline");
    auto* ablate = app.add_subcommand("ablate", "train the full model and its ablations");
    for (auto* sub : {baselines, ablate}) {
        sub->add_flag("--parallel", parallel, "train the models concurrently");
        sub->add_option("--csv", csv_path, "also write the table as CSV to this file");
    }
    std::int64_t interval = 0;
    auto* predict_cmd = app.add_subcommand("predict", "print per-zone predictions for one target interval");
    predict_cmd->add_option("--interval", interval, "global index of the target interval")->required();
    auto* show = app.add_subcommand("show-config", "print the resolved configuration");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfig;
    }
    if (seed_opt->count() > 0) g.seed = seed;

    try {
        if (synth->parsed())
            cmd_synth(g, out);
        else if (ingest->parsed())
            cmd_ingest(g, out, err);
        else if (train_cmd->parsed())
            cmd_train(g, out);
        else if (eval_cmd->parsed())
            cmd_evaluate(g, out);
        else if (baselines->parsed())
            cmd_compare(g, baseline_lineup(), "baselines", parallel, csv_path, out);
        else if (ablate->parsed())
            cmd_compare(g, ablation_lineup(), "ablations", parallel, csv_path, out);
        else if (predict_cmd->parsed())
            cmd_predict(g, interval, out);
        else if (show->parsed())
            out << resolve(g).to_text();
        return kOk;
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return kConfig;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kConfig;
    }
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, out, err);
}

}  // namespace flowfuse::cli
