#include "flowfuse/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <ostream>

#include "flowfuse/errors.hpp"

namespace flowfuse {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out.precision(std::numeric_limits<double>::max_digits10);
    return out;
}

}  // namespace

Dataset make_dataset(const RunConfig& cfg, std::span<const EdgeCount> taxi, std::span<const EdgeCount> aux,
                     const ZoneRegistry& registry) {
    return build_dataset(taxi, aux, registry, cfg.dataset_spec());
}

Dataset load_dataset(const RunConfig& cfg) {
    const auto& dir = cfg.paths.data_dir;
    for (const char* f : {"zones.txt", "taxi.csv", "aux.csv"})
        if (!std::filesystem::exists(dir / f))
            throw DataError("missing " + (dir / f).string() + " (run `flowfuse synth` or `flowfuse ingest` first)");
    const auto registry = ZoneRegistry::load(dir / "zones.txt");
    const auto taxi = read_edge_list(dir / "taxi.csv");
    const auto aux = read_edge_list(dir / "aux.csv");
    return make_dataset(cfg, taxi, aux, registry);
}

RunOutcome train_and_evaluate(const RunConfig& cfg, const Dataset& data, Architecture arch) {
    Forecaster model(cfg.model_config(static_cast<int>(data.registry.size()), arch),
                     cfg.derived_seed(SeedTag::Init));
    const auto start = std::chrono::steady_clock::now();
    auto training = train(model, data.train, cfg.train_config(), data.transforms.taxi);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    auto metrics = evaluate(model, data.test, data.transforms.taxi);
    return {std::move(model), std::move(training), std::move(metrics), seconds};
}

std::vector<Architecture> baseline_lineup() {
    std::vector<Architecture> out{Architecture::Full};
    out.insert(out.end(), kBaselines.begin(), kBaselines.end());
    return out;
}

std::vector<Architecture> ablation_lineup() { return {kVariants.begin(), kVariants.end()}; }

Comparison compare(const RunConfig& cfg, const Dataset& data, std::span<const Architecture> archs, bool parallel,
                   const std::optional<std::filesystem::path>& run_root) {
    auto one = [&](Architecture arch) {
        auto run = train_and_evaluate(cfg, data, arch);
        if (run_root) {
            RunConfig member = cfg;
            member.model.architecture = arch;
            member.paths.run_dir = *run_root / std::string(to_string(arch));
            write_run_artifacts(member.paths.run_dir, member, run, data.transforms);
        }
        return ComparisonRow{arch, std::move(run.metrics), run.training.best_epoch, run.training.curve.size(),
                             run.seconds};
    };

    Comparison out;
    out.train_samples = data.train.size();
    out.test_samples = data.test.size();
    out.mean_predictor = mean_predictor_baseline(data.train, data.test, cfg.data.intervals_per_day);
    if (parallel) {
        std::vector<std::future<ComparisonRow>> jobs;
        for (auto a : archs) jobs.push_back(std::async(std::launch::async, one, a));
        for (auto& j : jobs) out.rows.push_back(j.get());
    } else {
        for (auto a : archs) out.rows.push_back(one(a));
    }
    return out;
}

void print_table(std::ostream& out, const Comparison& c) {
    const auto flags = out.flags();
    const auto prec = out.precision();
    out << std::left << std::setw(14) << "model" << std::right << std::setw(12) << "MAE" << std::setw(14) << "MSE"
        << std::setw(8) << "best" << std::setw(10) << "seconds" << '\n';
    out << std::fixed;
    for (const auto& r : c.rows)
        out << std::left << std::setw(14) << to_string(r.architecture) << std::right << std::setprecision(4)
            << std::setw(12) << r.metrics.mae << std::setw(14) << r.metrics.mse << std::setw(8) << r.best_epoch
            << std::setprecision(1) << std::setw(10) << r.seconds << '\n';
    out << std::left << std::setw(14) << "mean_predictor" << std::right << std::setprecision(4) << std::setw(12)
        << c.mean_predictor.mae << std::setw(14) << c.mean_predictor.mse << '\n';
    out << "samples: " << c.train_samples << " train, " << c.test_samples << " test\n";
    out.flags(flags);
    out.precision(prec);
}

void write_table_csv(std::ostream& out, const Comparison& c) {
    const auto prec = out.precision(std::numeric_limits<double>::max_digits10);
    out << "model,mae,mse,best_epoch,epochs_run,seconds\n";
    for (const auto& r : c.rows)
        out << to_string(r.architecture) << ',' << r.metrics.mae << ',' << r.metrics.mse << ',' << r.best_epoch << ','
            << r.epochs_run << ',' << r.seconds << '\n';
    out << "mean_predictor," << c.mean_predictor.mae << ',' << c.mean_predictor.mse << ",,,\n";
    out.precision(prec);
}

void write_loss_curve(std::ostream& out, const TrainResult& r) {
    out << "epoch,train_loss,validation_mae\n";
    for (const auto& e : r.curve) out << e.epoch << ',' << e.train_loss << ',' << e.validation_mae << '\n';
}

void write_transforms(std::ostream& out, const DatasetTransforms& t) {
    auto one = [&](const char* name, const FeatureTransform& f) {
        out << name << ".inflow.mean = " << f.mean()(0) << '\n'
            << name << ".inflow.stddev = " << f.stddev()(0) << '\n'
            << name << ".outflow.mean = " << f.mean()(1) << '\n'
            << name << ".outflow.stddev = " << f.stddev()(1) << '\n';
    };
    one("taxi", t.taxi);
    one("aux", t.aux);
}

void write_metrics(std::ostream& out, const MetricsReport& m, const MetricsReport& mean_predictor) {
    out << "mae = " << m.mae << '\n'
        << "mse = " << m.mse << '\n'
        << "samples = " << m.sample_count << '\n'
        << "zones_above_mean_mae = " << m.fraction_zones_above_mean() << '\n'
        << "mean_predictor.mae = " << mean_predictor.mae << '\n'
        << "mean_predictor.mse = " << mean_predictor.mse << '\n';
}

void write_zone_errors(std::ostream& out, const MetricsReport& m, const ZoneRegistry& registry) {
    out << "zone_id,mae\n";
    const auto& ids = registry.ids();
    for (std::size_t i = 0; i < m.zone_mae.size() && i < ids.size(); ++i) out << ids[i] << ',' << m.zone_mae[i] << '\n';
}

void write_run_artifacts(const std::filesystem::path& dir, const RunConfig& cfg, const RunOutcome& run,
                         const DatasetTransforms& transforms) {
    std::filesystem::create_directories(dir);
    open_out(dir / "config.txt") << cfg.to_text();
    save_checkpoint(dir / "model.ckpt", run.model);
    {
        auto out = open_out(dir / "loss_curve.csv");
        write_loss_curve(out, run.training);
    }
    auto out = open_out(dir / "transforms.txt");
    write_transforms(out, transforms);
}

}  // namespace flowfuse
