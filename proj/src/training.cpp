#include "flowfuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <numeric>

#include "flowfuse/errors.hpp"

namespace flowfuse {

using ad::Tape;
using ad::Var;

namespace {

constexpr std::uint64_t kTagShuffle = 0x5348;
constexpr std::uint64_t kTagDropout = 0x4452;

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("train.learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
        throw ConfigError("train.split_fraction must lie strictly between 0 and 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw ConfigError("train.validation_fraction must lie in [0, 1)");
    if (threads < 1) throw ConfigError("train.threads must be >= 1");
}

std::size_t split_point(std::size_t n, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie strictly between 0 and 1");
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
}

Var mse_loss(const Var& pred, const Var& target) {
    Var d = ad::sub(pred, target);
    return ad::mean(ad::hadamard(d, d));
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
    store.advance_step();
    const double t = static_cast<double>(store.step());
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& e = store.entry(i);
        if (!e.tensor.has_grad()) {
            // Zero gradient: moments only decay.
            e.first_moment *= cfg.beta1;
            e.second_moment *= cfg.beta2;
        } else {
            const Matrix& g = e.tensor.grad;
            e.first_moment = cfg.beta1 * e.first_moment + (1.0 - cfg.beta1) * g;
            e.second_moment = cfg.beta2 * e.second_moment + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        }
        const Matrix m_hat = e.first_moment / c1;
        const Matrix v_hat = e.second_moment / c2;
        e.tensor.value.array() -= cfg.learning_rate * m_hat.array() / (v_hat.array().sqrt() + cfg.epsilon);
    }
    store.clear_grads();
}

double backward_batch(Forecaster& model, std::span<const BatchMember> batch, int threads) {
    if (batch.empty()) return 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());

    auto run_member = [&](const BatchMember& m, ad::LeafGrads* sink) {
        Tape tape;
        Var loss = mse_loss(model.forward(tape, *m.sample, m.ctx), tape.constant(m.sample->target));
        const double value = loss.value()(0, 0);
        tape.backward(ad::scale(loss, inv), sink);
        return value;
    };

    double total = 0.0;
    if (threads <= 1 || batch.size() == 1) {
        for (const auto& m : batch) total += run_member(m, nullptr);
        return total * inv;
    }

    std::vector<ad::LeafGrads> sinks(batch.size());
    std::vector<double> losses(batch.size());
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), batch.size());
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w)
        jobs.push_back(std::async(std::launch::async, [&, w] {
            for (std::size_t i = w; i < batch.size(); i += workers) losses[i] = run_member(batch[i], &sinks[i]);
        }));
    for (auto& j : jobs) j.get();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (auto& [tensor, g] : sinks[i]) {
            auto* t = const_cast<ad::Tensor*>(tensor);
            if (t->has_grad())
                t->grad += g;
            else
                t->grad = g;
        }
        total += losses[i];
    }
    return total * inv;
}

TrainResult train(Forecaster& model, std::span<const PreparedSample> samples, const TrainConfig& cfg,
                  const FeatureTransform& taxi) {
    cfg.validate();
    if (samples.empty()) throw DataError("train: no training samples");
    const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(samples.size())));
    const std::size_t n_fit = samples.size() - n_val;
    if (n_fit == 0) throw DataError("train: validation slice leaves no samples to fit");
    const auto fit = samples.first(n_fit);
    const auto val = samples.subspan(n_fit);

    const AdamConfig adam{cfg.learning_rate};
    TrainResult result;
    std::vector<Matrix> best_values;
    double best_mae = std::numeric_limits<double>::infinity();
    int since_best = 0;

    std::vector<std::size_t> order(n_fit);
    std::vector<BatchMember> batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, {kTagShuffle, static_cast<std::uint64_t>(epoch)}));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        double loss_sum = 0.0;
        int batch_index = 0;
        for (std::size_t start = 0; start < n_fit; start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
            const std::size_t end = std::min(n_fit, start + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t i = start; i < end; ++i)
                batch.push_back({&fit[order[i]],
                                 {ad::Mode::Train, derive_seed(cfg.seed, {kTagDropout, static_cast<std::uint64_t>(epoch),
                                                                          static_cast<std::uint64_t>(order[i])})}});
            const double loss = backward_batch(model, batch, cfg.threads);
            if (!std::isfinite(loss)) {
                model.params().clear_grads();
                throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index));
            }
            adam_step(model.params(), adam);
            loss_sum += loss * static_cast<double>(end - start);
        }

        EpochRecord rec{epoch, loss_sum / static_cast<double>(n_fit), std::numeric_limits<double>::quiet_NaN()};
        if (!val.empty()) {
            rec.validation_mae = evaluate(model, val, taxi).mae;
            if (rec.validation_mae < best_mae) {
                best_mae = rec.validation_mae;
                best_values = model.params().values();
                result.best_epoch = epoch;
                since_best = 0;
            } else {
                ++since_best;
            }
        } else {
            result.best_epoch = epoch;
        }
        result.curve.push_back(rec);
        if (!val.empty() && since_best >= cfg.patience) {
            result.stopped_early = true;
            break;
        }
    }
    if (!best_values.empty()) model.params().assign_values(best_values);
    return result;
}

// ---------------------------------------------------------------------------

double MetricsReport::fraction_zones_above_mean() const {
    if (zone_mae.empty()) return 0.0;
    const double avg = std::accumulate(zone_mae.begin(), zone_mae.end(), 0.0) / static_cast<double>(zone_mae.size());
    const auto above = std::count_if(zone_mae.begin(), zone_mae.end(), [&](double e) { return e > avg; });
    return static_cast<double>(above) / static_cast<double>(zone_mae.size());
}

MetricsReport score(std::span<const ScoredPrediction> pairs) {
    MetricsReport r;
    r.sample_count = pairs.size();
    if (pairs.empty()) return r;
    std::vector<std::size_t> idx(pairs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return pairs[a].target_index < pairs[b].target_index; });

    const Eigen::Index m = pairs.front().target.cols();
    r.zone_mae.assign(static_cast<std::size_t>(m), 0.0);
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i : idx) {
        const auto& p = pairs[i];
        if (p.prediction.rows() != 2 || p.prediction.cols() != m || p.target.rows() != 2 || p.target.cols() != m)
            throw ShapeError("score: prediction/target must both be 2 x " + std::to_string(m));
        for (Eigen::Index z = 0; z < m; ++z)
            for (Eigen::Index c = 0; c < 2; ++c) {
                const double err = std::max(0.0, p.prediction(c, z)) - p.target(c, z);
                abs_sum += std::abs(err);
                sq_sum += err * err;
                r.zone_mae[static_cast<std::size_t>(z)] += std::abs(err);
            }
    }
    const double entries = static_cast<double>(pairs.size()) * 2.0 * static_cast<double>(m);
    r.mae = abs_sum / entries;
    r.mse = sq_sum / entries;
    for (auto& z : r.zone_mae) z /= 2.0 * static_cast<double>(pairs.size());
    return r;
}

MetricsReport evaluate(const Forecaster& model, std::span<const PreparedSample> samples,
                       const FeatureTransform& taxi) {
    std::vector<ScoredPrediction> pairs;
    pairs.reserve(samples.size());
    for (const auto& s : samples) pairs.push_back({s.target_index, model.predict(s, taxi).flows, s.target_raw});
    return score(pairs);
}

MetricsReport mean_predictor_baseline(std::span<const PreparedSample> train, std::span<const PreparedSample> test,
                                      int intervals_per_day) {
    if (intervals_per_day < 1) throw ConfigError("intervals_per_day must be >= 1");
    if (train.empty()) throw DataError("mean predictor: empty training set");
    std::map<std::int64_t, std::pair<Matrix, int>> by_slot;
    Matrix overall = Matrix::Zero(train.front().target_raw.rows(), train.front().target_raw.cols());
    for (const auto& s : train) {
        auto [it, inserted] = by_slot.try_emplace(s.target_index % intervals_per_day,
                                                  Matrix::Zero(overall.rows(), overall.cols()), 0);
        it->second.first += s.target_raw;
        ++it->second.second;
        overall += s.target_raw;
    }
    overall /= static_cast<double>(train.size());

    std::vector<ScoredPrediction> pairs;
    for (const auto& s : test) {
        auto it = by_slot.find(s.target_index % intervals_per_day);
        Matrix pred = it == by_slot.end() ? overall : Matrix(it->second.first / it->second.second);
        pairs.push_back({s.target_index, std::move(pred), s.target_raw});
    }
    return score(pairs);
}

// ---------------------------------------------------------------------------

Dataset build_dataset(std::span<const EdgeCount> taxi, std::span<const EdgeCount> aux,
                      const ZoneRegistry& registry, const DatasetSpec& spec) {
    const auto taxi_series = build_series(taxi, registry, Platform::Taxi, spec.interval_count);
    const auto aux_series = build_series(aux, registry, Platform::Aux, spec.interval_count);
    const auto samples = make_samples(taxi_series, aux_series, spec.history, spec.intervals_per_day);
    if (samples.size() < 2) throw DataError("dataset yields " + std::to_string(samples.size()) + " samples; need at least 2");
    const auto split = spec.random_split
                           ? random_split(std::span<const Sample>(samples), spec.split_fraction, spec.split_seed)
                           : chrono_split(std::span<const Sample>(samples), spec.split_fraction);
    if (split.train.empty() || split.test.empty())
        throw DataError("split of " + std::to_string(samples.size()) + " samples leaves one side empty");

    // Fit each platform on exactly the snapshots the train samples read.
    std::map<std::int64_t, NodeFeatureMatrix> seen_taxi, seen_aux;
    for (const auto& s : split.train) {
        for (const auto& h : s.history) seen_taxi.emplace(h->graph.interval.global, h->features);
        seen_taxi.emplace(s.target->graph.interval.global, s.target->features);
        seen_aux.emplace(s.auxiliary->graph.interval.global, s.auxiliary->features);
    }
    auto fit = [](const std::map<std::int64_t, NodeFeatureMatrix>& seen) {
        std::vector<NodeFeatureMatrix> f;
        for (const auto& [g, m] : seen) f.push_back(m);
        return FeatureTransform::fit(f);
    };
    Dataset d{registry, {fit(seen_taxi), fit(seen_aux)}, {}, {}};
    SamplePreparer prep(d.transforms);
    d.train = prep.prepare(split.train);
    d.test = prep.prepare(split.test);
    return d;
}

}  // namespace flowfuse
