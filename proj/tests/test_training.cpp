#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "flowfuse/errors.hpp"
#include "flowfuse/training.hpp"
#include "test_util.hpp"
#include "toy_data.hpp"

using namespace flowfuse;
using ad::Var;
using flowfuse::testing::make_toy_data;
using flowfuse::testing::random_matrix;
using flowfuse::testing::toy_config;

namespace {

double eval_loss(const Forecaster& f, std::span<const PreparedSample> batch) {
    double total = 0.0;
    for (const auto& s : batch) {
        ad::Tape tape(false);
        total += mse_loss(f.forward(tape, s, {}), tape.constant(s.target)).value()(0, 0);
    }
    return total / static_cast<double>(batch.size());
}

PreparedSample raw_sample(std::int64_t index, const Matrix& target) {
    PreparedSample s;
    s.target_index = index;
    s.target_raw = target;
    s.target = target;
    return s;
}

}  // namespace

TEST_CASE("chronological split sizes") {
    std::vector<int> n240(240);
    for (int i = 0; i < 240; ++i) n240[static_cast<std::size_t>(i)] = i;
    auto s = chrono_split(std::span<const int>(n240), 0.7);
    CHECK(s.train.size() == 168);
    CHECK(s.test.size() == 72);
    CHECK(s.train.back() < s.test.front());
    CHECK(s.train.front() == 0);
    CHECK(s.test.back() == 239);

    std::vector<int> two = {5, 9};
    auto h = chrono_split(std::span<const int>(two), 0.5);
    CHECK(h.train == std::vector<int>{5});
    CHECK(h.test == std::vector<int>{9});
    CHECK_THROWS_AS(split_point(10, 1.0), ConfigError);
    CHECK_THROWS_AS(split_point(10, 0.0), ConfigError);
}

TEST_CASE("31-day sample inventory splits 168/72") {
    // 31 days at 8 intervals per day; zone count does not matter here.
    auto data = make_toy_data(1, 3, 31 * 8, 3, 8, 0.3);
    REQUIRE(data.prepared.size() == 240);
    auto s = chrono_split(std::span<const PreparedSample>(data.prepared), 0.7);
    CHECK(s.train.size() == 168);
    CHECK(s.test.size() == 72);
    CHECK(s.train.back().target_index < s.test.front().target_index);
}

TEST_CASE("random split keeps sizes and partitions") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
    auto s = random_split(std::span<const int>(v), 0.7, 3);
    CHECK(s.train.size() == 35);
    CHECK(s.test.size() == 15);
    std::vector<int> all = s.train;
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    CHECK(all == v);
    CHECK(std::is_sorted(s.train.begin(), s.train.end()));
    CHECK(s.train != chrono_split(std::span<const int>(v), 0.7).train);
}

TEST_CASE("mse loss") {
    Rng rng(2);
    ad::Tape t;
    const Matrix target = random_matrix(rng, 2, 7);
    CHECK(mse_loss(t.constant(target), t.constant(target)).value()(0, 0) == 0.0);
    const Matrix shifted = (target.array() + 1.0).matrix();
    CHECK(mse_loss(t.constant(shifted), t.constant(target)).value()(0, 0) == doctest::Approx(1.0).epsilon(1e-14));

    for (int rep = 0; rep < 10; ++rep) {
        const Matrix a = random_matrix(rng, 2, 9, -3, 3), b = random_matrix(rng, 2, 9, -3, 3);
        double naive = 0.0;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 9; ++j) naive += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
        naive /= 18.0;
        CHECK(mse_loss(t.constant(a), t.constant(b)).value()(0, 0) == doctest::Approx(naive).epsilon(1e-13));
    }
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    ParamStore store;
    Rng rng(4);
    auto& w = store.add("w", random_matrix(rng, 3, 2));
    const Matrix before = w.value;
    adam_step(store, {});
    CHECK(w.value == before);
    CHECK(store.step() == 1);
    w.zero_grad();
    adam_step(store, {});
    CHECK(w.value == before);
    CHECK(store.step() == 2);
}

TEST_CASE("adam first step has magnitude lr regardless of gradient scale") {
    for (double g : {1e-3, 0.7, 5.0, -200.0}) {
        ParamStore store;
        auto& w = store.add("w", Matrix::Constant(1, 1, 0.25));
        w.grad = Matrix::Constant(1, 1, g);
        adam_step(store, {0.01});
        CHECK(w.value(0, 0) - 0.25 == doctest::Approx(-0.01 * (g > 0 ? 1.0 : -1.0)).epsilon(1e-4));
        CHECK_FALSE(w.has_grad());
    }
}

TEST_CASE("adam on w^2 shrinks |w| every step") {
    ParamStore store;
    auto& w = store.add("w", Matrix::Constant(1, 1, 1.0));
    double prev = 1.0;
    for (int i = 0; i < 10; ++i) {
        w.grad = 2.0 * w.value;
        adam_step(store, {0.1});
        CHECK(std::abs(w.value(0, 0)) < prev);
        prev = std::abs(w.value(0, 0));
    }
}

TEST_CASE("adam matches a scalar reference implementation") {
    ParamStore store;
    Rng rng(8);
    auto& w = store.add("w", random_matrix(rng, 2, 3));
    Matrix ref = w.value, m = Matrix::Zero(2, 3), v = Matrix::Zero(2, 3);
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int t = 1; t <= 6; ++t) {
        const Matrix g = random_matrix(rng, 2, 3, -2, 2);
        w.grad = g;
        adam_step(store, {lr, b1, b2, eps});
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j) {
                m(i, j) = b1 * m(i, j) + (1 - b1) * g(i, j);
                v(i, j) = b2 * v(i, j) + (1 - b2) * g(i, j) * g(i, j);
                const double mh = m(i, j) / (1 - std::pow(b1, t));
                const double vh = v(i, j) / (1 - std::pow(b2, t));
                ref(i, j) -= lr * mh / (std::sqrt(vh) + eps);
            }
        CHECK((w.value - ref).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.learning_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.split_fraction = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("overfitting a single sample") {
    auto data = make_toy_data(6, 5, 12);
    std::vector<PreparedSample> one = {data.prepared.front()};
    Forecaster f(toy_config(Architecture::Full, 5), 2);
    TrainConfig cfg;
    cfg.epochs = 500;
    cfg.patience = 500;
    cfg.validation_fraction = 0.0;
    cfg.seed = 1;
    auto r = train(f, one, cfg, data.transforms.taxi);
    CHECK(r.curve.size() <= 500);
    CHECK(eval_loss(f, one) < 1e-4);
}

TEST_CASE("same seed gives identical curves and metrics") {
    auto data = make_toy_data(9, 5, 40);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 4;
    cfg.seed = 77;
    auto run = [&](std::uint64_t seed, int threads) {
        Forecaster f(toy_config(Architecture::Full, 5), 3);
        TrainConfig c = cfg;
        c.seed = seed;
        c.threads = threads;
        auto r = train(f, data.prepared, c, data.transforms.taxi);
        return std::make_pair(r, evaluate(f, data.prepared, data.transforms.taxi));
    };
    auto [a, ma] = run(77, 1);
    auto [b, mb] = run(77, 1);
    REQUIRE(a.curve.size() == b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
        CHECK(a.curve[i].train_loss == b.curve[i].train_loss);
        CHECK(a.curve[i].validation_mae == b.curve[i].validation_mae);
    }
    CHECK(ma.mae == mb.mae);
    CHECK(ma.mse == mb.mse);
    CHECK(ma.zone_mae == mb.zone_mae);

    auto [c, mc] = run(78, 1);
    CHECK(c.curve.front().train_loss != a.curve.front().train_loss);

    // Member gradients are summed in member order, so threads do not change
    // the result either.
    auto [d, md] = run(77, 3);
    CHECK(md.mae == ma.mae);
}

TEST_CASE("best validation parameters are restored") {
    auto data = make_toy_data(10, 5, 60);
    Forecaster f(toy_config(Architecture::Full, 5), 5);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.patience = 3;
    cfg.batch_size = 8;
    cfg.validation_fraction = 0.2;
    cfg.learning_rate = 0.01;
    auto r = train(f, data.prepared, cfg, data.transforms.taxi);
    REQUIRE(r.best_epoch >= 0);
    const std::size_t n_val = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(data.prepared.size())));
    auto val = std::span<const PreparedSample>(data.prepared).last(n_val);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : r.curve) best = std::min(best, e.validation_mae);
    CHECK(evaluate(f, val, data.transforms.taxi).mae == best);
    CHECK(r.curve[static_cast<std::size_t>(r.best_epoch)].validation_mae == best);
    if (r.stopped_early) CHECK(static_cast<int>(r.curve.size()) == r.best_epoch + 1 + cfg.patience);
}

TEST_CASE("non-finite loss aborts with context") {
    auto data = make_toy_data(6, 5, 12);
    Forecaster f(toy_config(Architecture::Full, 5), 2);
    f.params().at("head.out.bias").value(0, 0) = std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg;
    cfg.epochs = 2;
    try {
        train(f, data.prepared, cfg, data.transforms.taxi);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
        CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
    }
}

TEST_CASE("batch gradient step does not increase the batch loss") {
    auto data = make_toy_data(12, 5, 60);
    Forecaster f(toy_config(Architecture::Full, 5), 4);
    Rng rng(99);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<PreparedSample> batch;
        std::vector<BatchMember> members;
        for (int i = 0; i < 6; ++i) batch.push_back(data.prepared[rng.below(data.prepared.size())]);
        for (const auto& s : batch) members.push_back({&s, {}});
        const double before = eval_loss(f, batch);
        CHECK(backward_batch(f, members) == doctest::Approx(before).epsilon(1e-12));
        for (ad::Tensor* t : f.params().tensors())
            if (t->has_grad()) t->value -= 1e-5 * t->grad;
        f.params().clear_grads();
        CHECK(eval_loss(f, batch) <= before);
    }
}

TEST_CASE("parallel batch gradients equal serial ones") {
    auto data = make_toy_data(12, 5, 30);
    Forecaster f(toy_config(Architecture::Full, 5), 4);
    std::vector<BatchMember> members;
    for (std::size_t i = 0; i < 7; ++i) members.push_back({&data.prepared[i], {ad::Mode::Train, i}});
    backward_batch(f, members, 1);
    std::vector<Matrix> serial;
    for (auto* t : f.params().tensors()) serial.push_back(t->grad);
    f.params().clear_grads();
    backward_batch(f, members, 3);
    auto tensors = f.params().tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) CHECK(tensors[i]->grad == serial[i]);
}

TEST_CASE("scoring") {
    Matrix t(2, 3);
    t << 1, 2, 3,
         4, 5, 6;
    std::vector<ScoredPrediction> perfect = {{0, t, t}, {1, t, t}};
    auto p = score(perfect);
    CHECK(p.mae == 0.0);
    CHECK(p.mse == 0.0);
    CHECK(p.zone_mae.size() == 3);

    // Constant-zero predictor: MAE is the mean target, MSE the mean square.
    std::vector<ScoredPrediction> zero = {{0, Matrix::Zero(2, 3), t}};
    auto z = score(zero);
    CHECK(z.mae == doctest::Approx(21.0 / 6.0));
    CHECK(z.mse == doctest::Approx(91.0 / 6.0));
    CHECK(z.zone_mae == std::vector<double>{2.5, 3.5, 4.5});
    CHECK(z.fraction_zones_above_mean() == doctest::Approx(1.0 / 3.0));

    // Negative predictions are clamped before scoring.
    std::vector<ScoredPrediction> neg = {{0, Matrix::Constant(2, 3, -5.0), t}};
    CHECK(score(neg).mae == z.mae);
}

TEST_CASE("evaluate is invariant to sample order") {
    auto data = make_toy_data(14, 5, 30);
    Forecaster f(toy_config(Architecture::Gru, 5), 1);
    auto fwd = evaluate(f, data.prepared, data.transforms.taxi);
    std::vector<PreparedSample> rev(data.prepared.rbegin(), data.prepared.rend());
    auto bwd = evaluate(f, rev, data.transforms.taxi);
    CHECK(fwd.mae == bwd.mae);
    CHECK(fwd.mse == bwd.mse);
    CHECK(fwd.zone_mae == bwd.zone_mae);
    CHECK(fwd.sample_count == data.prepared.size());
    CHECK(fwd.mae >= 0.0);
}

TEST_CASE("mean predictor") {
    // Constant data: zero error.
    const Matrix c = Matrix::Constant(2, 2, 3.0);
    std::vector<PreparedSample> train, test;
    for (int i = 0; i < 6; ++i) train.push_back(raw_sample(i, c));
    for (int i = 6; i < 9; ++i) test.push_back(raw_sample(i, c));
    CHECK(mean_predictor_baseline(train, test, 2).mae == 0.0);

    // Four training samples over P = 2 slots; computed by hand.
    Matrix a(2, 2), b(2, 2), d(2, 2), e(2, 2), y(2, 2);
    a << 1, 2, 3, 4;    // slot 0
    b << 10, 0, 0, 10;  // slot 1
    d << 3, 6, 5, 0;    // slot 0
    e << 0, 0, 2, 2;    // slot 1
    y << 2, 4, 4, 2;    // test target at index 4 (slot 0)
    train = {raw_sample(0, a), raw_sample(1, b), raw_sample(2, d), raw_sample(3, e)};
    test = {raw_sample(4, y)};
    // Slot-0 mean is [[2, 4], [4, 2]] exactly.
    CHECK(mean_predictor_baseline(train, test, 2).mae == 0.0);
    Matrix y1(2, 2);
    y1 << 5, 1, 1, 6;  // index 5 (slot 1): mean [[5, 0], [1, 6]]
    test = {raw_sample(5, y1)};
    auto r = mean_predictor_baseline(train, test, 2);
    CHECK(r.mae == doctest::Approx(0.25));
    CHECK(r.mse == doctest::Approx(0.25));
    CHECK(r.zone_mae == std::vector<double>{0.0, 0.5});

    // Slot never seen in training: overall mean [[5.5, 1], [1.5, 7]].
    test = {raw_sample(22, y)};
    auto fallback = mean_predictor_baseline(std::span<const PreparedSample>(train).first(2), test, 4);
    CHECK(fallback.mae == doctest::Approx((std::abs(5.5 - 2) + std::abs(1 - 4) + std::abs(1.5 - 4) + std::abs(7 - 2)) / 4.0));
    CHECK(mean_predictor_baseline(train, test, 2).mae == mean_predictor_baseline(train, test, 2).mae);
}
