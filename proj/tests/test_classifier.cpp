#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "echoflow/classifier.hpp"

using namespace echoflow;

namespace {

// 1-D separable two-class fixture: class 0 near -1, class 1 near +1.
std::pair<Matrix, std::vector<int>> separable_1d(std::size_t per_class, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.1);
    Matrix x(2 * per_class, 1);
    std::vector<int> y(2 * per_class);
    for (std::size_t i = 0; i < per_class; ++i) {
        x.at(i, 0) = -1.0 + noise(rng);
        y[i] = 0;
        x.at(per_class + i, 0) = 1.0 + noise(rng);
        y[per_class + i] = 1;
    }
    return {x, y};
}

}  // namespace

TEST_CASE("training separates separable data") {
    auto [x, y] = separable_1d(40, 3);
    TrainConfig cfg;
    cfg.seed = 1;
    auto model = train(x, y, {"neg", "pos"}, cfg);
    std::vector<std::size_t> rows(x.rows);
    std::iota(rows.begin(), rows.end(), 0);
    CHECK(accuracy_on(model, x, y, rows) == 1.0);
}

TEST_CASE("training validates its inputs") {
    auto [x, y] = separable_1d(10, 3);
    TrainConfig cfg;

    SECTION("zero epochs") {
        cfg.epochs = 0;
        CHECK_THROWS_AS(train(x, y, {"a", "b"}, cfg), std::invalid_argument);
    }
    SECTION("single class") {
        std::fill(y.begin(), y.end(), 0);
        CHECK_THROWS_AS(train(x, y, {"a", "b"}, cfg), std::invalid_argument);
    }
    SECTION("NaN feature") {
        x.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(train(x, y, {"a", "b"}, cfg), std::invalid_argument);
    }
}

TEST_CASE("analytic gradient matches central finite differences") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<int> label(0, 2);

    for (int rep = 0; rep < 5; ++rep) {
        std::size_t n = 20, d = 5, c = 3;
        Matrix x(n, d);
        for (auto& v : x.v) v = gauss(rng);
        std::vector<int> y(n);
        for (auto& v : y) v = label(rng);
        Matrix w(c, d + 1);
        for (auto& v : w.v) v = 0.5 * gauss(rng);
        double l2 = 1e-3;

        Matrix analytic = softmax_gradient(x, y, w, l2);
        const double h = 1e-5;
        double max_rel = 0;
        for (std::size_t i = 0; i < w.v.size(); ++i) {
            Matrix wp = w, wm = w;
            wp.v[i] += h;
            wm.v[i] -= h;
            double numeric = (softmax_loss(x, y, wp, l2) - softmax_loss(x, y, wm, l2)) / (2 * h);
            double denom = std::max({std::abs(numeric), std::abs(analytic.v[i]), 1e-8});
            max_rel = std::max(max_rel, std::abs(numeric - analytic.v[i]) / denom);
        }
        CHECK(max_rel < 1e-4);
    }
}

TEST_CASE("predict_proba is a probability vector") {
    SoftmaxModel m;
    m.classes = {"a", "b", "c"};
    m.scaler_mean = {0, 0};
    m.scaler_std = {1, 1};
    m.weights = Matrix(3, 3);  // all-zero weights

    auto u = m.predict_proba(std::vector<double>{0.3, -0.7});
    for (double p : u) CHECK(p == Catch::Approx(1.0 / 3));

    std::mt19937_64 rng(9);
    std::normal_distribution<double> gauss(0, 2);
    for (auto& w : m.weights.v) w = gauss(rng);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> x{gauss(rng), gauss(rng)};
        auto p = m.predict_proba(x);
        double sum = 0;
        for (double v : p) {
            CHECK(v >= 0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }

    CHECK_THROWS_AS(m.predict_proba(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("bias bumps increase the bumped class probability") {
    SoftmaxModel m;
    m.classes = {"a", "b", "c"};
    m.scaler_mean = {0, 0};
    m.scaler_std = {1, 1};
    m.weights = Matrix(3, 3);
    std::mt19937_64 rng(13);
    std::normal_distribution<double> gauss(0, 1);
    for (auto& w : m.weights.v) w = gauss(rng);

    std::vector<double> x{0.5, -0.25};
    auto before = m.predict_proba(x);
    m.weights.at(1, 2) += 1.0;  // class b bias
    auto after = m.predict_proba(x);
    CHECK(after[1] > before[1]);
}

TEST_CASE("adding a constant to every class logit leaves predictions unchanged") {
    SoftmaxModel m;
    m.classes = {"a", "b", "c"};
    m.scaler_mean = {0};
    m.scaler_std = {1};
    m.weights = Matrix(3, 2);
    std::mt19937_64 rng(29);
    std::normal_distribution<double> gauss(0, 1);
    for (auto& w : m.weights.v) w = gauss(rng);

    SoftmaxModel shifted = m;
    for (std::size_t k = 0; k < 3; ++k) shifted.weights.at(k, 1) += 5.0;

    for (double x : {-2.0, -0.5, 0.0, 1.5}) {
        auto a = m.predict_proba(std::vector<double>{x});
        auto b = shifted.predict_proba(std::vector<double>{x});
        for (std::size_t k = 0; k < 3; ++k) CHECK(a[k] == Catch::Approx(b[k]));
    }
}

TEST_CASE("predict_with_confidence picks the argmax, ties to lowest index") {
    SoftmaxModel m;
    m.classes = {"a", "b", "c"};
    m.scaler_mean = {0};
    m.scaler_std = {1};
    m.weights = Matrix(3, 2);  // zero: uniform output

    auto [cls, beta] = m.predict_with_confidence(std::vector<double>{0.0});
    CHECK(cls == 0);
    CHECK(beta == Catch::Approx(1.0 / 3));

    m.weights.at(1, 1) = 1.0;  // favor class b
    auto [cls2, beta2] = m.predict_with_confidence(std::vector<double>{0.0});
    CHECK(cls2 == 1);
    CHECK(beta2 > 1.0 / 3);

    // beta is the max of a distribution, so always >= 1/C
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss(0, 3);
    for (auto& w : m.weights.v) w = gauss(rng);
    for (int rep = 0; rep < 50; ++rep) {
        auto [c, b] = m.predict_with_confidence(std::vector<double>{gauss(rng)});
        (void)c;
        CHECK(b >= 1.0 / 3 - 1e-12);
    }
}

TEST_CASE("full-batch training loss is non-increasing") {
    auto [x, y] = separable_1d(30, 23);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 200;
    cfg.seed = 2;
    std::vector<double> losses;
    train(x, y, {"a", "b"}, cfg, &losses);
    REQUIRE(losses.size() == 200);
    for (std::size_t i = 1; i < losses.size(); ++i)
        CHECK(losses[i] <= losses[i - 1] + 1e-12);
}

TEST_CASE("training is deterministic per seed") {
    auto [x, y] = separable_1d(25, 31);
    TrainConfig cfg;
    cfg.batch_size = 16;  // exercise the shuffling path
    cfg.seed = 77;
    auto m1 = train(x, y, {"a", "b"}, cfg);
    auto m2 = train(x, y, {"a", "b"}, cfg);
    CHECK(m1.weights.v == m2.weights.v);  // bit-identical
}

TEST_CASE("kfold evaluation") {
    SECTION("separable data scores 1.0 with zero spread") {
        auto [x, y] = separable_1d(50, 41);
        TrainConfig cfg;
        cfg.seed = 4;
        auto report = kfold_evaluate(x, y, {"a", "b"}, 5, cfg);
        CHECK(report.accuracy == 1.0);
        CHECK(report.std_dev == 0.0);
        CHECK(report.per_fold.size() == 5);
    }
    SECTION("shuffled labels land near chance") {
        std::mt19937_64 rng(51);
        std::normal_distribution<double> gauss(0, 1);
        Matrix x(200, 4);
        for (auto& v : x.v) v = gauss(rng);
        std::vector<int> y(200);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = int(i % 2);
        TrainConfig cfg;
        cfg.seed = 6;
        auto report = kfold_evaluate(x, y, {"a", "b"}, 5, cfg);
        CHECK(report.accuracy > 0.35);
        CHECK(report.accuracy < 0.65);
    }
    SECTION("confusion rows sum to 1") {
        auto [x, y] = separable_1d(40, 61);
        TrainConfig cfg;
        cfg.seed = 8;
        auto report = kfold_evaluate(x, y, {"a", "b"}, 4, cfg);
        for (std::size_t r = 0; r < 2; ++r) {
            double sum = 0;
            for (std::size_t c = 0; c < 2; ++c) sum += report.confusion.at(r, c);
            CHECK(sum == Catch::Approx(1.0));
        }
    }
}

TEST_CASE("model JSON round-trip") {
    auto [x, y] = separable_1d(20, 71);
    TrainConfig cfg;
    cfg.seed = 12;
    auto model = train(x, y, {"neg", "pos"}, cfg);
    auto j = model.to_json();
    CHECK(j.contains("classes"));
    CHECK(j.contains("scaler"));
    CHECK(j.contains("weights"));
    auto back = SoftmaxModel::from_json(j);
    CHECK(back.classes == model.classes);
    CHECK(back.weights.v == model.weights.v);
    CHECK(back.scaler_mean == model.scaler_mean);

    auto p1 = model.predict_proba(std::vector<double>{0.4});
    auto p2 = back.predict_proba(std::vector<double>{0.4});
    CHECK(p1 == p2);
}

TEST_CASE("zero-variance features pass through unscaled") {
    Matrix x(8, 2);
    std::vector<int> y(8);
    for (std::size_t i = 0; i < 8; ++i) {
        x.at(i, 0) = i < 4 ? -1.0 : 1.0;
        x.at(i, 1) = 42.0;  // constant column
        y[i] = i < 4 ? 0 : 1;
    }
    TrainConfig cfg;
    cfg.seed = 5;
    auto model = train(x, y, {"a", "b"}, cfg);
    CHECK(model.scaler_mean[1] == 0.0);
    CHECK(model.scaler_std[1] == 1.0);
}
