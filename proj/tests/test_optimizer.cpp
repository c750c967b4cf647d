#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "echoflow/optimizer.hpp"
#include "echoflow/synth.hpp"

using namespace echoflow;

namespace {

// Independent reference: textbook JS divergence via two explicit KL terms.
double reference_js_distance(const std::vector<double>& p, const std::vector<double>& q) {
    auto kl = [](const std::vector<double>& a, const std::vector<double>& m) {
        double acc = 0;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i] > 0) acc += a[i] * (std::log(a[i] / m[i]) / std::log(2.0));
        return acc;
    };
    std::vector<double> m(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
    return std::sqrt(0.5 * kl(p, m) + 0.5 * kl(q, m));
}

std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0.01, 1.0);
    std::vector<double> p(n);
    double sum = 0;
    for (auto& v : p) {
        v = u(rng);
        sum += v;
    }
    for (auto& v : p) v /= sum;
    return p;
}

LabeledDataset planted_dataset(std::size_t flows_per_class, std::uint64_t seed) {
    return generate(presets::planted_band_pair(370, 380, 0.3, 12.0, 1.0), flows_per_class, 1.0,
                    seed);
}

}  // namespace

TEST_CASE("js distance boundary cases are exact") {
    std::vector<double> p{1.0, 0.0}, q{0.0, 1.0};
    CHECK(js_distance(p, q) == 1.0);  // disjoint supports, base 2
    CHECK(js_distance(p, p) == 0.0);
    std::vector<double> half{0.5, 0.5};
    CHECK(js_distance(half, p) == Catch::Approx(reference_js_distance(half, p)).epsilon(1e-12));
}

TEST_CASE("js distance matches the reference implementation") {
    std::mt19937_64 rng(103);
    for (int rep = 0; rep < 100; ++rep) {
        std::size_t n = 2 + rep % 12;
        auto p = random_distribution(rng, n);
        auto q = random_distribution(rng, n);
        double mine = js_distance(p, q);
        double ref = reference_js_distance(p, q);
        CHECK(std::abs(mine - ref) < 1e-12);
        CHECK(mine >= 0.0);
        CHECK(mine <= 1.0);
    }
}

TEST_CASE("objective_jsd separates the planted corpus best at the band") {
    auto ds = planted_dataset(60, 5);
    auto banded = Binning::from_boundaries({0, 370, 380, 1500}, BinDomain::size);
    auto off = Binning::from_boundaries({0, 600, 900, 1500}, BinDomain::size);
    CHECK(objective_jsd(banded, ds) > objective_jsd(off, ds));
}

TEST_CASE("objective_jsd flow-weighted pooling changes per-flow influence") {
    auto ds = planted_dataset(40, 83);
    // give one flow of the plain class a giant packet count so pooled and
    // flow-weighted histograms diverge
    for (auto& f : ds.flows) {
        if (f.label == "plain") {
            for (int i = 0; i < 2000; ++i) f.packets.push_back({0.5, 1200, 0});
            break;
        }
    }
    auto b = Binning::uniform(5, 1500, BinDomain::size);
    double pooled = objective_jsd(b, ds, false);
    double weighted = objective_jsd(b, ds, true);
    CHECK(pooled != weighted);
    CHECK(weighted >= 0.0);
    CHECK(weighted <= 1.0);
}

TEST_CASE("ho_both searches size and time boundaries jointly") {
    auto ds = planted_dataset(30, 89);
    NcvConfig cfg;
    cfg.n_bins = 3;
    cfg.repr.tau = 1.0;
    cfg.repr.n_time_bins = 3;
    cfg.train_cfg.epochs = 40;
    cfg.tpe.n_iterations = 10;
    cfg.tpe.n_startup_random = 4;
    cfg.seed = 97;
    auto report = nested_cv(ds, Strategy::ho_both, cfg);
    for (const auto& f : report.per_fold) {
        REQUIRE(f.boundaries.size() == 4);       // 3 size bins
        REQUIRE(f.time_boundaries.size() == 4);  // 3 time bins
        CHECK(f.time_boundaries.front() == 0.0);
        CHECK(f.time_boundaries.back() == 1.0);
        for (std::size_t i = 1; i < f.time_boundaries.size(); ++i)
            CHECK(f.time_boundaries[i] > f.time_boundaries[i - 1]);
    }
    auto j = report.to_json();
    CHECK(j["per_fold"][0].contains("time_boundaries"));
}

TEST_CASE("objective_jsd treats an empty class as uniform, not an error") {
    auto ds = planted_dataset(10, 7);
    // strip all packets from one class
    for (auto& f : ds.flows)
        if (f.label == "banded") f.packets.clear();
    auto b = Binning::uniform(4, 1500, BinDomain::size);
    CHECK_NOTHROW(objective_jsd(b, ds));
}

TEST_CASE("objective_accuracy prefers boundaries isolating the band") {
    auto ds = planted_dataset(80, 11);
    ReprConfig repr;
    repr.n_time_bins = 4;
    repr.tau = 1.0;
    TrainConfig cfg;
    cfg.seed = 3;
    cfg.epochs = 150;

    auto with_band = Binning::from_boundaries({0, 370, 380, 750, 1125, 1500}, BinDomain::size);
    auto uniform5 = Binning::uniform(5, 1500, BinDomain::size);
    double a_band = objective_accuracy(with_band, ds, repr, 5, cfg);
    double a_unif = objective_accuracy(uniform5, ds, repr, 5, cfg);
    CHECK(a_band >= a_unif);
    CHECK(a_band > 0.8);

    // deterministic for a fixed seed
    CHECK(objective_accuracy(with_band, ds, repr, 5, cfg) == a_band);
}

TEST_CASE("greedy with a single interior boundary equals the exhaustive scan") {
    auto ds = planted_dataset(40, 13);
    auto space = detail::coarse_integer_grid(2, 1500, 50);
    auto obj = [&](const std::vector<double>& interior) {
        return objective_jsd(detail::interior_to_binning(interior, 1500, BinDomain::size), ds);
    };
    auto greedy = greedy_optimize(space, obj, 2);

    double best = -1, best_v = 0;
    for (double v : space.candidate_values) {
        double o = obj({v});
        if (o > best) {
            best = o;
            best_v = v;
        }
    }
    REQUIRE(greedy.boundaries.size() == 1);
    CHECK(greedy.boundaries[0] == best_v);
    CHECK(greedy.objective == best);
}

TEST_CASE("greedy places a boundary at a planted step") {
    // synthetic objective with one sharp step at 600
    auto space = detail::coarse_integer_grid(2, 1500, 100);
    auto obj = [](const std::vector<double>& interior) {
        double acc = 0;
        for (double b : interior) acc += (b <= 600 ? b / 600.0 : (1500.0 - b) / 900.0);
        return acc;
    };
    auto t = greedy_optimize(space, obj, 2);
    CHECK(std::abs(t.boundaries[0] - 600.0) < 20.0);
}

TEST_CASE("greedy objective is non-decreasing over steps under refinement") {
    auto ds = planted_dataset(30, 17);
    auto space = detail::coarse_integer_grid(6, 1500, 40);
    std::vector<double> trace;
    auto obj = [&](const std::vector<double>& interior) {
        return objective_jsd(detail::interior_to_binning(interior, 1500, BinDomain::size), ds);
    };
    // instrument: re-run greedy at increasing bin budgets
    double prev = -1;
    for (std::size_t n_bins = 1; n_bins <= 5; ++n_bins) {
        auto t = greedy_optimize(space, obj, n_bins);
        CHECK(t.objective >= prev - 1e-12);
        prev = t.objective;
    }
}

TEST_CASE("feature selection keeps the informative bin") {
    auto ds = planted_dataset(60, 19);
    ReprConfig repr;
    repr.tau = 1.0;
    TrainConfig cfg;
    cfg.seed = 9;
    cfg.epochs = 150;

    // N' = 150 -> bin width 10, so the band [370, 380) is exactly bin index 37
    std::vector<std::size_t> candidates{150};
    auto fs = feature_selection_optimize(ds, 3, repr, cfg, 5, candidates);
    CHECK(fs.n_prime == 150);
    CHECK(fs.selected_bins.size() == 3);
    CHECK(std::find(fs.selected_bins.begin(), fs.selected_bins.end(), 37) !=
          fs.selected_bins.end());

    // with a budget of one the informative bin must rank first
    auto top1 = feature_selection_optimize(ds, 1, repr, cfg, 5, candidates);
    CHECK(top1.selected_bins == std::vector<std::size_t>{37});
}

TEST_CASE("feature selection with n_bins = n_prime selects every bin") {
    auto ds = planted_dataset(30, 23);
    ReprConfig repr;
    repr.tau = 1.0;
    TrainConfig cfg;
    cfg.seed = 10;
    cfg.epochs = 100;
    std::vector<std::size_t> candidates{10};
    auto fs = feature_selection_optimize(ds, 10, repr, cfg, 5, candidates);
    CHECK(fs.selected_bins.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(fs.selected_bins[i] == i);
}

TEST_CASE("nested_cv fraction accounting is 64/16/20") {
    auto ds = planted_dataset(50, 29);  // 100 flows total
    NcvConfig cfg;
    cfg.n_bins = 3;
    cfg.repr.tau = 1.0;
    cfg.train_cfg.epochs = 60;
    cfg.seed = 31;
    auto report = nested_cv(ds, Strategy::uniform, cfg);
    REQUIRE(report.per_fold.size() == 5);
    for (const auto& f : report.per_fold) {
        CHECK(f.n_outer_test == 20);
        CHECK(f.n_outer_train == 80);
        CHECK(f.n_inner_train == 64);
        CHECK(f.n_inner_val == 16);
    }
}

TEST_CASE("nested_cv greedy dispatch selects boundaries from the coarse grid") {
    auto ds = planted_dataset(25, 91);
    NcvConfig cfg;
    cfg.n_bins = 3;
    cfg.repr.tau = 1.0;
    cfg.train_cfg.epochs = 40;
    cfg.greedy_grid = 32;
    cfg.seed = 93;
    auto report = nested_cv(ds, Strategy::greedy, cfg);
    for (const auto& f : report.per_fold) {
        REQUIRE(f.boundaries.size() == 4);
        for (std::size_t i = 1; i + 1 < f.boundaries.size(); ++i)
            CHECK(std::fmod(f.boundaries[i], std::floor(1500.0 / 33.0)) == 0.0);
    }
}

TEST_CASE("nested_cv outer test folds cover the dataset exactly once") {
    auto ds = planted_dataset(25, 37);
    auto folds = stratified_kfold(ds.label_indices(), 5, 41);
    std::vector<int> seen(ds.flows.size(), 0);
    for (const auto& f : folds)
        for (auto i : f.test) seen[i]++;
    for (int s : seen) CHECK(s == 1);
}

TEST_CASE("uniform strategy degenerates to plain outer cross-validation") {
    auto ds = planted_dataset(40, 43);
    NcvConfig cfg;
    cfg.n_bins = 5;
    cfg.repr.tau = 1.0;
    cfg.train_cfg.epochs = 120;
    cfg.seed = 47;
    auto report = nested_cv(ds, Strategy::uniform, cfg);
    for (const auto& f : report.per_fold)
        CHECK(f.boundaries == Binning::uniform(5, 1500, BinDomain::size).boundaries());
    CHECK(report.mean_accuracy > 0.5);
}

TEST_CASE("boundary selection never looks at outer-test labels") {
    auto ds = planted_dataset(30, 53);
    auto folds = stratified_kfold(ds.label_indices(), 5, 59);
    const auto& fold = folds[0];

    LabeledDataset train_ds = detail::subset(ds, fold.train);
    auto obj = [&](const std::vector<double>& interior) {
        return objective_jsd(detail::interior_to_binning(interior, 1500, BinDomain::size),
                             train_ds);
    };
    TpeConfig tpe;
    tpe.n_iterations = 30;
    tpe.seed = 61;
    auto space = SearchSpace::integer_grid(3, 1500);
    auto before = tpe_optimize(space, obj, tpe).best.boundaries;

    // permuting outer-test labels must not change the selection
    LabeledDataset permuted = ds;
    for (auto i : fold.test)
        permuted.flows[i].label = permuted.flows[i].label == "plain" ? "banded" : "plain";
    LabeledDataset train_ds2 = detail::subset(permuted, fold.train);
    auto obj2 = [&](const std::vector<double>& interior) {
        return objective_jsd(detail::interior_to_binning(interior, 1500, BinDomain::size),
                             train_ds2);
    };
    auto after = tpe_optimize(space, obj2, tpe).best.boundaries;
    CHECK(before == after);
}

TEST_CASE("explainability export writes boundaries and unit-mass histograms") {
    auto ds = planted_dataset(20, 67);
    auto b = Binning::from_boundaries({0, 76, 168, 370, 380, 1500}, BinDomain::size);
    auto dir = std::filesystem::temp_directory_path();
    auto jpath = (dir / "echoflow_explain.json").string();
    auto cpath = (dir / "echoflow_explain.csv").string();
    export_explainability(b, ds, jpath, cpath);

    std::ifstream in(jpath);
    nlohmann::json j;
    in >> j;
    CHECK(j["boundaries"] == nlohmann::json(b.boundaries()));
    for (const auto& cls : ds.classes) {
        auto hist = j["histograms"][cls].get<std::vector<double>>();
        double mass = 0;
        for (double v : hist) mass += v;
        CHECK(mass == Catch::Approx(1.0));
    }
    std::ifstream csv(cpath);
    std::string header;
    std::getline(csv, header);
    CHECK(header == "value,banded,plain");

    std::filesystem::remove(jpath);
    std::filesystem::remove(cpath);

    LabeledDataset empty;
    CHECK_THROWS_AS(export_explainability(b, empty, jpath, cpath), std::invalid_argument);
}

TEST_CASE("ncv report serializes per-fold boundaries") {
    auto ds = planted_dataset(30, 71);
    NcvConfig cfg;
    cfg.n_bins = 3;
    cfg.repr.tau = 1.0;
    cfg.train_cfg.epochs = 60;
    cfg.seed = 73;
    auto report = nested_cv(ds, Strategy::uniform, cfg);
    auto j = report.to_json();
    CHECK(j["strategy"] == "uniform");
    CHECK(j["per_fold"].size() == 5);
    CHECK(j["per_fold"][0].contains("boundaries"));
    CHECK(j["per_fold"][0].contains("test_accuracy"));
    CHECK(j.contains("mean"));
    CHECK(j.contains("std"));
}
