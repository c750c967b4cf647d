#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "echoflow/binning.hpp"
#include "echoflow/classifier.hpp"
#include "echoflow/flow.hpp"
#include "echoflow/parallel.hpp"
#include "echoflow/representation.hpp"
#include "echoflow/rng.hpp"
#include "echoflow/tpe.hpp"

namespace echoflow {

// ---------------------------------------------------------------------------
// Jensen-Shannon distance (base-2), the model-free bin selection objective.

// JS divergence between two normalized histograms, 0..1 with base-2 logs.
inline double js_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("distribution size mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0) acc += 0.5 * p[i] * std::log2(p[i] / m);
        if (q[i] > 0) acc += 0.5 * q[i] * std::log2(q[i] / m);
    }
    return acc;
}

inline double js_distance(std::span<const double> p, std::span<const double> q) {
    return std::sqrt(std::max(0.0, js_divergence(p, q)));
}

namespace detail {

// Packet-size histogram of a set of flows under a binning; empty scopes fall
// back to uniform so the divergence stays defined. Default pooling counts
// every packet once; flow-weighted pooling averages per-flow histograms so
// each flow contributes equal mass.
inline std::vector<double> pooled_size_histogram(std::span<const Flow> flows,
                                                 std::span<const std::size_t> rows,
                                                 const Binning& binning,
                                                 bool flow_weighted = false) {
    std::vector<double> h(binning.bin_count(), 0.0);
    double total = 0;
    for (auto r : rows) {
        if (flow_weighted) {
            if (flows[r].packets.empty()) continue;
            double w = 1.0 / double(flows[r].packets.size());
            for (const auto& p : flows[r].packets) h[binning.map_value(p.size) - 1] += w;
            total += 1.0;
        } else {
            for (const auto& p : flows[r].packets) {
                h[binning.map_value(p.size) - 1] += 1.0;
                total += 1.0;
            }
        }
    }
    if (total == 0)
        return std::vector<double>(binning.bin_count(), 1.0 / double(binning.bin_count()));
    for (auto& v : h) v /= total;
    return h;
}

inline Binning interior_to_binning(const std::vector<double>& interior, double cap,
                                   BinDomain domain) {
    std::vector<double> b;
    b.reserve(interior.size() + 2);
    b.push_back(0.0);
    b.insert(b.end(), interior.begin(), interior.end());
    b.push_back(cap);
    return Binning(domain, std::move(b));
}

}  // namespace detail

// One-vs-all multiclass Jensen-Shannon distance of the pooled packet-size
// distributions under the candidate binning, averaged over classes.
inline double objective_jsd(const Binning& size_binning, const LabeledDataset& ds,
                            bool flow_weighted = false) {
    if (ds.classes.size() < 2) throw std::invalid_argument("jsd objective needs >= 2 classes");
    std::vector<std::vector<std::size_t>> per_class(ds.classes.size());
    for (std::size_t i = 0; i < ds.flows.size(); ++i)
        per_class[ds.class_index(ds.flows[i].label)].push_back(i);

    double acc = 0;
    for (std::size_t c = 0; c < ds.classes.size(); ++c) {
        std::vector<std::size_t> rest;
        for (std::size_t o = 0; o < per_class.size(); ++o)
            if (o != c) rest.insert(rest.end(), per_class[o].begin(), per_class[o].end());
        auto pc = detail::pooled_size_histogram(ds.flows, per_class[c], size_binning,
                                                flow_weighted);
        auto pr = detail::pooled_size_histogram(ds.flows, rest, size_binning, flow_weighted);
        acc += js_distance(pc, pr);
    }
    return acc / static_cast<double>(ds.classes.size());
}

// ---------------------------------------------------------------------------
// Model-aware objective: inner-CV validation accuracy of a classifier trained
// on dist representations under the candidate size binning.

struct ReprConfig {
    std::size_t n_time_bins = 4;
    double tau = 1.0;
    CounterMode mode = CounterMode::exact;
};

inline double objective_accuracy(const Binning& size_binning, const LabeledDataset& ds,
                                 const ReprConfig& repr, std::size_t inner_k,
                                 const TrainConfig& train_cfg,
                                 const Binning* time_binning = nullptr) {
    Binning time_b = time_binning
                         ? *time_binning
                         : Binning::uniform(repr.n_time_bins, repr.tau, BinDomain::time);
    Matrix features = build_dist_features(ds.flows, size_binning, time_b, repr.tau, repr.mode);
    auto labels = ds.label_indices();
    auto folds = stratified_kfold(labels, inner_k, train_cfg.seed);

    std::vector<double> fold_acc(folds.size(), 0.0);
    parallel_for(folds.size(), [&](std::size_t f) {
        const auto& fold = folds[f];
        Matrix tx(fold.train.size(), features.cols);
        std::vector<int> ty(fold.train.size());
        for (std::size_t i = 0; i < fold.train.size(); ++i) {
            std::copy(features.row(fold.train[i]).begin(), features.row(fold.train[i]).end(),
                      tx.row(i).begin());
            ty[i] = labels[fold.train[i]];
        }
        TrainConfig fc = train_cfg;
        fc.seed = detail::mix_seed(train_cfg.seed, f);
        auto model = train(tx, ty, ds.classes, fc);
        fold_acc[f] = accuracy_on(model, features, labels, fold.test);
    });
    double mean = 0;
    for (double a : fold_acc) mean += a;
    return mean / static_cast<double>(fold_acc.size());
}

// ---------------------------------------------------------------------------
// Greedy baseline: place one boundary at a time, always the grid value that
// maximizes the objective given the boundaries chosen so far.

inline Trial greedy_optimize(const SearchSpace& space,
                             const std::function<double(const std::vector<double>&)>& objective,
                             std::size_t n_bins) {
    space.validate();
    if (n_bins < 1) throw std::invalid_argument("greedy needs n_bins >= 1");
    std::vector<double> chosen;
    double best_obj = objective(chosen);
    for (std::size_t step = 0; step + 1 < n_bins; ++step) {
        double step_best = -std::numeric_limits<double>::infinity();
        double step_value = 0;
        bool found = false;
        for (double v : space.candidate_values) {
            if (std::find(chosen.begin(), chosen.end(), v) != chosen.end()) continue;
            auto trial = chosen;
            trial.insert(std::upper_bound(trial.begin(), trial.end(), v), v);
            double obj = objective(trial);
            if (obj > step_best) {
                step_best = obj;
                step_value = v;
                found = true;
            }
        }
        if (!found) break;
        chosen.insert(std::upper_bound(chosen.begin(), chosen.end(), step_value), step_value);
        best_obj = step_best;
    }
    return {chosen, best_obj};
}

// ---------------------------------------------------------------------------
// Feature-selection baseline: prune bins of larger uniform representations by
// mutual information with the label, keep the best-scoring configuration.

inline const std::vector<std::size_t> kFsUniformSizes = {10, 20, 50, 100, 200, 500, 1500};

struct FsResult {
    std::size_t n_prime = 0;                 // size of the uniform parent binning
    std::vector<std::size_t> selected_bins;  // kept size-bin indices, 0-based, sorted
    double val_accuracy = 0;
};

namespace detail {

// Mutual information (bits) between a small-integer feature and the label.
inline double mutual_information(std::span<const double> feature, std::span<const int> labels,
                                 int n_classes) {
    constexpr std::size_t kBuckets = 16;  // counts clamp into [0, 15]
    std::map<std::pair<std::size_t, int>, double> joint;
    std::vector<double> pf(kBuckets, 0.0), pl(static_cast<std::size_t>(n_classes), 0.0);
    double n = static_cast<double>(feature.size());
    for (std::size_t i = 0; i < feature.size(); ++i) {
        auto b = static_cast<std::size_t>(std::min(feature[i], double(kBuckets - 1)));
        joint[{b, labels[i]}] += 1.0;
        pf[b] += 1.0;
        pl[static_cast<std::size_t>(labels[i])] += 1.0;
    }
    double mi = 0;
    for (const auto& [key, count] : joint) {
        double pxy = count / n;
        double px = pf[key.first] / n;
        double py = pl[static_cast<std::size_t>(key.second)] / n;
        mi += pxy * std::log2(pxy / (px * py));
    }
    return mi;
}

}  // namespace detail

// Builds the pruned feature table for a FS configuration: the selected size
// bins of both directions followed by the full uniform time vectors.
inline Matrix build_fs_features(std::span<const Flow> flows, std::size_t n_prime,
                                const std::vector<std::size_t>& selected_bins,
                                const ReprConfig& repr) {
    Binning size_b = Binning::uniform(n_prime, kSizeCap, BinDomain::size);
    Binning time_b = Binning::uniform(repr.n_time_bins, repr.tau, BinDomain::time);
    Matrix full = build_dist_features(flows, size_b, time_b, repr.tau, repr.mode);
    std::size_t nt = repr.n_time_bins;
    std::size_t ns = n_prime;
    Matrix pruned(flows.size(), 2 * selected_bins.size() + 2 * nt);
    for (std::size_t r = 0; r < flows.size(); ++r) {
        std::size_t c = 0;
        for (auto b : selected_bins) pruned.at(r, c++) = full.at(r, b);               // size_fwd
        for (std::size_t t = 0; t < nt; ++t) pruned.at(r, c++) = full.at(r, ns + t);  // time_fwd
        for (auto b : selected_bins) pruned.at(r, c++) = full.at(r, ns + nt + b);     // size_bwd
        for (std::size_t t = 0; t < nt; ++t)
            pruned.at(r, c++) = full.at(r, 2 * ns + nt + t);                          // time_bwd
    }
    return pruned;
}

inline FsResult feature_selection_optimize(const LabeledDataset& ds, std::size_t n_bins,
                                           const ReprConfig& repr, const TrainConfig& train_cfg,
                                           std::size_t inner_k = 5,
                                           std::span<const std::size_t> n_prime_candidates =
                                               kFsUniformSizes) {
    auto labels = ds.label_indices();
    FsResult best;
    best.val_accuracy = -1;
    for (auto n_prime : n_prime_candidates) {
        if (n_prime < n_bins) continue;
        Binning size_b = Binning::uniform(n_prime, kSizeCap, BinDomain::size);
        Binning time_b = Binning::uniform(repr.n_time_bins, repr.tau, BinDomain::time);
        Matrix full = build_dist_features(ds.flows, size_b, time_b, repr.tau, repr.mode);

        // Rank size bins by summed fwd/bwd mutual information with the label.
        std::size_t nt = repr.n_time_bins;
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t b = 0; b < n_prime; ++b) {
            std::vector<double> fwd(full.rows), bwd(full.rows);
            for (std::size_t r = 0; r < full.rows; ++r) {
                fwd[r] = full.at(r, b);
                bwd[r] = full.at(r, n_prime + nt + b);
            }
            double mi = detail::mutual_information(fwd, labels, int(ds.classes.size())) +
                        detail::mutual_information(bwd, labels, int(ds.classes.size()));
            scored.emplace_back(mi, b);
        }
        std::stable_sort(scored.begin(), scored.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        std::vector<std::size_t> selected;
        for (std::size_t i = 0; i < n_bins; ++i) selected.push_back(scored[i].second);
        std::sort(selected.begin(), selected.end());

        Matrix pruned = build_fs_features(ds.flows, n_prime, selected, repr);
        auto report = kfold_evaluate(pruned, labels, ds.classes, inner_k, train_cfg);
        if (report.accuracy > best.val_accuracy) {
            best.n_prime = n_prime;
            best.selected_bins = selected;
            best.val_accuracy = report.accuracy;
        }
    }
    if (best.val_accuracy < 0)
        throw std::invalid_argument("no uniform candidate size is >= n_bins");
    return best;
}

// ---------------------------------------------------------------------------
// Nested cross-validation harness: outer folds supply untouched test sets,
// boundary selection only ever sees outer-train data.

enum class Strategy { uniform, feature_selection, statistical, ho, ho_both, greedy };

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "uniform") return Strategy::uniform;
    if (s == "fs" || s == "feature_selection") return Strategy::feature_selection;
    if (s == "stat" || s == "statistical") return Strategy::statistical;
    if (s == "ho") return Strategy::ho;
    if (s == "ho_both") return Strategy::ho_both;
    if (s == "greedy") return Strategy::greedy;
    throw std::invalid_argument("unknown strategy: " + s);
}

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::uniform: return "uniform";
        case Strategy::feature_selection: return "fs";
        case Strategy::statistical: return "stat";
        case Strategy::ho: return "ho";
        case Strategy::ho_both: return "ho_both";
        case Strategy::greedy: return "greedy";
    }
    return "?";
}

struct NcvConfig {
    std::size_t n_bins = 5;
    std::size_t outer_k = 5;
    std::size_t inner_k = 5;
    ReprConfig repr;
    TpeConfig tpe;
    TrainConfig train_cfg;
    std::size_t greedy_grid = 64;     // candidate count for the greedy scan
    std::size_t time_grid = 63;       // time-boundary grid size for ho_both
    bool jsd_flow_weighted = false;
    std::uint64_t seed = 0;
};

struct NcvFoldResult {
    std::vector<double> boundaries;          // full boundary vector, 0..cap
    std::vector<double> time_boundaries;     // only for ho_both
    std::vector<std::size_t> selected_bins;  // only for feature selection
    std::size_t fs_n_prime = 0;
    double test_accuracy = 0;
    std::size_t n_outer_train = 0;
    std::size_t n_outer_test = 0;
    std::size_t n_inner_train = 0;
    std::size_t n_inner_val = 0;
};

struct NcvReport {
    Strategy strategy = Strategy::uniform;
    std::size_t n_bins = 0;
    std::vector<NcvFoldResult> per_fold;
    double mean_accuracy = 0;
    double std_accuracy = 0;

    nlohmann::json to_json() const {
        nlohmann::json folds = nlohmann::json::array();
        for (const auto& f : per_fold) {
            nlohmann::json jf = {{"boundaries", f.boundaries},
                                 {"test_accuracy", f.test_accuracy},
                                 {"split_sizes",
                                  {{"outer_train", f.n_outer_train},
                                   {"outer_test", f.n_outer_test},
                                   {"inner_train", f.n_inner_train},
                                   {"inner_val", f.n_inner_val}}}};
            if (!f.selected_bins.empty()) {
                jf["selected_bins"] = f.selected_bins;
                jf["fs_n_prime"] = f.fs_n_prime;
            }
            if (!f.time_boundaries.empty()) jf["time_boundaries"] = f.time_boundaries;
            folds.push_back(std::move(jf));
        }
        return {{"strategy", to_string(strategy)},
                {"n_bins", n_bins},
                {"per_fold", std::move(folds)},
                {"mean", mean_accuracy},
                {"std", std_accuracy}};
    }
};

namespace detail {

inline LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> rows) {
    LabeledDataset out;
    out.classes = ds.classes;
    out.flows.reserve(rows.size());
    for (auto r : rows) out.flows.push_back(ds.flows[r]);
    return out;
}

inline SearchSpace coarse_integer_grid(std::size_t n_bins, double cap, std::size_t points) {
    SearchSpace s;
    s.n_bins = n_bins;
    s.cap = cap;
    double step = std::max(1.0, std::floor(cap / double(points + 1)));
    for (double v = step; v < cap; v += step) s.candidate_values.push_back(v);
    s.validate();
    return s;
}

}  // namespace detail

inline NcvReport nested_cv(const LabeledDataset& ds, Strategy strategy, const NcvConfig& cfg) {
    auto labels = ds.label_indices();
    auto outer = stratified_kfold(labels, cfg.outer_k, cfg.seed);

    NcvReport report;
    report.strategy = strategy;
    report.n_bins = cfg.n_bins;
    report.per_fold.resize(outer.size());

    parallel_for(outer.size(), [&](std::size_t f) {
        const auto& fold = outer[f];
        LabeledDataset train_ds = detail::subset(ds, fold.train);
        auto& out = report.per_fold[f];
        out.n_outer_train = fold.train.size();
        out.n_outer_test = fold.test.size();

        TrainConfig fold_train = cfg.train_cfg;
        fold_train.seed = detail::mix_seed(cfg.seed, 1000 + f);
        TpeConfig fold_tpe = cfg.tpe;
        fold_tpe.seed = detail::mix_seed(cfg.seed, 2000 + f);

        // Record the data fractions the inner loop actually sees.
        {
            auto inner = stratified_kfold(train_ds.label_indices(), cfg.inner_k, fold_train.seed);
            out.n_inner_train = inner[0].train.size();
            out.n_inner_val = inner[0].test.size();
        }

        Binning chosen = Binning::uniform(cfg.n_bins, kSizeCap, BinDomain::size);
        Binning chosen_time =
            Binning::uniform(cfg.repr.n_time_bins, cfg.repr.tau, BinDomain::time);
        switch (strategy) {
            case Strategy::uniform:
                break;
            case Strategy::ho: {
                auto space = SearchSpace::integer_grid(cfg.n_bins, kSizeCap);
                auto obj = [&](const std::vector<double>& interior) {
                    return objective_accuracy(
                        detail::interior_to_binning(interior, kSizeCap, BinDomain::size),
                        train_ds, cfg.repr, cfg.inner_k, fold_train);
                };
                auto res = tpe_optimize(space, obj, fold_tpe);
                chosen = detail::interior_to_binning(res.best.boundaries, kSizeCap,
                                                     BinDomain::size);
                break;
            }
            case Strategy::ho_both: {
                // Doubled search space: size boundaries plus time boundaries
                // in one TPE run.
                auto space = SearchSpace::integer_grid(cfg.n_bins, kSizeCap)
                                 .with_second_block(cfg.repr.n_time_bins, cfg.repr.tau,
                                                    cfg.time_grid);
                std::size_t split = space.block_split();
                auto decode = [&](const std::vector<double>& coords) {
                    std::vector<double> sizes(coords.begin(),
                                              coords.begin() + std::ptrdiff_t(split));
                    std::vector<double> times(coords.begin() + std::ptrdiff_t(split),
                                              coords.end());
                    return std::pair{
                        detail::interior_to_binning(sizes, kSizeCap, BinDomain::size),
                        detail::interior_to_binning(times, cfg.repr.tau, BinDomain::time)};
                };
                auto obj = [&](const std::vector<double>& coords) {
                    auto [size_b, time_b] = decode(coords);
                    return objective_accuracy(size_b, train_ds, cfg.repr, cfg.inner_k,
                                              fold_train, &time_b);
                };
                auto res = tpe_optimize(space, obj, fold_tpe);
                std::tie(chosen, chosen_time) = decode(res.best.boundaries);
                out.time_boundaries = chosen_time.boundaries();
                break;
            }
            case Strategy::statistical: {
                auto space = SearchSpace::integer_grid(cfg.n_bins, kSizeCap);
                auto obj = [&](const std::vector<double>& interior) {
                    return objective_jsd(
                        detail::interior_to_binning(interior, kSizeCap, BinDomain::size),
                        train_ds, cfg.jsd_flow_weighted);
                };
                auto res = tpe_optimize(space, obj, fold_tpe);
                chosen = detail::interior_to_binning(res.best.boundaries, kSizeCap,
                                                     BinDomain::size);
                break;
            }
            case Strategy::greedy: {
                auto space = detail::coarse_integer_grid(cfg.n_bins, kSizeCap, cfg.greedy_grid);
                auto obj = [&](const std::vector<double>& interior) {
                    return objective_jsd(
                        detail::interior_to_binning(interior, kSizeCap, BinDomain::size),
                        train_ds, cfg.jsd_flow_weighted);
                };
                auto res = greedy_optimize(space, obj, cfg.n_bins);
                chosen = detail::interior_to_binning(res.boundaries, kSizeCap, BinDomain::size);
                break;
            }
            case Strategy::feature_selection: {
                auto fs = feature_selection_optimize(train_ds, cfg.n_bins, cfg.repr, fold_train,
                                                     cfg.inner_k);
                out.fs_n_prime = fs.n_prime;
                out.selected_bins = fs.selected_bins;
                break;
            }
        }

        // Retrain on the full outer-train split, score on the untouched test fold.
        Matrix features;
        if (strategy == Strategy::feature_selection) {
            features = build_fs_features(ds.flows, out.fs_n_prime, out.selected_bins, cfg.repr);
            Binning parent = Binning::uniform(out.fs_n_prime, kSizeCap, BinDomain::size);
            out.boundaries = parent.boundaries();
        } else {
            features = build_dist_features(ds.flows, chosen, chosen_time, cfg.repr.tau,
                                           cfg.repr.mode);
            out.boundaries = chosen.boundaries();
        }
        Matrix tx(fold.train.size(), features.cols);
        std::vector<int> ty(fold.train.size());
        for (std::size_t i = 0; i < fold.train.size(); ++i) {
            std::copy(features.row(fold.train[i]).begin(), features.row(fold.train[i]).end(),
                      tx.row(i).begin());
            ty[i] = labels[fold.train[i]];
        }
        auto model = train(tx, ty, ds.classes, fold_train);
        out.test_accuracy = accuracy_on(model, features, labels, fold.test);
    });

    double mean = 0;
    for (const auto& f : report.per_fold) mean += f.test_accuracy;
    mean /= static_cast<double>(report.per_fold.size());
    double var = 0;
    for (const auto& f : report.per_fold) var += (f.test_accuracy - mean) * (f.test_accuracy - mean);
    report.mean_accuracy = mean;
    report.std_accuracy = std::sqrt(var / static_cast<double>(report.per_fold.size()));
    return report;
}

// ---------------------------------------------------------------------------
// Explainability export: fine-grained per-class size histograms next to the
// selected boundaries, as a JSON + CSV pair for external plotting.

inline void export_explainability(const Binning& size_binning, const LabeledDataset& ds,
                                  const std::string& json_path, const std::string& csv_path) {
    if (ds.flows.empty()) throw std::invalid_argument("empty dataset");
    auto cap = static_cast<std::size_t>(size_binning.cap());
    std::vector<std::vector<double>> hist(ds.classes.size(), std::vector<double>(cap, 0.0));
    std::vector<double> totals(ds.classes.size(), 0.0);
    for (const auto& f : ds.flows) {
        auto c = static_cast<std::size_t>(ds.class_index(f.label));
        for (const auto& p : f.packets) {
            hist[c][std::min<std::size_t>(p.size, cap - 1)] += 1.0;
            totals[c] += 1.0;
        }
    }
    for (std::size_t c = 0; c < hist.size(); ++c)
        if (totals[c] > 0)
            for (auto& v : hist[c]) v /= totals[c];

    nlohmann::json j = {{"boundaries", size_binning.boundaries()}, {"classes", ds.classes}};
    for (std::size_t c = 0; c < hist.size(); ++c) j["histograms"][ds.classes[c]] = hist[c];
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot write explainability JSON: " + json_path);
    out << j.dump(2) << "\n";

    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write explainability CSV: " + csv_path);
    csv << "value";
    for (const auto& c : ds.classes) csv << "," << c;
    csv << "\n";
    for (std::size_t v = 0; v < cap; ++v) {
        csv << v;
        for (std::size_t c = 0; c < hist.size(); ++c) csv << "," << hist[c][v];
        csv << "\n";
    }
}

}  // namespace echoflow
