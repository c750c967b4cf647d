#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "echoflow/cascade.hpp"
#include "echoflow/classifier.hpp"
#include "echoflow/flow.hpp"
#include "echoflow/optimizer.hpp"
#include "echoflow/parallel.hpp"
#include "echoflow/representation.hpp"
#include "echoflow/run_config.hpp"
#include "echoflow/synth.hpp"
#include "echoflow/version.hpp"

namespace echoflow {

namespace detail {

inline std::filesystem::path prepare_out_dir(const RunConfig& cfg) {
    std::filesystem::path dir = cfg.get_str("out_dir", "out");
    std::filesystem::create_directories(dir);
    return dir;
}

// Result artifacts carry no timestamps; the manifest is the one place that may.
inline void write_manifest(const RunConfig& cfg, const std::string& command,
                           const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs,
                           const std::filesystem::path& dir) {
    nlohmann::json j = {{"command", command},
                        {"version", ECHOFLOW_VERSION},
                        {"seed", cfg.get_u64("seed")},
                        {"config_hash", cfg.hash()},
                        {"config", cfg.values()},
                        {"inputs", inputs},
                        {"outputs", outputs},
                        {"written_at_unix_ms",
                         std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count()}};
    std::ofstream out(dir / ("manifest_" + command + ".json"));
    if (!out) throw std::runtime_error("cannot write manifest");
    out << j.dump(2) << "\n";
}

inline void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

inline void apply_threads(const RunConfig& cfg) {
    thread_limit() = static_cast<std::size_t>(cfg.get_u64("threads", 0));
}

inline TrainConfig train_config_from(const RunConfig& cfg) {
    TrainConfig t;
    t.learning_rate = cfg.get_double("train_learning_rate", 0.1);
    t.epochs = static_cast<std::size_t>(cfg.get_u64("train_epochs", 300));
    t.l2_lambda = cfg.get_double("train_l2_lambda", 1e-4);
    t.batch_size = static_cast<std::size_t>(cfg.get_u64("train_batch_size", 0));
    t.seed = cfg.get_u64("seed");
    return t;
}

inline ReprConfig repr_config_from(const RunConfig& cfg) {
    ReprConfig r;
    r.n_time_bins = static_cast<std::size_t>(cfg.get_u64("n_time_bins", 4));
    r.tau = cfg.get_double("tau", 1.0);
    r.mode = cfg.get_str("counter_mode", "exact") == "compact" ? CounterMode::compact
                                                               : CounterMode::exact;
    return r;
}

inline std::vector<ClassProfile> profiles_from(const RunConfig& cfg) {
    auto preset = cfg.get_str("synth_preset", "planted_band");
    double rate = cfg.get_double("synth_rate", 12.0);
    double tau_max = cfg.get_double("synth_tau_max", cfg.get_double("tau", 1.0));
    if (preset == "two_disjoint" || preset == "early_signal")
        return presets::disjoint_pair(rate, tau_max);
    if (preset == "planted_band")
        return presets::planted_band_pair(
            static_cast<std::uint32_t>(cfg.get_u64("synth_band_lo", 370)),
            static_cast<std::uint32_t>(cfg.get_u64("synth_band_hi", 380)),
            cfg.get_double("synth_band_weight", 0.3), rate, tau_max);
    if (preset == "late_onset")
        return presets::late_onset_pair(cfg.get_double("synth_onset", tau_max / 2.0), rate,
                                        tau_max);
    throw ConfigError("unknown synth_preset: " + preset);
}

inline Binning size_binning_from(const RunConfig& cfg) {
    if (cfg.has("in_binning")) {
        std::ifstream in(cfg.get_str("in_binning"));
        if (!in) throw std::runtime_error("cannot open binning: " + cfg.get_str("in_binning"));
        nlohmann::json j;
        in >> j;
        return Binning::from_json(j);
    }
    auto n = static_cast<std::size_t>(cfg.get_u64("n_bins", 5));
    return Binning::uniform(n, kSizeCap, BinDomain::size);
}

}  // namespace detail

// synth: generate a labeled corpus and emit it as a packet CSV.
inline int cmd_synth(const RunConfig& cfg) {
    detail::apply_threads(cfg);
    auto dir = detail::prepare_out_dir(cfg);
    auto profiles = detail::profiles_from(cfg);
    double tau_max = cfg.get_double("synth_tau_max", cfg.get_double("tau", 1.0));
    auto flows_per_class = static_cast<std::size_t>(cfg.get_u64("synth_flows_per_class", 200));
    auto ds = generate(profiles, flows_per_class, tau_max, cfg.get_u64("seed"));
    auto csv_path = dir / "packets.csv";
    write_packet_csv(ds, csv_path.string());
    detail::write_manifest(cfg, "synth", {}, {csv_path.string()}, dir);
    return 0;
}

// ingest: parse -> assemble -> filter -> balance -> dataset JSON.
inline int cmd_ingest(const RunConfig& cfg) {
    detail::apply_threads(cfg);
    auto dir = detail::prepare_out_dir(cfg);
    auto in_csv = cfg.get_str("in_csv");
    auto records = parse_packet_csv(in_csv);
    double tau = cfg.get_double("tau", 1.0);
    auto flows = assemble_flows(records, tau);

    FilterParams params;
    params.timeout_tau = tau;
    params.min_packets = static_cast<std::size_t>(cfg.get_u64("min_packets", 0));
    params.min_bytes = cfg.get_u64("min_bytes", 0);
    params.min_duration = cfg.get_double("min_duration", 0.0);
    flows = filter_flows(flows, params);

    auto ds = make_labeled_dataset(std::move(flows));
    if (cfg.get_bool("balance", true)) ds = balance_undersample(ds, cfg.get_u64("seed"));

    auto out_path = dir / "dataset.json";
    save_dataset(ds, out_path.string());
    detail::write_manifest(cfg, "ingest", {in_csv}, {out_path.string()}, dir);
    return 0;
}

// optimize: nested cross-validation under the chosen strategy; exports the
// best fold's binning plus the full NCV report.
inline int cmd_optimize(const RunConfig& cfg) {
    detail::apply_threads(cfg);
    auto strategy = strategy_from_string(cfg.get_str("strategy", "ho"));
    auto dir = detail::prepare_out_dir(cfg);
    auto in_dataset = cfg.get_str("in_dataset");
    auto ds = load_dataset(in_dataset);

    NcvConfig ncv;
    ncv.n_bins = static_cast<std::size_t>(cfg.get_u64("n_bins", 5));
    ncv.outer_k = static_cast<std::size_t>(cfg.get_u64("outer_k", 5));
    ncv.inner_k = static_cast<std::size_t>(cfg.get_u64("inner_k", 5));
    ncv.repr = detail::repr_config_from(cfg);
    ncv.train_cfg = detail::train_config_from(cfg);
    ncv.tpe.n_iterations = static_cast<std::size_t>(cfg.get_u64("tpe_iterations", 200));
    ncv.tpe.n_startup_random = static_cast<std::size_t>(cfg.get_u64("tpe_startup", 20));
    ncv.tpe.gamma = cfg.get_double("tpe_gamma", 0.25);
    ncv.tpe.n_ei_candidates = static_cast<std::size_t>(cfg.get_u64("tpe_candidates", 24));
    ncv.greedy_grid = static_cast<std::size_t>(cfg.get_u64("greedy_grid", 64));
    ncv.time_grid = static_cast<std::size_t>(cfg.get_u64("time_grid", 63));
    ncv.jsd_flow_weighted = cfg.get_bool("jsd_flow_weighted", false);
    ncv.seed = cfg.get_u64("seed");

    auto report = nested_cv(ds, strategy, ncv);

    // Deterministic pick: the fold with the highest test accuracy.
    std::size_t best = 0;
    for (std::size_t f = 1; f < report.per_fold.size(); ++f)
        if (report.per_fold[f].test_accuracy > report.per_fold[best].test_accuracy) best = f;
    Binning chosen(BinDomain::size, report.per_fold[best].boundaries);

    auto binning_path = dir / "binning.json";
    auto report_path = dir / "ncv_report.json";
    detail::write_json_file(chosen.to_json(), binning_path);
    detail::write_json_file(report.to_json(), report_path);
    std::vector<std::string> outputs = {binning_path.string(), report_path.string()};
    if (!report.per_fold[best].time_boundaries.empty()) {
        Binning chosen_time(BinDomain::time, report.per_fold[best].time_boundaries);
        auto time_path = dir / "time_binning.json";
        detail::write_json_file(chosen_time.to_json(), time_path);
        outputs.push_back(time_path.string());
    }
    detail::write_manifest(cfg, "optimize", {in_dataset}, outputs, dir);
    return 0;
}

// train: k-fold evaluation plus a final model trained on the whole dataset.
inline int cmd_train(const RunConfig& cfg) {
    detail::apply_threads(cfg);
    auto dir = detail::prepare_out_dir(cfg);
    auto in_dataset = cfg.get_str("in_dataset");
    auto ds = load_dataset(in_dataset);
    auto repr = detail::repr_config_from(cfg);
    auto train_cfg = detail::train_config_from(cfg);
    auto size_b = detail::size_binning_from(cfg);

    Binning time_b = Binning::uniform(repr.n_time_bins, repr.tau, BinDomain::time);
    Matrix features = build_dist_features(ds.flows, size_b, time_b, repr.tau, repr.mode);
    auto labels = ds.label_indices();

    auto k = static_cast<std::size_t>(cfg.get_u64("k", 5));
    auto report = kfold_evaluate(features, labels, ds.classes, k, train_cfg);
    auto model = train(features, labels, ds.classes, train_cfg);

    auto model_path = dir / "model.json";
    auto eval_path = dir / "eval_report.json";
    model.save(model_path.string());
    detail::write_json_file(report.to_json(), eval_path);

    std::vector<std::string> outputs = {model_path.string(), eval_path.string()};
    if (cfg.get_bool("export_features", false)) {
        auto features_path = dir / "features.csv";
        std::vector<std::string> row_labels;
        for (const auto& f : ds.flows) row_labels.push_back(f.label);
        write_features_csv(features_path.string(), row_labels, features,
                           dist_feature_names(size_b.bin_count(), repr.n_time_bins));
        outputs.push_back(features_path.string());
    }

    std::vector<std::string> inputs = {in_dataset};
    if (cfg.has("in_binning")) inputs.push_back(cfg.get_str("in_binning"));
    detail::write_manifest(cfg, "train", inputs, outputs, dir);
    return 0;
}

// ec: 80/20 split, cascade training, simulation, alpha sweep, and the
// per-stage confidence profile.
inline int cmd_ec(const RunConfig& cfg) {
    detail::apply_threads(cfg);
    auto dir = detail::prepare_out_dir(cfg);
    auto in_dataset = cfg.get_str("in_dataset");
    auto ds = load_dataset(in_dataset);
    auto train_cfg = detail::train_config_from(cfg);
    auto size_b = detail::size_binning_from(cfg);
    auto n_time_bins = static_cast<std::size_t>(cfg.get_u64("n_time_bins", 4));
    auto mode = cfg.get_str("counter_mode", "exact") == "compact" ? CounterMode::compact
                                                                  : CounterMode::exact;

    auto kind = time_bin_kind_from_string(cfg.get_str("time_bin_kind", "uniform"));
    ExitSchedule schedule;
    if (cfg.get_str("schedule_mode", "doubling") == "doubling") {
        schedule = ExitSchedule::doubling(cfg.get_double("tau1", 0.625),
                                          static_cast<std::size_t>(cfg.get_u64("stages", 4)),
                                          kind);
    } else {
        schedule = ExitSchedule::pseudo_log(cfg.get_double("tau1", 0.001),
                                            cfg.get_double("tau", 5.0), kind);
    }

    // Single split, as EC runs use: train the stages and the baseline on 80%,
    // measure beta and all reported numbers on the held-out 20%.
    auto labels = ds.label_indices();
    auto split = stratified_holdout(labels, cfg.get_double("test_fraction", 0.2),
                                    cfg.get_u64("seed"));
    LabeledDataset train_ds = detail::subset(ds, split.train);
    std::vector<Flow> test_flows;
    for (auto i : split.test) test_flows.push_back(ds.flows[i]);

    auto cascade = train_cascade(train_ds, schedule, size_b, n_time_bins, train_cfg, mode);

    // Baseline: the last-stage classifier applied to every test flow.
    Binning last_time_b = cascade.time_binning_for(schedule.n_stages() - 1);
    Matrix test_features = build_dist_features(test_flows, size_b, last_time_b,
                                               schedule.tau_max(), mode);
    std::vector<int> test_labels;
    for (const auto& f : test_flows) test_labels.push_back(ds.class_index(f.label));
    std::vector<std::size_t> all_rows(test_flows.size());
    std::iota(all_rows.begin(), all_rows.end(), 0);
    double baseline_acc =
        accuracy_on(cascade.stages.back(), test_features, test_labels, all_rows);

    double alpha = cfg.get_double("alpha", 0.05);
    cascade.set_thresholds(choose_beta(baseline_acc), std::min(alpha, baseline_acc));

    auto outcome = simulate(cascade, test_flows, ds.classes);

    std::vector<double> alphas = cfg.has("alphas")
                                     ? cfg.get_double_list("alphas")
                                     : std::vector<double>{0.0, 0.01, 0.02, 0.05, 0.1};
    for (auto& a : alphas) a = std::min(a, cascade.beta);
    auto sweep = alpha_sweep(cascade, test_flows, ds.classes, alphas);

    std::vector<double> grid;
    double step = cfg.get_double("threshold_grid_step", 0.05);
    for (double t = 0.0; t <= 1.0 + 1e-9; t += step) grid.push_back(t);
    auto profile = confidence_profile(cascade, test_flows, ds.classes, grid);

    nlohmann::json aggregate = {{"baseline_accuracy", baseline_acc},
                                {"beta", cascade.beta},
                                {"alpha", cascade.alpha},
                                {"threshold", cascade.threshold()},
                                {"outcome", outcome.to_json()}};
    nlohmann::json jsweep = nlohmann::json::array();
    for (const auto& p : sweep)
        jsweep.push_back({{"alpha", p.alpha},
                          {"accuracy", p.accuracy},
                          {"avg_exit_time", p.avg_exit_time},
                          {"coverage", p.coverage}});
    aggregate["alpha_sweep"] = std::move(jsweep);

    auto agg_path = dir / "ec_outcome.json";
    auto flows_path = dir / "ec_flows.csv";
    auto profile_path = dir / "confidence_profile.csv";
    auto cascade_path = dir / "cascade.json";
    detail::write_json_file(aggregate, agg_path);
    write_outcome_csv(outcome, test_flows, flows_path.string());
    write_confidence_profile_csv(profile, profile_path.string());
    detail::write_json_file(cascade.to_json(), cascade_path);

    std::vector<std::string> inputs = {in_dataset};
    if (cfg.has("in_binning")) inputs.push_back(cfg.get_str("in_binning"));
    detail::write_manifest(cfg, "ec", inputs,
                           {agg_path.string(), flows_path.string(), profile_path.string(),
                            cascade_path.string()},
                           dir);
    return 0;
}

// explain: per-class value histograms next to the selected boundaries.
inline int cmd_explain(const RunConfig& cfg) {
    detail::apply_threads(cfg);
    auto dir = detail::prepare_out_dir(cfg);
    auto in_dataset = cfg.get_str("in_dataset");
    auto ds = load_dataset(in_dataset);
    auto size_b = detail::size_binning_from(cfg);

    auto json_path = dir / "explain.json";
    auto csv_path = dir / "explain.csv";
    export_explainability(size_b, ds, json_path.string(), csv_path.string());

    std::vector<std::string> inputs = {in_dataset};
    if (cfg.has("in_binning")) inputs.push_back(cfg.get_str("in_binning"));
    detail::write_manifest(cfg, "explain", inputs, {json_path.string(), csv_path.string()}, dir);
    return 0;
}

// bench: classification throughput in batches of 1000 plus the memory table.
// Throughput numbers are hardware-dependent and reported, never asserted.
inline int cmd_bench(const RunConfig& cfg) {
    detail::apply_threads(cfg);
    auto dir = detail::prepare_out_dir(cfg);
    auto kind = repr_kind_from_string(cfg.get_str("bench_repr", "dist"));
    auto n = static_cast<std::size_t>(cfg.get_u64("bench_n", 5));
    double flow_rate = cfg.get_double("flow_rate", 1e6);
    double tau = cfg.get_double("tau", 15.0);
    double seconds = cfg.get_double("bench_seconds", 60.0);

    double estimate = estimate_memory(kind, n, flow_rate, tau);

    // Throughput of the softmax classifier over synthetic feature batches.
    std::size_t dim = kind == ReprKind::dist ? 4 * n
                      : kind == ReprKind::ts ? 3 * n
                      : kind == ReprKind::fp ? 2 * n * n
                                             : 33;
    std::size_t n_classes = static_cast<std::size_t>(cfg.get_u64("bench_classes", 5));
    SoftmaxModel model;
    for (std::size_t c = 0; c < n_classes; ++c) model.classes.push_back("c" + std::to_string(c));
    model.scaler_mean.assign(dim, 0.0);
    model.scaler_std.assign(dim, 1.0);
    model.weights = Matrix(n_classes, dim + 1);
    std::mt19937_64 rng(cfg.get_u64("seed"));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& w : model.weights.v) w = gauss(rng);

    constexpr std::size_t kBatch = 1000;
    Matrix batch(kBatch, dim);
    for (auto& v : batch.v) v = gauss(rng);

    auto start = std::chrono::steady_clock::now();
    std::size_t classified = 0;
    double sink = 0;
    while (std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() <
           seconds) {
        for (std::size_t i = 0; i < kBatch; ++i) {
            auto [pred, conf] = model.predict_with_confidence(batch.row(i));
            sink += conf + double(pred);
        }
        classified += kBatch;
    }
    double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    double throughput = elapsed > 0 ? double(classified) / elapsed : 0.0;

    // Reference memory table across the standard representation sizes.
    nlohmann::json table = nlohmann::json::array();
    auto table_row = [&](const char* name, ReprKind k, std::size_t size) {
        double bytes = estimate_memory(k, size, flow_rate, tau);
        table.push_back({{"repr", name},
                         {"repr_bytes", repr_bytes(k, size)},
                         {"memory", format_bytes_decimal(bytes)}});
    };
    for (std::size_t s : {5u, 10u, 20u, 50u}) {
        table_row(("dist(" + std::to_string(s) + ")").c_str(), ReprKind::dist, s);
        table_row(("ts(" + std::to_string(s) + ")").c_str(), ReprKind::ts, s);
    }
    for (std::size_t s : {8u, 16u, 32u})
        table_row(("fp(" + std::to_string(s) + ")").c_str(), ReprKind::fp, s);
    table_row("sts()", ReprKind::sts, 0);

    nlohmann::json j = {{"repr", cfg.get_str("bench_repr", "dist")},
                        {"n", n},
                        {"repr_bytes", repr_bytes(kind, n)},
                        {"flow_rate", flow_rate},
                        {"tau", tau},
                        {"memory_bytes", estimate},
                        {"memory_human", format_bytes_decimal(estimate)},
                        {"memory_table", std::move(table)},
                        {"batch_size", kBatch},
                        {"bench_seconds", seconds},
                        {"flows_classified", classified},
                        {"throughput_flows_per_s", throughput},
                        {"checksum", sink}};
    auto out_path = dir / "bench.json";
    detail::write_json_file(j, out_path);
    detail::write_manifest(cfg, "bench", {}, {out_path.string()}, dir);
    return 0;
}

}  // namespace echoflow
