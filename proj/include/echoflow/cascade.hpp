#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
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

namespace echoflow {

enum class ScheduleMode { doubling, pseudo_log };
enum class TimeBinKind { uniform, log };

inline ScheduleMode schedule_mode_from_string(const std::string& s) {
    if (s == "doubling") return ScheduleMode::doubling;
    if (s == "pseudo_log") return ScheduleMode::pseudo_log;
    throw std::invalid_argument("unknown schedule mode: " + s);
}

inline TimeBinKind time_bin_kind_from_string(const std::string& s) {
    if (s == "uniform") return TimeBinKind::uniform;
    if (s == "log") return TimeBinKind::log;
    throw std::invalid_argument("unknown time bin kind: " + s);
}

/// Exit times tau_1 < ... < tau_max. Doubling schedules support the in-place
/// representation updates; pseudo-log (1-2-5 decades) forces a rebuild from
/// retained packets at every stage.
struct ExitSchedule {
    std::vector<double> times;
    ScheduleMode mode = ScheduleMode::doubling;
    TimeBinKind time_bin_kind = TimeBinKind::uniform;

    std::size_t n_stages() const { return times.size(); }
    double tau_max() const { return times.back(); }

    void validate() const {
        if (times.empty()) throw std::invalid_argument("exit schedule needs at least one stage");
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (!(times[i] > 0)) throw std::invalid_argument("exit times must be positive");
            if (i > 0 && times[i] <= times[i - 1])
                throw std::invalid_argument("exit times must be ascending");
        }
        if (mode == ScheduleMode::doubling) {
            for (std::size_t i = 1; i < times.size(); ++i)
                if (times[i] != 2.0 * times[i - 1])
                    throw std::invalid_argument("doubling schedule requires tau(i+1) = 2*tau(i)");
        }
    }

    static ExitSchedule doubling(double tau_1, std::size_t stages,
                                 TimeBinKind kind = TimeBinKind::uniform) {
        ExitSchedule s;
        s.mode = ScheduleMode::doubling;
        s.time_bin_kind = kind;
        double t = tau_1;
        for (std::size_t i = 0; i < stages; ++i, t *= 2.0) s.times.push_back(t);
        s.validate();
        return s;
    }

    // 1-2-5 decade steps from tau_1 up to (and including) tau_max.
    static ExitSchedule pseudo_log(double tau_1, double tau_max,
                                   TimeBinKind kind = TimeBinKind::uniform) {
        ExitSchedule s;
        s.mode = ScheduleMode::pseudo_log;
        s.time_bin_kind = kind;
        const double steps[] = {1.0, 2.0, 5.0};
        double decade = std::pow(10.0, std::floor(std::log10(tau_1)));
        bool started = false;
        for (int guard = 0; guard < 64; ++guard, decade *= 10.0) {
            for (double m : steps) {
                double t = m * decade;
                if (t < tau_1 * (1 - 1e-12) && !started) continue;
                started = true;
                if (t > tau_max * (1 + 1e-12)) {
                    s.validate();
                    return s;
                }
                s.times.push_back(t);
            }
        }
        s.validate();
        return s;
    }
};

// The exit threshold beta is the accuracy of the baseline model that
// classifies everything at tau_max.
inline double choose_beta(double baseline_model_accuracy) {
    if (baseline_model_accuracy < 0 || baseline_model_accuracy > 1)
        throw std::invalid_argument("baseline accuracy must be in [0, 1]");
    return baseline_model_accuracy;
}

/// One classifier per exit time, a single shared packet-size binning, and the
/// beta / beta - alpha exit policy.
struct CascadeModel {
    ExitSchedule schedule;
    std::vector<SoftmaxModel> stages;
    Binning size_binning{BinDomain::size, {0.0, double(kSizeCap)}};
    std::size_t n_time_bins = 4;
    CounterMode counter_mode = CounterMode::exact;
    double beta = 1.0;
    double alpha = 0.0;

    double threshold() const { return beta - alpha; }

    void set_thresholds(double beta_value, double alpha_value) {
        if (beta_value < 0 || beta_value > 1)
            throw std::invalid_argument("beta must be in [0, 1]");
        if (alpha_value < 0 || alpha_value > beta_value)
            throw std::invalid_argument("alpha must be in [0, beta]");
        beta = beta_value;
        alpha = alpha_value;
    }

    Binning time_binning_for(std::size_t stage) const {
        double tau = schedule.times.at(stage);
        return schedule.time_bin_kind == TimeBinKind::log
                   ? Binning::log_time(n_time_bins, tau)
                   : Binning::uniform(n_time_bins, tau, BinDomain::time);
    }

    nlohmann::json to_json() const {
        nlohmann::json jstages = nlohmann::json::array();
        for (const auto& m : stages) jstages.push_back(m.to_json());
        return {{"schedule",
                 {{"times", schedule.times},
                  {"mode", schedule.mode == ScheduleMode::doubling ? "doubling" : "pseudo_log"},
                  {"time_bin_kind",
                   schedule.time_bin_kind == TimeBinKind::uniform ? "uniform" : "log"}}},
                {"size_binning", size_binning.to_json()},
                {"n_time_bins", n_time_bins},
                {"beta", beta},
                {"alpha", alpha},
                {"stages", std::move(jstages)}};
    }
};

// Trains one classifier per exit time on representations truncated to that
// stage's window.
inline CascadeModel train_cascade(const LabeledDataset& train_ds, const ExitSchedule& schedule,
                                  const Binning& size_binning, std::size_t n_time_bins,
                                  const TrainConfig& train_cfg,
                                  CounterMode mode = CounterMode::exact) {
    schedule.validate();
    if (schedule.mode == ScheduleMode::doubling &&
        schedule.time_bin_kind == TimeBinKind::uniform && n_time_bins % 2 != 0)
        throw std::invalid_argument("doubling schedules with uniform bins need an even bin count");

    CascadeModel cascade;
    cascade.schedule = schedule;
    cascade.size_binning = size_binning;
    cascade.n_time_bins = n_time_bins;
    cascade.counter_mode = mode;

    auto labels = train_ds.label_indices();
    cascade.stages.resize(schedule.n_stages());
    parallel_for(schedule.n_stages(), [&](std::size_t i) {
        Binning time_b = cascade.time_binning_for(i);
        Matrix features = build_dist_features(train_ds.flows, size_binning, time_b,
                                              schedule.times[i], mode);
        TrainConfig cfg = train_cfg;
        cfg.seed = detail::mix_seed(train_cfg.seed, 7000 + i);
        cascade.stages[i] = train(features, labels, train_ds.classes, cfg);
    });
    return cascade;
}

struct FlowOutcome {
    std::size_t exit_stage = 0;  // 1-based
    double exit_time = 0;
    int predicted = -1;
    double confidence = 0;
    bool correct = false;
};

struct EcOutcome {
    std::vector<FlowOutcome> per_flow;
    double accuracy = 0;
    double avg_exit_time = 0;
    std::vector<double> coverage;  // exit fraction per stage, sums to 1
    // Size accounting for the memory contract: one representation per flow in
    // doubling mode, one per visited stage when rebuilding.
    std::size_t representations_built = 0;
    std::size_t updates_applied = 0;

    nlohmann::json to_json() const {
        return {{"accuracy", accuracy},
                {"avg_exit_time", avg_exit_time},
                {"coverage", coverage},
                {"flows", per_flow.size()},
                {"representations_built", representations_built},
                {"updates_applied", updates_applied}};
    }
};

// Runs the confidence-gated cascade over test flows. A flow exits at the first
// stage whose confidence exceeds beta - alpha, or unconditionally at the last
// stage; between stages the single representation is updated in place.
inline EcOutcome simulate(const CascadeModel& cascade, std::span<const Flow> flows,
                          const std::vector<std::string>& classes) {
    cascade.schedule.validate();
    if (cascade.stages.size() != cascade.schedule.n_stages())
        throw std::invalid_argument("cascade must have one classifier per exit time");
    std::size_t n_stages = cascade.schedule.n_stages();
    const auto& times = cascade.schedule.times;
    bool in_place = cascade.schedule.mode == ScheduleMode::doubling;

    // Shared per-stage binnings, computed once.
    std::vector<Binning> stage_bins;
    for (std::size_t i = 0; i < n_stages; ++i) stage_bins.push_back(cascade.time_binning_for(i));

    EcOutcome out;
    out.per_flow.resize(flows.size());
    std::vector<std::size_t> built(flows.size(), 0), updated(flows.size(), 0);

    parallel_for(flows.size(), [&](std::size_t fi) {
        const Flow& flow = flows[fi];
        int label = -1;
        if (!flow.label.empty()) {
            auto it = std::lower_bound(classes.begin(), classes.end(), flow.label);
            if (it != classes.end() && *it == flow.label)
                label = static_cast<int>(it - classes.begin());
        }

        DistRepr repr = build_dist(flow, cascade.size_binning, stage_bins[0], times[0],
                                   cascade.counter_mode);
        built[fi] = 1;

        FlowOutcome fo;
        for (std::size_t stage = 0; stage < n_stages; ++stage) {
            if (stage > 0) {
                if (in_place) {
                    std::vector<FlowPacket> fresh;
                    for (const auto& p : flow.packets)
                        if (p.t >= times[stage - 1] && p.t < times[stage]) fresh.push_back(p);
                    if (cascade.schedule.time_bin_kind == TimeBinKind::log)
                        update_dist_log_shift(repr, fresh, cascade.size_binning);
                    else
                        update_dist_double(repr, fresh, cascade.size_binning, stage_bins[stage]);
                    updated[fi]++;
                } else {
                    repr = build_dist(flow, cascade.size_binning, stage_bins[stage], times[stage],
                                      cascade.counter_mode);
                    built[fi]++;
                }
            }
            auto features = repr.flatten();
            auto [pred, conf] = cascade.stages[stage].predict_with_confidence(features);
            bool last = stage + 1 == n_stages;
            if (last || conf > cascade.threshold()) {
                fo.exit_stage = stage + 1;
                fo.exit_time = times[stage];
                fo.predicted = static_cast<int>(pred);
                fo.confidence = conf;
                fo.correct = label >= 0 && static_cast<int>(pred) == label;
                break;
            }
        }
        out.per_flow[fi] = fo;
    });

    out.coverage.assign(n_stages, 0.0);
    std::size_t hits = 0;
    double time_sum = 0;
    for (const auto& fo : out.per_flow) {
        out.coverage[fo.exit_stage - 1] += 1.0;
        time_sum += fo.exit_time;
        if (fo.correct) ++hits;
    }
    for (auto& c : out.coverage) c /= static_cast<double>(std::max<std::size_t>(flows.size(), 1));
    out.accuracy = flows.empty() ? 0.0 : static_cast<double>(hits) / double(flows.size());
    out.avg_exit_time = flows.empty() ? 0.0 : time_sum / double(flows.size());
    for (auto b : built) out.representations_built += b;
    for (auto u : updated) out.updates_applied += u;
    return out;
}

struct AlphaPoint {
    double alpha = 0;
    double accuracy = 0;
    double avg_exit_time = 0;
    std::vector<double> coverage;
};

inline std::vector<AlphaPoint> alpha_sweep(const CascadeModel& cascade,
                                           std::span<const Flow> flows,
                                           const std::vector<std::string>& classes,
                                           std::span<const double> alphas) {
    std::vector<AlphaPoint> points;
    for (double a : alphas) {
        CascadeModel c = cascade;
        c.set_thresholds(cascade.beta, a);
        auto outcome = simulate(c, flows, classes);
        points.push_back({a, outcome.accuracy, outcome.avg_exit_time, outcome.coverage});
    }
    return points;
}

struct ConfidenceProfileRow {
    std::size_t stage = 0;  // 1-based
    double tau = 0;
    double threshold = 0;
    double coverage = 0;    // fraction with confidence above the threshold
    double true_frac = 0;   // covered and correct
    double false_frac = 0;  // covered and wrong
};

// Evaluates every stage classifier independently on all flows, reporting how
// much of the data each confidence threshold would cover and how it splits
// into correct and incorrect predictions.
inline std::vector<ConfidenceProfileRow> confidence_profile(
    const CascadeModel& cascade, std::span<const Flow> flows,
    const std::vector<std::string>& classes, std::span<const double> thresholds) {
    std::vector<ConfidenceProfileRow> rows;
    for (std::size_t stage = 0; stage < cascade.schedule.n_stages(); ++stage) {
        Binning time_b = cascade.time_binning_for(stage);
        double tau = cascade.schedule.times[stage];
        std::vector<double> conf(flows.size());
        std::vector<bool> correct(flows.size());
        parallel_for(flows.size(), [&](std::size_t i) {
            auto repr =
                build_dist(flows[i], cascade.size_binning, time_b, tau, cascade.counter_mode);
            auto features = repr.flatten();
            auto [pred, c] = cascade.stages[stage].predict_with_confidence(features);
            conf[i] = c;
            auto it = std::lower_bound(classes.begin(), classes.end(), flows[i].label);
            correct[i] = it != classes.end() && *it == flows[i].label &&
                         static_cast<int>(pred) == int(it - classes.begin());
        });
        for (double thr : thresholds) {
            ConfidenceProfileRow row;
            row.stage = stage + 1;
            row.tau = tau;
            row.threshold = thr;
            for (std::size_t i = 0; i < flows.size(); ++i) {
                if (conf[i] > thr) {
                    row.coverage += 1;
                    (correct[i] ? row.true_frac : row.false_frac) += 1;
                }
            }
            double n = std::max<double>(1.0, double(flows.size()));
            row.coverage /= n;
            row.true_frac /= n;
            row.false_frac /= n;
            rows.push_back(row);
        }
    }
    return rows;
}

inline void write_outcome_csv(const EcOutcome& outcome, std::span<const Flow> flows,
                              const std::string& path) {
    if (outcome.per_flow.size() != flows.size())
        throw std::invalid_argument("outcome/flows size mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write outcome CSV: " + path);
    out << "flow_id,exit_stage,exit_time,pred,label,confidence\n";
    for (std::size_t i = 0; i < flows.size(); ++i) {
        const auto& fo = outcome.per_flow[i];
        out << i << "," << fo.exit_stage << "," << fo.exit_time << "," << fo.predicted << ","
            << flows[i].label << "," << fo.confidence << "\n";
    }
}

inline void write_confidence_profile_csv(std::span<const ConfidenceProfileRow> rows,
                                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write confidence profile CSV: " + path);
    out << "stage,tau,threshold,coverage,true_frac,false_frac\n";
    for (const auto& r : rows)
        out << r.stage << "," << r.tau << "," << r.threshold << "," << r.coverage << ","
            << r.true_frac << "," << r.false_frac << "\n";
}

}  // namespace echoflow
