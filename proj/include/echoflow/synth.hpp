#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "echoflow/flow.hpp"
#include "echoflow/representation.hpp"
#include "echoflow/rng.hpp"

namespace echoflow {

struct SizeBand {
    std::uint32_t lo = 1;    // inclusive
    std::uint32_t hi = 1500; // exclusive
    double weight = 1.0;
};

struct RateSegment {
    double until = 0.0;  // segment covers [previous until, this until)
    double rate = 0.0;   // packets per second
};

/// Controls one synthetic traffic class. When early_signal is false the
/// discriminative size mixture only activates at onset_time; packets before
/// that draw from pre_onset_mixture (uniform sizes by default), so early-stage
/// classifiers see no class signal.
struct ClassProfile {
    std::string name;
    std::vector<SizeBand> size_mixture;
    std::vector<RateSegment> rate_profile;
    double direction_split = 0.5;  // probability of a forward packet
    bool early_signal = true;
    double onset_time = 0.0;
    std::vector<SizeBand> pre_onset_mixture = {{1, kSizeCap, 1.0}};

    void validate(double tau_max) const {
        if (name.empty()) throw std::invalid_argument("class profile needs a name");
        if (size_mixture.empty()) throw std::invalid_argument("empty size mixture");
        double total = 0;
        for (const auto& b : size_mixture) {
            if (b.lo < 1 || b.hi <= b.lo || b.hi > kSizeCap)
                throw std::invalid_argument("size band outside [1, 1500]");
            total += b.weight;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw std::invalid_argument("size mixture weights must sum to 1");
        if (rate_profile.empty() || rate_profile.back().until < tau_max)
            throw std::invalid_argument("rate profile must cover [0, tau_max]");
        if (direction_split < 0 || direction_split > 1)
            throw std::invalid_argument("direction split must be in [0, 1]");
    }
};

namespace detail {

inline std::uint32_t sample_size(const std::vector<SizeBand>& mixture, std::mt19937_64& rng) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0;
    for (const auto& b : mixture) {
        acc += b.weight;
        if (u < acc || &b == &mixture.back())
            return std::uniform_int_distribution<std::uint32_t>(b.lo, b.hi - 1)(rng);
    }
    return mixture.back().lo;
}

// Piecewise-constant-rate Poisson arrivals over [0, tau_max); memorylessness
// lets each segment restart fresh at its left edge.
inline std::vector<double> sample_arrivals(const std::vector<RateSegment>& profile,
                                           double tau_max, std::mt19937_64& rng) {
    std::vector<double> times;
    double seg_start = 0.0;
    for (const auto& seg : profile) {
        double seg_end = std::min(seg.until, tau_max);
        if (seg.rate > 0) {
            std::exponential_distribution<double> exp_dist(seg.rate);
            double t = seg_start;
            while (true) {
                t += exp_dist(rng);
                if (t >= seg_end) break;
                times.push_back(t);
            }
        }
        seg_start = seg_end;
        if (seg_start >= tau_max) break;
    }
    return times;
}

}  // namespace detail

// Deterministic labeled corpus: one flow per (class, index) with Poisson
// arrivals, mixture-sampled sizes, and Bernoulli directions.
inline LabeledDataset generate(const std::vector<ClassProfile>& profiles,
                               std::size_t flows_per_class, double tau_max,
                               std::uint64_t seed) {
    if (profiles.empty()) throw std::invalid_argument("no class profiles given");
    if (profiles.size() < 2) throw std::invalid_argument("need at least two class profiles");
    if (flows_per_class == 0) throw std::invalid_argument("flows_per_class must be >= 1");
    for (const auto& p : profiles) p.validate(tau_max);

    std::vector<Flow> flows;
    flows.reserve(profiles.size() * flows_per_class);
    for (std::size_t c = 0; c < profiles.size(); ++c) {
        const auto& prof = profiles[c];
        for (std::size_t f = 0; f < flows_per_class; ++f) {
            std::vector<double> arrivals;
            std::uint64_t flow_seed =
                echoflow::detail::mix_seed(echoflow::detail::mix_seed(seed, c), f);
            std::mt19937_64 rng(flow_seed);
            for (int attempt = 0; arrivals.empty(); ++attempt) {
                if (attempt > 100)
                    throw std::runtime_error("rate profile too sparse to emit packets");
                arrivals = detail::sample_arrivals(prof.rate_profile, tau_max, rng);
            }

            Flow flow;
            flow.label = prof.name;
            flow.key.src_addr = "10." + std::to_string(c) + "." + std::to_string(f / 256) + "." +
                                std::to_string(f % 256);
            flow.key.dst_addr = "192.168.0.1";
            flow.key.src_port = static_cast<std::uint16_t>(40000 + f % 20000);
            flow.key.dst_port = 443;
            flow.key.proto = 6;

            double t0 = arrivals.front();
            std::bernoulli_distribution fwd(prof.direction_split);
            for (double at : arrivals) {
                FlowPacket p;
                p.t = at - t0;
                const auto& mixture = (prof.early_signal || at >= prof.onset_time)
                                          ? prof.size_mixture
                                          : prof.pre_onset_mixture;
                p.size = detail::sample_size(mixture, rng);
                p.dir = fwd(rng) ? 0 : 1;
                flow.packets.push_back(p);
            }
            flows.push_back(std::move(flow));
        }
    }
    return make_labeled_dataset(std::move(flows));
}

// Emits the ingestion CSV format so synthetic corpora can exercise the whole
// pipeline from parsing onward.
inline void write_packet_csv(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write packet CSV: " + path);
    out << kPacketCsvHeader << ",label\n";
    for (const auto& f : ds.flows) {
        for (const auto& p : f.packets) {
            const auto& k = f.key;
            bool fwd = p.dir == 0;
            out << p.t << "," << p.size << "," << int(p.dir) << ","
                << (fwd ? k.src_addr : k.dst_addr) << "," << (fwd ? k.dst_addr : k.src_addr)
                << "," << (fwd ? k.src_port : k.dst_port) << ","
                << (fwd ? k.dst_port : k.src_port) << "," << int(k.proto) << "," << f.label
                << "\n";
        }
    }
}

namespace presets {

// Two classes with disjoint size bands, separable from the first packets.
inline std::vector<ClassProfile> disjoint_pair(double rate, double tau_max) {
    ClassProfile a{.name = "alpha",
                   .size_mixture = {{100, 200, 1.0}},
                   .rate_profile = {{tau_max, rate}}};
    ClassProfile b{.name = "beta",
                   .size_mixture = {{900, 1000, 1.0}},
                   .rate_profile = {{tau_max, rate}}};
    return {a, b};
}

// Planted-boundary pair: both classes are uniform over [1, 1500) except that
// one class moves `band_weight` of its mass into [band_lo, band_hi).
inline std::vector<ClassProfile> planted_band_pair(std::uint32_t band_lo, std::uint32_t band_hi,
                                                   double band_weight, double rate,
                                                   double tau_max) {
    ClassProfile a{.name = "plain",
                   .size_mixture = {{1, kSizeCap, 1.0}},
                   .rate_profile = {{tau_max, rate}}};
    ClassProfile b{.name = "banded",
                   .size_mixture = {{band_lo, band_hi, band_weight},
                                    {1, kSizeCap, 1.0 - band_weight}},
                   .rate_profile = {{tau_max, rate}}};
    return {a, b};
}

// Disjoint size bands active from t = 0 (early-exit friendly).
inline std::vector<ClassProfile> early_signal_pair(double rate, double tau_max) {
    return disjoint_pair(rate, tau_max);
}

// Classes look identical before `onset`; the discriminative band appears after.
inline std::vector<ClassProfile> late_onset_pair(double onset, double rate, double tau_max) {
    auto profiles = disjoint_pair(rate, tau_max);
    for (auto& p : profiles) {
        p.early_signal = false;
        p.onset_time = onset;
    }
    return profiles;
}

}  // namespace presets

}  // namespace echoflow
