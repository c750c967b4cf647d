#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "echoflow/binning.hpp"
#include "echoflow/flow.hpp"
#include "echoflow/matrix.hpp"

namespace echoflow {

inline constexpr std::uint32_t kSizeCap = 1500;     // default packet-size domain end
inline constexpr std::uint32_t kCounterMax = 255;   // compact counters are 8-bit

enum class CounterMode { exact, compact };

namespace detail {

inline void bump(std::vector<std::uint32_t>& v, std::size_t bin, CounterMode mode) {
    auto& c = v[bin - 1];
    if (mode == CounterMode::compact && c >= kCounterMax) return;
    ++c;
}

inline std::uint32_t clamp_add(std::uint32_t a, std::uint32_t b, CounterMode mode) {
    std::uint64_t s = static_cast<std::uint64_t>(a) + b;
    if (mode == CounterMode::compact) return static_cast<std::uint32_t>(std::min<std::uint64_t>(s, kCounterMax));
    return static_cast<std::uint32_t>(s);
}

}  // namespace detail

/// Four per-direction counter vectors: packet-size and arrival-time histograms.
/// Compact mode clamps every counter at 255 so a vector serializes to one byte
/// per bin; exact mode never saturates and is what the rebuild oracles compare.
struct DistRepr {
    std::vector<std::uint32_t> size_fwd, size_bwd;
    std::vector<std::uint32_t> time_fwd, time_bwd;
    double tau = 0.0;
    CounterMode mode = CounterMode::exact;

    std::size_t n_size_bins() const { return size_fwd.size(); }
    std::size_t n_time_bins() const { return time_fwd.size(); }

    bool operator==(const DistRepr& o) const {
        return size_fwd == o.size_fwd && size_bwd == o.size_bwd && time_fwd == o.time_fwd &&
               time_bwd == o.time_bwd && tau == o.tau;
    }

    // Direction-major, sizes before times: [size_fwd, time_fwd, size_bwd, time_bwd].
    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(2 * (n_size_bins() + n_time_bins()));
        for (auto c : size_fwd) out.push_back(c);
        for (auto c : time_fwd) out.push_back(c);
        for (auto c : size_bwd) out.push_back(c);
        for (auto c : time_bwd) out.push_back(c);
        return out;
    }

    // Compact binary layout: 2*N_s + 2*N_t bytes (4N when N_s == N_t).
    std::vector<std::uint8_t> to_bytes() const {
        if (mode != CounterMode::compact)
            throw std::invalid_argument("binary serialization requires compact counters");
        std::vector<std::uint8_t> out;
        out.reserve(2 * (n_size_bins() + n_time_bins()));
        for (const auto* vec : {&size_fwd, &time_fwd, &size_bwd, &time_bwd})
            for (auto c : *vec) out.push_back(static_cast<std::uint8_t>(c));
        return out;
    }
};

inline DistRepr build_dist(const Flow& flow, const Binning& size_binning,
                           const Binning& time_binning, double tau,
                           CounterMode mode = CounterMode::exact) {
    if (time_binning.cap() != tau)
        throw std::invalid_argument("time binning cap must equal the collection window tau");
    DistRepr r;
    r.size_fwd.assign(size_binning.bin_count(), 0);
    r.size_bwd.assign(size_binning.bin_count(), 0);
    r.time_fwd.assign(time_binning.bin_count(), 0);
    r.time_bwd.assign(time_binning.bin_count(), 0);
    r.tau = tau;
    r.mode = mode;
    for (const auto& p : flow.packets) {
        if (p.t >= tau) continue;
        auto& sizes = p.dir == 0 ? r.size_fwd : r.size_bwd;
        auto& times = p.dir == 0 ? r.time_fwd : r.time_bwd;
        detail::bump(sizes, size_binning.map_value(p.size), mode);
        detail::bump(times, time_binning.map_value(p.t), mode);
    }
    return r;
}

// Doubles the time scope of a dist representation in place: time bins merge
// pairwise into the lower half, the upper half counts the new packets into
// uniform bins over [tau, 2*tau), and size counters keep accumulating.
// `next_time_binning` is the shared stage binning over [0, 2*tau] (the result
// of halve_by_pair_merge on the current one); only O(1) locals are used.
inline void update_dist_double(DistRepr& r, std::span<const FlowPacket> new_packets,
                               const Binning& size_binning, const Binning& next_time_binning) {
    std::size_t n = r.n_time_bins();
    if (n % 2 != 0) throw std::invalid_argument("pair-merge update needs an even time bin count");
    double tau2 = 2.0 * r.tau;
    if (next_time_binning.cap() != tau2 || next_time_binning.bin_count() != n)
        throw std::invalid_argument("next time binning does not match the doubled scope");

    for (auto* vec : {&r.time_fwd, &r.time_bwd}) {
        auto& t = *vec;
        for (std::size_t j = 0; j < n / 2; ++j)
            t[j] = detail::clamp_add(t[2 * j], t[2 * j + 1], r.mode);
        std::fill(t.begin() + static_cast<std::ptrdiff_t>(n / 2), t.end(), 0u);
    }
    for (const auto& p : new_packets) {
        if (p.t < r.tau || p.t >= tau2)
            throw std::invalid_argument("update packet outside [tau, 2*tau)");
        auto& sizes = p.dir == 0 ? r.size_fwd : r.size_bwd;
        auto& times = p.dir == 0 ? r.time_fwd : r.time_bwd;
        detail::bump(sizes, size_binning.map_value(p.size), r.mode);
        detail::bump(times, next_time_binning.map_value(p.t), r.mode);
    }
    r.tau = tau2;
}

// Log-binned variant: the two smallest-interval counters merge, the rest shift
// one slot toward the small end, and the freed largest-interval slot counts the
// packets of [tau, 2*tau).
inline void update_dist_log_shift(DistRepr& r, std::span<const FlowPacket> new_packets,
                                  const Binning& size_binning) {
    std::size_t n = r.n_time_bins();
    if (n < 2) throw std::invalid_argument("log-shift update needs at least two time bins");
    double tau2 = 2.0 * r.tau;

    for (auto* vec : {&r.time_fwd, &r.time_bwd}) {
        auto& t = *vec;
        t[0] = detail::clamp_add(t[0], t[1], r.mode);
        for (std::size_t j = 1; j + 1 < n; ++j) t[j] = t[j + 1];
        t[n - 1] = 0;
    }
    for (const auto& p : new_packets) {
        if (p.t < r.tau || p.t >= tau2)
            throw std::invalid_argument("update packet outside [tau, 2*tau)");
        auto& sizes = p.dir == 0 ? r.size_fwd : r.size_bwd;
        auto& times = p.dir == 0 ? r.time_fwd : r.time_bwd;
        detail::bump(sizes, size_binning.map_value(p.size), r.mode);
        detail::bump(times, n, r.mode);
    }
    r.tau = tau2;
}

/// Two N x N per-direction matrices; cell (i, j) counts packets in time bin i
/// and size bin j.
struct FlowPicRepr {
    std::size_t n = 0;
    std::vector<std::uint32_t> fwd, bwd;  // row-major, time-major
    CounterMode mode = CounterMode::exact;

    std::uint32_t at(bool backward, std::size_t time_bin, std::size_t size_bin) const {
        const auto& m = backward ? bwd : fwd;
        return m[(time_bin - 1) * n + (size_bin - 1)];
    }

    std::vector<std::uint8_t> to_bytes() const {
        if (mode != CounterMode::compact)
            throw std::invalid_argument("binary serialization requires compact counters");
        std::vector<std::uint8_t> out;
        out.reserve(2 * n * n);
        for (const auto* m : {&fwd, &bwd})
            for (auto c : *m) out.push_back(static_cast<std::uint8_t>(c));
        return out;
    }
};

inline FlowPicRepr build_flowpic(const Flow& flow, std::size_t n, double tau,
                                 CounterMode mode = CounterMode::exact) {
    Binning size_b = Binning::uniform(n, kSizeCap, BinDomain::size);
    Binning time_b = Binning::uniform(n, tau, BinDomain::time);
    FlowPicRepr r;
    r.n = n;
    r.mode = mode;
    r.fwd.assign(n * n, 0);
    r.bwd.assign(n * n, 0);
    for (const auto& p : flow.packets) {
        if (p.t >= tau) continue;
        auto i = time_b.map_value(p.t);
        auto j = size_b.map_value(p.size);
        auto& cell = (p.dir == 0 ? r.fwd : r.bwd)[(i - 1) * n + (j - 1)];
        if (mode == CounterMode::compact && cell >= kCounterMax) continue;
        ++cell;
    }
    return r;
}

/// First-N-packets time series; missing tail entries are zero.
struct TimeSeriesRepr {
    struct Entry {
        float t = 0.0f;
        std::uint16_t size = 0;
        std::uint8_t dir = 0;
    };
    std::vector<Entry> entries;  // exactly n entries after building

    // 6 bytes per packet: float32 time + packed (dir << 15 | size).
    std::vector<std::uint8_t> to_bytes() const {
        std::vector<std::uint8_t> out(entries.size() * 6);
        std::size_t off = 0;
        for (const auto& e : entries) {
            std::memcpy(out.data() + off, &e.t, 4);
            std::uint16_t packed = static_cast<std::uint16_t>((e.dir << 15) | (e.size & 0x7ff));
            std::memcpy(out.data() + off + 4, &packed, 2);
            off += 6;
        }
        return out;
    }
};

inline TimeSeriesRepr build_timeseries(const Flow& flow, std::size_t n) {
    TimeSeriesRepr r;
    r.entries.resize(n);
    std::size_t m = std::min(n, flow.packets.size());
    for (std::size_t i = 0; i < m; ++i) {
        const auto& p = flow.packets[i];
        r.entries[i].t = static_cast<float>(p.t);
        r.entries[i].size = static_cast<std::uint16_t>(std::min(p.size, kSizeCap));
        r.entries[i].dir = p.dir;
    }
    return r;
}

struct StatGroup {
    double min = 0, max = 0, mean = 0, median = 0, std_dev = 0;
};

/// 33 scalar features: {min, max, mean, median, std} of packet sizes and
/// relative arrival times, each over all/forward/backward packets, plus the
/// three packet counts.
struct StatsRepr {
    StatGroup size_all, size_fwd, size_bwd;
    StatGroup time_all, time_fwd, time_bwd;
    double count_all = 0, count_fwd = 0, count_bwd = 0;

    std::array<double, 33> flatten() const {
        std::array<double, 33> out{};
        std::size_t i = 0;
        for (const auto* g : {&size_all, &size_fwd, &size_bwd, &time_all, &time_fwd, &time_bwd}) {
            out[i++] = g->min;
            out[i++] = g->max;
            out[i++] = g->mean;
            out[i++] = g->median;
            out[i++] = g->std_dev;
        }
        out[i++] = count_all;
        out[i++] = count_fwd;
        out[i++] = count_bwd;
        return out;
    }

    // 33 float32 values, 132 bytes.
    std::vector<std::uint8_t> to_bytes() const {
        auto f = flatten();
        std::vector<std::uint8_t> out(f.size() * 4);
        for (std::size_t i = 0; i < f.size(); ++i) {
            float v = static_cast<float>(f[i]);
            std::memcpy(out.data() + i * 4, &v, 4);
        }
        return out;
    }
};

namespace detail {

// Population std and even-count median over a scratch copy.
inline StatGroup stat_group(std::vector<double> vals) {
    StatGroup g;
    if (vals.empty()) return g;
    std::sort(vals.begin(), vals.end());
    g.min = vals.front();
    g.max = vals.back();
    double sum = 0;
    for (double v : vals) sum += v;
    g.mean = sum / static_cast<double>(vals.size());
    std::size_t n = vals.size();
    g.median = n % 2 == 1 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    double ss = 0;
    for (double v : vals) ss += (v - g.mean) * (v - g.mean);
    g.std_dev = std::sqrt(ss / static_cast<double>(n));
    return g;
}

}  // namespace detail

inline StatsRepr build_stats(const Flow& flow) {
    std::vector<double> s_all, s_fwd, s_bwd, t_all, t_fwd, t_bwd;
    for (const auto& p : flow.packets) {
        s_all.push_back(p.size);
        t_all.push_back(p.t);
        if (p.dir == 0) {
            s_fwd.push_back(p.size);
            t_fwd.push_back(p.t);
        } else {
            s_bwd.push_back(p.size);
            t_bwd.push_back(p.t);
        }
    }
    StatsRepr r;
    r.count_all = static_cast<double>(s_all.size());
    r.count_fwd = static_cast<double>(s_fwd.size());
    r.count_bwd = static_cast<double>(s_bwd.size());
    r.size_all = detail::stat_group(std::move(s_all));
    r.size_fwd = detail::stat_group(std::move(s_fwd));
    r.size_bwd = detail::stat_group(std::move(s_bwd));
    r.time_all = detail::stat_group(std::move(t_all));
    r.time_fwd = detail::stat_group(std::move(t_fwd));
    r.time_bwd = detail::stat_group(std::move(t_bwd));
    return r;
}

enum class ReprKind { dist, ts, fp, sts };

inline ReprKind repr_kind_from_string(const std::string& s) {
    if (s == "dist") return ReprKind::dist;
    if (s == "ts") return ReprKind::ts;
    if (s == "fp") return ReprKind::fp;
    if (s == "sts") return ReprKind::sts;
    throw std::invalid_argument("unknown representation kind: " + s);
}

inline std::size_t repr_bytes(ReprKind kind, std::size_t n) {
    switch (kind) {
        case ReprKind::dist: return 4 * n;
        case ReprKind::ts: return 6 * n;
        case ReprKind::fp: return 2 * n * n;
        case ReprKind::sts: return 132;
    }
    throw std::invalid_argument("unknown representation kind");
}

// Total bytes held by all in-flight representations: per-flow size times the
// number of flows collected over one window (flow_rate * tau).
inline double estimate_memory(ReprKind kind, std::size_t n, double flow_rate, double tau) {
    if (flow_rate < 0 || tau < 0) throw std::invalid_argument("rate and tau must be non-negative");
    return static_cast<double>(repr_bytes(kind, n)) * flow_rate * tau;
}

// One-decimal decimal-unit rendering; matches the usual 300.0M / 30.7G style.
inline std::string format_bytes_decimal(double bytes) {
    const char* suffix = "";
    double v = bytes;
    if (bytes >= 1e9) {
        v = bytes / 1e9;
        suffix = "G";
    } else if (bytes >= 1e6) {
        v = bytes / 1e6;
        suffix = "M";
    } else if (bytes >= 1e3) {
        v = bytes / 1e3;
        suffix = "K";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f%s", v, suffix);
    return buf;
}

// Feature table for a whole dataset: one row per flow, dist layout
// [size_fwd, time_fwd, size_bwd, time_bwd].
inline Matrix build_dist_features(std::span<const Flow> flows, const Binning& size_binning,
                                  const Binning& time_binning, double tau,
                                  CounterMode mode = CounterMode::exact) {
    std::size_t cols = 2 * (size_binning.bin_count() + time_binning.bin_count());
    Matrix m(flows.size(), cols);
    for (std::size_t i = 0; i < flows.size(); ++i) {
        auto flat = build_dist(flows[i], size_binning, time_binning, tau, mode).flatten();
        std::copy(flat.begin(), flat.end(), m.row(i).begin());
    }
    return m;
}

inline std::vector<std::string> dist_feature_names(std::size_t n_size, std::size_t n_time) {
    std::vector<std::string> names;
    auto block = [&](const char* prefix, std::size_t n) {
        for (std::size_t i = 1; i <= n; ++i) names.push_back(std::string(prefix) + std::to_string(i));
    };
    block("size_fwd_", n_size);
    block("time_fwd_", n_time);
    block("size_bwd_", n_size);
    block("time_bwd_", n_time);
    return names;
}

// Flat CSV export: label column followed by feature columns.
inline void write_features_csv(const std::string& path, const std::vector<std::string>& labels,
                               const Matrix& features, const std::vector<std::string>& columns) {
    if (labels.size() != features.rows || columns.size() != features.cols)
        throw std::invalid_argument("features/labels/columns shape mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write features CSV: " + path);
    out << "label";
    for (const auto& c : columns) out << "," << c;
    out << "\n";
    for (std::size_t r = 0; r < features.rows; ++r) {
        out << labels[r];
        for (std::size_t c = 0; c < features.cols; ++c) out << "," << features.at(r, c);
        out << "\n";
    }
}

}  // namespace echoflow
