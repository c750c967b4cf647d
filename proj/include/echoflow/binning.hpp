#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace echoflow {

enum class BinDomain { size, time };

inline const char* to_string(BinDomain d) { return d == BinDomain::size ? "size" : "time"; }

inline BinDomain bin_domain_from_string(const std::string& s) {
    if (s == "size") return BinDomain::size;
    if (s == "time") return BinDomain::time;
    throw std::invalid_argument("unknown binning domain: " + s);
}

/// Partition of [0, cap) into N half-open bins [b_{i-1}, b_i), indexed 1..N.
/// The last bin absorbs values >= cap (jumbo frames, late packets).
/// Size-domain binnings carry a direct-access table of length cap so mapping
/// an integer packet size to its bin is a single array read.
class Binning {
public:
    Binning(BinDomain domain, std::vector<double> boundaries)
        : domain_(domain), boundaries_(std::move(boundaries)) {
        validate();
        if (domain_ == BinDomain::size) build_lookup();
    }

    static Binning from_boundaries(std::vector<double> boundaries, BinDomain domain) {
        return Binning(domain, std::move(boundaries));
    }

    // Equal-width bins: b_i = i * cap / n.
    static Binning uniform(std::size_t n_bins, double cap, BinDomain domain) {
        if (n_bins == 0) throw std::invalid_argument("uniform binning needs at least one bin");
        if (!(cap > 0.0)) throw std::invalid_argument("binning cap must be positive");
        std::vector<double> b(n_bins + 1);
        for (std::size_t i = 0; i <= n_bins; ++i)
            b[i] = static_cast<double>(i) * cap / static_cast<double>(n_bins);
        return Binning(domain, std::move(b));
    }

    // Bin widths halve toward t=0: [0, tau/2^(N-1)), ..., [tau/4, tau/2), [tau/2, tau).
    static Binning log_time(std::size_t n_bins, double tau) {
        if (n_bins < 2) throw std::invalid_argument("log binning needs at least two bins");
        if (!(tau > 0.0)) throw std::invalid_argument("binning cap must be positive");
        std::vector<double> b(n_bins + 1);
        b[0] = 0.0;
        for (std::size_t m = 1; m < n_bins; ++m)
            b[m] = std::ldexp(tau, -static_cast<int>(n_bins - m));
        b[n_bins] = tau;
        return Binning(BinDomain::time, std::move(b));
    }

    BinDomain domain() const { return domain_; }
    std::size_t bin_count() const { return boundaries_.size() - 1; }
    double cap() const { return boundaries_.back(); }
    const std::vector<double>& boundaries() const { return boundaries_; }

    // 1-based bin index; total on v >= 0 and monotone non-decreasing.
    std::size_t map_value(double v) const {
        if (v >= cap()) return bin_count();
        if (domain_ == BinDomain::size) return lookup_[static_cast<std::size_t>(v)];
        if (time_resolution_ > 0) {
            auto idx = static_cast<std::size_t>(v / time_resolution_);
            return lookup_[std::min(idx, lookup_.size() - 1)];
        }
        auto it = std::upper_bound(boundaries_.begin(), boundaries_.end(), v);
        return static_cast<std::size_t>(it - boundaries_.begin());
    }

    // Optional direct-access table for time binnings: arrival times quantized
    // to `resolution` map through one array read instead of a binary search.
    // Values inside a cell take the cell's left-edge bin (discretization, not
    // exact interval search). Disabled by default.
    void enable_time_lookup(double resolution) {
        if (domain_ != BinDomain::time)
            throw std::invalid_argument("time lookup applies to time binnings");
        if (!(resolution > 0) || cap() / resolution > 1e8)
            throw std::invalid_argument("bad time lookup resolution");
        time_resolution_ = 0;  // build via exact search below
        auto cells = static_cast<std::size_t>(std::ceil(cap() / resolution));
        lookup_.resize(cells);
        for (std::size_t i = 0; i < cells; ++i)
            lookup_[i] = map_value(static_cast<double>(i) * resolution);
        time_resolution_ = resolution;
    }

    double time_resolution() const { return time_resolution_; }

    const std::vector<std::size_t>& lookup_table() const { return lookup_; }

    bool operator==(const Binning& o) const {
        return domain_ == o.domain_ && boundaries_ == o.boundaries_;
    }

    nlohmann::json to_json() const {
        return {{"domain", to_string(domain_)}, {"cap", cap()}, {"boundaries", boundaries_}};
    }

    static Binning from_json(const nlohmann::json& j) {
        Binning b(bin_domain_from_string(j.at("domain").get<std::string>()),
                  j.at("boundaries").get<std::vector<double>>());
        if (j.contains("cap") && j.at("cap").get<double>() != b.cap())
            throw std::invalid_argument("binning cap does not match last boundary");
        return b;
    }

private:
    void validate() const {
        if (boundaries_.size() < 2)
            throw std::invalid_argument("binning needs at least one bin");
        if (boundaries_.front() != 0.0)
            throw std::invalid_argument("first boundary must be 0");
        for (std::size_t i = 1; i < boundaries_.size(); ++i) {
            if (!std::isfinite(boundaries_[i]))
                throw std::invalid_argument("boundaries must be finite");
            if (boundaries_[i] <= boundaries_[i - 1])
                throw std::invalid_argument("boundaries must be strictly increasing");
        }
        if (domain_ == BinDomain::size) {
            double c = boundaries_.back();
            if (std::floor(c) != c || c < 1.0 || c > 1e9)
                throw std::invalid_argument("size-domain cap must be a positive integer");
        }
    }

    void build_lookup() {
        auto cap_i = static_cast<std::size_t>(cap());
        lookup_.resize(cap_i);
        for (std::size_t v = 0; v < cap_i; ++v) {
            auto it = std::upper_bound(boundaries_.begin(), boundaries_.end(),
                                       static_cast<double>(v));
            lookup_[v] = static_cast<std::size_t>(it - boundaries_.begin());
        }
    }

    BinDomain domain_;
    std::vector<double> boundaries_;
    std::vector<std::size_t> lookup_;
    double time_resolution_ = 0;  // 0: time mapping uses binary search
};

// Rescales a time binning over [0, tau] to one over [0, 2*tau]: bins merge
// pairwise into the lower half and the upper half is uniform over (tau, 2*tau].
// Mirrors the in-place counter merge applied between cascade stages, so a
// uniform binning stays uniform under repeated application.
inline Binning halve_by_pair_merge(const Binning& b) {
    if (b.domain() != BinDomain::time)
        throw std::invalid_argument("pair-merge halving applies to time binnings");
    std::size_t n = b.bin_count();
    if (n % 2 != 0)
        throw std::invalid_argument("pair-merge halving needs an even bin count");
    double cap2 = 2.0 * b.cap();
    std::vector<double> out(n + 1);
    for (std::size_t i = 0; i <= n / 2; ++i) out[i] = b.boundaries()[2 * i];
    // Same arithmetic as Binning::uniform over cap2 so rebuilt and updated
    // representations agree bin-for-bin.
    for (std::size_t j = n / 2 + 1; j <= n; ++j)
        out[j] = static_cast<double>(j) * cap2 / static_cast<double>(n);
    return Binning(BinDomain::time, std::move(out));
}

}  // namespace echoflow
