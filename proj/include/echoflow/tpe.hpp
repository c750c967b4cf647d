#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>
#include <vector>

#include "echoflow/rng.hpp"

namespace echoflow {

/// Search space for the interior boundaries of an N-bin binning over [0, cap):
/// N-1 coordinates drawn from a sorted grid of allowed values. An optional
/// second block (joint size+time optimization) appends the interior
/// boundaries of a second binning with its own grid; coordinates stay sorted
/// within each block.
struct SearchSpace {
    std::size_t n_bins = 0;
    double cap = 0;
    std::vector<double> candidate_values;  // sorted, strictly inside (0, cap)

    std::size_t n_bins_b = 0;              // 0: single-block space
    double cap_b = 0;
    std::vector<double> candidate_values_b;

    std::size_t block_split() const { return n_bins - 1; }
    std::size_t n_coords() const {
        return (n_bins - 1) + (n_bins_b > 0 ? n_bins_b - 1 : 0);
    }

    struct Grid {
        const std::vector<double>* values;
        double cap;

        double step() const {
            if (values->size() < 2) return cap / 4;
            double s = std::numeric_limits<double>::max();
            for (std::size_t i = 1; i < values->size(); ++i)
                s = std::min(s, (*values)[i] - (*values)[i - 1]);
            return s;
        }

        double snap(double x) const {
            auto it = std::lower_bound(values->begin(), values->end(), x);
            if (it == values->end()) return values->back();
            if (it == values->begin()) return values->front();
            return (x - *(it - 1)) <= (*it - x) ? *(it - 1) : *it;
        }
    };

    Grid grid_for(std::size_t coord) const {
        if (coord < block_split()) return {&candidate_values, cap};
        return {&candidate_values_b, cap_b};
    }

    void validate() const {
        auto check_block = [](std::size_t bins, double c, const std::vector<double>& vals) {
            if (bins < 1) throw std::invalid_argument("search space needs n_bins >= 1");
            if (!(c > 0)) throw std::invalid_argument("search space cap must be positive");
            if (vals.size() < bins - 1)
                throw std::invalid_argument("fewer candidate values than boundaries to place");
            for (std::size_t i = 0; i < vals.size(); ++i) {
                if (!(vals[i] > 0 && vals[i] < c))
                    throw std::invalid_argument("candidate boundary outside (0, cap)");
                if (i > 0 && vals[i] <= vals[i - 1])
                    throw std::invalid_argument("candidate values must be sorted and distinct");
            }
        };
        check_block(n_bins, cap, candidate_values);
        if (n_bins_b > 0) check_block(n_bins_b, cap_b, candidate_values_b);
    }

    // Integer grid 1..cap-1, the natural space for packet-size boundaries.
    static SearchSpace integer_grid(std::size_t n_bins, double cap) {
        SearchSpace s;
        s.n_bins = n_bins;
        s.cap = cap;
        for (double v = 1; v < cap; v += 1) s.candidate_values.push_back(v);
        s.validate();
        return s;
    }

    // Adds a second block of n_bins_b boundaries over (0, cap_b) on a uniform
    // real grid with the given number of points.
    SearchSpace with_second_block(std::size_t bins_b, double capacity_b,
                                  std::size_t grid_points) const {
        SearchSpace s = *this;
        s.n_bins_b = bins_b;
        s.cap_b = capacity_b;
        s.candidate_values_b.clear();
        for (std::size_t k = 1; k <= grid_points; ++k)
            s.candidate_values_b.push_back(capacity_b * double(k) / double(grid_points + 1));
        s.validate();
        return s;
    }

    // Backwards-friendly helpers for the common single-block case.
    double grid_step() const { return Grid{&candidate_values, cap}.step(); }
    double snap(double x) const { return Grid{&candidate_values, cap}.snap(x); }
};

struct Trial {
    // Interior boundaries; in two-block spaces the first block's coordinates
    // come first, each block sorted ascending.
    std::vector<double> boundaries;
    double objective = 0;  // higher is better
};

struct TpeConfig {
    std::size_t n_iterations = 200;
    std::size_t n_startup_random = 20;
    double gamma = 0.25;             // fraction of history treated as "good"
    std::size_t n_ei_candidates = 24;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_iterations < 1) throw std::invalid_argument("tpe needs at least one iteration");
        if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("gamma must be in (0, 1)");
        if (n_startup_random >= n_iterations && n_iterations > 1)
            throw std::invalid_argument("startup trials must be fewer than iterations");
        if (n_ei_candidates < 1) throw std::invalid_argument("need at least one EI candidate");
    }
};

struct TpeResult {
    Trial best;
    std::vector<Trial> history;
};

namespace detail {

// Sorts each block, then nudges duplicates up to the next free grid value
// (down when the top of the grid is exhausted), so proposals are always
// strictly increasing within their block.
inline void make_strictly_increasing(std::vector<double>& coords, const SearchSpace& space) {
    auto fix_block = [](std::vector<double>& v, std::size_t lo, std::size_t hi,
                        const std::vector<double>& grid) {
        std::sort(v.begin() + lo, v.begin() + hi);
        for (std::size_t i = lo + 1; i < hi; ++i) {
            if (v[i] > v[i - 1]) continue;
            auto it = std::upper_bound(grid.begin(), grid.end(), v[i - 1]);
            if (it != grid.end()) {
                v[i] = *it;
            } else {
                auto down = std::lower_bound(grid.begin(), grid.end(), v[i]);
                for (std::size_t j = i; j-- > lo && down != grid.begin();) {
                    if (v[j] >= v[j + 1]) v[j] = *(--down);
                }
            }
        }
    };
    std::size_t split = std::min(space.block_split(), coords.size());
    fix_block(coords, 0, split, space.candidate_values);
    if (coords.size() > split) fix_block(coords, split, coords.size(), space.candidate_values_b);
}

// Parzen mixture over one coordinate: Gaussians at the observed values with a
// shared Scott-rule bandwidth (spread-adaptive, so proposals travel while the
// set is scattered and sharpen once it concentrates), plus one wide prior
// component over the whole domain so no region ever has zero density.
struct ParzenSet {
    std::vector<double> centers;
    std::vector<double> bandwidths;

    // `bw_scale` anneals the kernel width over the optimization so early
    // proposals travel and late ones refine.
    static ParzenSet fit(const std::vector<double>& values, const SearchSpace::Grid& grid,
                         double bw_scale = 1.0) {
        ParzenSet p;
        std::size_t m = values.size();
        double mean = 0;
        for (double v : values) mean += v;
        mean /= std::max<double>(1.0, double(m));
        double var = 0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= std::max<double>(1.0, double(m));
        double scott = 1.06 * std::sqrt(var) * std::pow(std::max<double>(m, 2.0), -0.2);
        double bw = std::clamp(scott * bw_scale, grid.step(), grid.cap / 4);
        for (std::size_t i = 0; i < m; ++i) {
            p.centers.push_back(values[i]);
            p.bandwidths.push_back(bw);
        }
        p.centers.push_back(grid.cap / 2);
        p.bandwidths.push_back(grid.cap / 2);
        return p;
    }

    double log_density(double x) const {
        double acc = 0;
        for (std::size_t i = 0; i < centers.size(); ++i) {
            double z = (x - centers[i]) / bandwidths[i];
            acc += std::exp(-0.5 * z * z) / bandwidths[i];
        }
        acc /= static_cast<double>(centers.size()) * std::sqrt(2.0 * 3.141592653589793);
        return std::log(std::max(acc, 1e-300));
    }

    double sample(std::mt19937_64& rng) const {
        std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
        std::size_t i = pick(rng);
        return std::normal_distribution<double>(centers[i], bandwidths[i])(rng);
    }
};

inline std::vector<double> random_boundaries(const SearchSpace& space, std::mt19937_64& rng) {
    std::vector<double> coords;
    auto sample_block = [&](const std::vector<double>& grid, std::size_t count) {
        std::vector<double> block;
        if (count == 0) return block;
        std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
        while (block.size() < count) {
            double v = grid[pick(rng)];
            if (std::find(block.begin(), block.end(), v) == block.end()) block.push_back(v);
        }
        std::sort(block.begin(), block.end());
        return block;
    };
    auto a = sample_block(space.candidate_values, space.n_bins - 1);
    coords.insert(coords.end(), a.begin(), a.end());
    if (space.n_bins_b > 0) {
        auto b = sample_block(space.candidate_values_b, space.n_bins_b - 1);
        coords.insert(coords.end(), b.begin(), b.end());
    }
    return coords;
}

}  // namespace detail

// Tree-structured Parzen estimator over sorted interior boundary vectors.
// After the random startup phase the history splits at the gamma quantile into
// good and bad sets; candidates are drawn from the good set's per-coordinate
// densities and scored by the good/bad likelihood ratio.
inline TpeResult tpe_optimize(const SearchSpace& space,
                              const std::function<double(const std::vector<double>&)>& objective,
                              const TpeConfig& cfg) {
    space.validate();
    cfg.validate();

    std::mt19937_64 rng(cfg.seed);
    TpeResult result;
    auto& history = result.history;
    std::set<std::vector<double>> seen;

    auto evaluate = [&](std::vector<double> coords) {
        Trial t;
        t.boundaries = std::move(coords);
        t.objective = objective(t.boundaries);
        seen.insert(t.boundaries);
        history.push_back(t);
    };

    for (std::size_t iter = 0; iter < cfg.n_iterations; ++iter) {
        if (iter < cfg.n_startup_random || history.size() < 2 || space.n_coords() == 0) {
            evaluate(detail::random_boundaries(space, rng));
            continue;
        }

        std::vector<std::size_t> order(history.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return history[a].objective > history[b].objective;
        });
        std::size_t n_good = static_cast<std::size_t>(
            std::ceil(cfg.gamma * static_cast<double>(history.size())));
        n_good = std::clamp<std::size_t>(n_good, 1, history.size() - 1);

        std::size_t dims = space.n_coords();
        double progress = static_cast<double>(iter) / static_cast<double>(cfg.n_iterations);
        double bw_scale = std::max(0.15, 1.0 - progress);
        std::vector<detail::ParzenSet> good(dims), bad(dims);
        for (std::size_t j = 0; j < dims; ++j) {
            std::vector<double> gv, bv;
            for (std::size_t i = 0; i < order.size(); ++i)
                (i < n_good ? gv : bv).push_back(history[order[i]].boundaries[j]);
            good[j] = detail::ParzenSet::fit(gv, space.grid_for(j), bw_scale);
            bad[j] = detail::ParzenSet::fit(bv, space.grid_for(j), bw_scale);
        }

        // Re-proposing an already-evaluated point wastes the iteration, so
        // fresh candidates win over higher-scoring repeats.
        std::vector<double> best_candidate, best_seen_candidate;
        double best_score = -std::numeric_limits<double>::infinity();
        double best_seen_score = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cfg.n_ei_candidates; ++c) {
            std::vector<double> coords(dims);
            for (std::size_t j = 0; j < dims; ++j) {
                auto grid = space.grid_for(j);
                coords[j] = grid.snap(std::clamp(good[j].sample(rng), grid.values->front(),
                                                 grid.values->back()));
            }
            detail::make_strictly_increasing(coords, space);
            double score = 0;
            for (std::size_t j = 0; j < dims; ++j)
                score += good[j].log_density(coords[j]) - bad[j].log_density(coords[j]);
            if (seen.count(coords)) {
                if (score > best_seen_score) {
                    best_seen_score = score;
                    best_seen_candidate = std::move(coords);
                }
            } else if (score > best_score) {
                best_score = score;
                best_candidate = std::move(coords);
            }
        }
        if (best_candidate.empty()) best_candidate = std::move(best_seen_candidate);
        evaluate(std::move(best_candidate));
    }

    result.best = *std::max_element(history.begin(), history.end(),
                                    [](const Trial& a, const Trial& b) {
                                        return a.objective < b.objective;
                                    });
    return result;
}

// Random-search baseline over the same space, mainly for sanity comparisons.
inline TpeResult random_search(const SearchSpace& space,
                               const std::function<double(const std::vector<double>&)>& objective,
                               std::size_t n_iterations, std::uint64_t seed) {
    space.validate();
    std::mt19937_64 rng(seed);
    TpeResult result;
    for (std::size_t i = 0; i < n_iterations; ++i) {
        Trial t;
        t.boundaries = detail::random_boundaries(space, rng);
        t.objective = objective(t.boundaries);
        result.history.push_back(std::move(t));
    }
    result.best = *std::max_element(result.history.begin(), result.history.end(),
                                    [](const Trial& a, const Trial& b) {
                                        return a.objective < b.objective;
                                    });
    return result;
}

}  // namespace echoflow
