#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <vector>

namespace echoflow {

struct FoldSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Stratified k-fold split over class indices. Each class is shuffled and
// dealt round-robin, so per-class fold sizes differ by at most one and the
// union of test folds covers every index exactly once.
inline std::vector<FoldSplit> stratified_kfold(const std::vector<int>& labels,
                                               std::size_t k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("k-fold split needs k >= 2");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    for (const auto& [cls, idx] : by_class) {
        if (idx.size() < k)
            throw std::invalid_argument("class " + std::to_string(cls) +
                                        " has fewer samples than k");
    }

    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> test_folds(k);
    for (auto& [cls, idx] : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i = 0; i < idx.size(); ++i) test_folds[i % k].push_back(idx[i]);
    }

    std::vector<FoldSplit> folds(k);
    for (std::size_t f = 0; f < k; ++f) {
        auto& test = test_folds[f];
        std::sort(test.begin(), test.end());
        folds[f].test = test;
        for (std::size_t g = 0; g < k; ++g) {
            if (g == f) continue;
            folds[f].train.insert(folds[f].train.end(), test_folds[g].begin(),
                                  test_folds[g].end());
        }
        std::sort(folds[f].train.begin(), folds[f].train.end());
    }
    return folds;
}

// Single stratified holdout split (e.g. 80/20); returns {train, test}.
inline FoldSplit stratified_holdout(const std::vector<int>& labels, double test_fraction,
                                    std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw std::invalid_argument("test fraction must be in (0, 1)");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    std::mt19937_64 rng(seed);
    FoldSplit split;
    for (auto& [cls, idx] : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        auto n_test = static_cast<std::size_t>(
            std::llround(test_fraction * static_cast<double>(idx.size())));
        n_test = std::min(std::max<std::size_t>(n_test, 1), idx.size() - 1);
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < n_test ? split.test : split.train).push_back(idx[i]);
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

}  // namespace echoflow
