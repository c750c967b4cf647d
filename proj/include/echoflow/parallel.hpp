#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace echoflow {

// Process-wide worker cap for parallel_for; 0 means all hardware threads.
inline std::size_t& thread_limit() {
    static std::size_t limit = 0;
    return limit;
}

// Static chunking over [0, n); each index writes only its own output slot, so
// results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    std::size_t workers = thread_limit() ? thread_limit() : std::thread::hardware_concurrency();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    workers = std::min(workers, n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace echoflow
