/**
 * @file parallel.hpp
 * @brief Bounded worker pool over an index range.
 */

#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace tsr {

/// Runs fn(0..n-1) on up to `jobs` threads. fn must not throw; catch and
/// record per-item failures inside it.
template <typename Fn>
void parallel_for(size_t n, int jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= n) return;
            fn(i);
        }
    };
    size_t thread_count = static_cast<size_t>(jobs) < n ? static_cast<size_t>(jobs) : n;
    std::vector<std::thread> threads;
    threads.reserve(thread_count);
    for (size_t t = 0; t < thread_count; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
}

}  // namespace tsr
