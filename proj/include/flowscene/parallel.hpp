#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace flowscene {

/// Worker cap: min(hardware threads, FLOWSCENE_THREADS when set). Always >= 1.
inline int thread_budget() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("FLOWSCENE_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1) hw = std::min(hw, cap);
    }
    return hw;
}

/// Runs fn(i) for i in [begin, end) across the thread budget. fn must write only
/// to locations owned by its own i; results are then independent of the split.
template <typename Fn>
void parallel_for(int begin, int end, Fn&& fn) {
    int n = end - begin;
    if (n <= 0) return;
    int workers = std::min(thread_budget(), n);
    if (workers <= 1) {
        for (int i = begin; i < end; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        int lo = begin + w * chunk;
        int hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn]() {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace flowscene
