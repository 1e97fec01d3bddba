#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace cipl {

// Worker count. CIPL_THREADS=1 forces the single-threaded contract; parallel
// kernels stay bitwise deterministic at any count because every worker writes
// a disjoint output range and no floating-point reduction crosses workers.
inline int thread_count() {
    static const int n = [] {
        if (const char* env = std::getenv("CIPL_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return std::min(v, 64);
        }
        unsigned hw = std::thread::hardware_concurrency();
        return static_cast<int>(std::clamp(hw, 1u, 8u));
    }();
    return n;
}

// Static split of [0, n) into contiguous chunks, one per worker.
// `fn(begin, end)` must only write state private to its range.
inline void parallel_for(int n, const std::function<void(int, int)>& fn) {
    const int workers = std::min(thread_count(), n);
    if (workers <= 1 || n < 32) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers) - 1);
    const int chunk = (n + workers - 1) / workers;
    for (int w = 1; w < workers; ++w) {
        const int b = std::min(n, w * chunk);
        const int e = std::min(n, b + chunk);
        if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(0, std::min(n, chunk));
    for (auto& t : pool) t.join();
}

}  // namespace cipl
