#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace oodd {

/// Runs fn(i) for i in [0, n). With jobs <= 1 everything runs inline on the
/// caller's thread; otherwise a static block partition is used. Work items
/// must not depend on execution order — results must be identical for any
/// jobs value.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (jobs <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = std::min(jobs, n);
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&, w]() {
            for (int i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : threads) t.join();
}

}  // namespace oodd
