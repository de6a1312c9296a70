#pragma once

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace planekit {

/// Worker count from PLANEKIT_THREADS (0 or unset = hardware concurrency).
inline int thread_count() {
    int requested = 0;
    if (const char* env = std::getenv("PLANEKIT_THREADS")) {
        try {
            requested = std::stoi(env);
        } catch (...) {
            requested = 0;
        }
    }
    if (requested > 0) {
        return requested;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(row) for every row in [0, rows). Each row must write only its own
/// outputs, so the result does not depend on the worker count.
template <typename Fn>
void parallel_rows(int rows, Fn&& fn) {
    const int workers = std::min(thread_count(), rows);
    if (workers <= 1) {
        for (int r = 0; r < rows; ++r) {
            fn(r);
        }
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int r = w; r < rows; r += workers) {
                fn(r);
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
}

} // namespace planekit
