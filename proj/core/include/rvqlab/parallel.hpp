#pragma once

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace rvqlab {

// Worker count for parallel sections: RVQLAB_WORKERS if set, otherwise the
// hardware concurrency.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("RVQLAB_WORKERS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

// Runs fn(i) for i in [0, n). Each index is processed by exactly one worker
// and writes only its own slot, so results do not depend on scheduling.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         std::size_t workers = 0) {
    if (workers == 0) workers = worker_count();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    auto body = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n || failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                if (!failed.exchange(true)) first_error = std::current_exception();
                return;
            }
        }
    };
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (failed.load() && first_error) std::rethrow_exception(first_error);
}

}  // namespace rvqlab
