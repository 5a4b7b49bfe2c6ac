#pragma once

#include <cstdint>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace homlab {

// Deterministic work sharing: indices are split into contiguous blocks, each
// worker writes only to slots addressed by its own indices, and the caller
// joins before reading. Results are therefore identical for any worker count.
template <class F>
void parallel_for(int workers, std::int64_t n, F&& body) {
    if (n <= 0) return;
    if (workers < 1) workers = 1;
    if (workers == 1 || n == 1) {
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    const int w = static_cast<int>(std::min<std::int64_t>(workers, n));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(w));
    const std::int64_t chunk = (n + w - 1) / w;
    for (int t = 0; t < w; ++t) {
        const std::int64_t b = t * chunk;
        const std::int64_t e = std::min<std::int64_t>(n, b + chunk);
        pool.emplace_back([&, t, b, e]() {
            try {
                for (std::int64_t i = b; i < e; ++i) body(i);
            } catch (...) {
                errors[static_cast<size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& ep : errors)
        if (ep) std::rethrow_exception(ep);
}

}  // namespace homlab
