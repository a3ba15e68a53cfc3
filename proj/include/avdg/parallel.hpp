#pragma once

// Example-parallel map with results stored by index, so the output does not
// depend on the worker count or on scheduling.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <type_traits>
#include <vector>

namespace avdg {

// threads == 0 means one worker per hardware thread.
inline std::size_t resolve_threads(std::size_t threads) {
    if (threads != 0) return threads;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Calls f(i) for i in [0, n). If any call throws, the exception from the
// lowest index is rethrown after all workers finish.
template <typename F>
auto parallel_map(std::size_t n, std::size_t threads, F&& f) -> std::vector<std::invoke_result_t<F&, std::size_t>> {
    using R = std::invoke_result_t<F&, std::size_t>;
    std::vector<R> out(n);
    std::vector<std::exception_ptr> errors(n);
    const std::size_t workers = std::min(resolve_threads(threads), std::max<std::size_t>(n, 1));
    auto body = [&](std::size_t w) {
        for (std::size_t i = w; i < n; i += workers) {
            try {
                out[i] = f(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers <= 1) {
        body(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers - 1);
        for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body, w);
        body(0);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

}  // namespace avdg
