#include "bitsift/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace bitsift {

std::size_t intra_op_threads() {
    static const std::size_t cached = [] {
        const char* env = std::getenv("BITSIFT_THREADS");
        if (!env) {
            return std::size_t{1};
        }
        const long parsed = std::strtol(env, nullptr, 10);
        if (parsed <= 1) {
            return std::size_t{1};
        }
        const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
        return std::min(static_cast<std::size_t>(parsed), hw);
    }();
    return cached;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(intra_op_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([&fn, begin, end] {
            for (std::size_t i = begin; i < end; ++i) {
                fn(i);
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
}

}  // namespace bitsift
