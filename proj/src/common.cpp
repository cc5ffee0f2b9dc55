#include "neutrace/common.hpp"

#include <algorithm>
#include <cstdlib>

namespace neutrace {

static int detect_threads() {
    if (const char* env = std::getenv("NEUTRACE_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : int(hw);
}

int& thread_count() {
    static int n = detect_threads();
    return n;
}

void set_thread_count(int n) { thread_count() = std::max(1, n); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    if (n <= 0) return;
    int workers = std::min<int64_t>(thread_count(), n);
    if (workers <= 1) {
        body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    int64_t chunk = (n + workers - 1) / workers;
    for (int w = 1; w < workers; ++w) {
        int64_t lo = w * chunk;
        int64_t hi = std::min<int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    body(0, std::min<int64_t>(n, chunk));
    for (auto& t : pool) t.join();
}

}  // namespace neutrace
