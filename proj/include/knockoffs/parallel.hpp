#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace knockoff {

// Worker cap shared by all modules.  0 means "use hardware concurrency".
// The CLI --threads flag and the KNOCKOFF_THREADS environment variable both
// land here; callers always receive the same results regardless of the cap.
inline int& thread_cap() {
    static int cap = 0;
    return cap;
}

inline int effective_threads(std::size_t task_count) {
    int cap = thread_cap();
    if (cap <= 0) {
        const char* env = std::getenv("KNOCKOFF_THREADS");
        if (env != nullptr) {
            cap = std::atoi(env);
        }
    }
    if (cap <= 0) {
        cap = static_cast<int>(std::thread::hardware_concurrency());
    }
    if (cap <= 0) {
        cap = 1;
    }
    if (static_cast<std::size_t>(cap) > task_count) {
        cap = static_cast<int>(task_count);
    }
    return cap;
}

// Runs fn(i) for i in [0, task_count).  Tasks must write only to their own
// output slots; determinism then holds for any schedule.  The first exception
// thrown by a task is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t task_count, Fn&& fn) {
    if (task_count == 0) {
        return;
    }
    const int workers = effective_threads(task_count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < task_count; ++i) {
            fn(i);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto body = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= task_count) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers) - 1);
    for (int t = 1; t < workers; ++t) {
        pool.emplace_back(body);
    }
    body();
    for (auto& th : pool) {
        th.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

} // namespace knockoff
