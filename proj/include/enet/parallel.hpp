#pragma once

#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace enet {

// Deterministic task parallelism. parallel_for splits [0, n) into
// contiguous blocks, one per worker; every index must write only its own
// outputs and any reduction across indices happens outside the parallel
// region. Under that rule results are identical for every thread count.

class ThreadPool {
public:
    explicit ThreadPool(unsigned threads) { start(threads); }

    ~ThreadPool() { stop(); }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    unsigned size() const { return static_cast<unsigned>(workers_.size()) + 1; }

    void resize(unsigned threads) {
        stop();
        start(threads);
    }

    /// Calls fn(i) for every i in [0, n). Blocks until all indices ran.
    void for_each(std::size_t n, const std::function<void(std::size_t)>& fn) {
        if (n == 0) return;
        const unsigned t = size();
        if (t == 1 || n == 1) {
            for (std::size_t i = 0; i < n; ++i) fn(i);
            return;
        }
        {
            std::lock_guard lock(mutex_);
            job_fn_ = &fn;
            job_n_ = n;
            pending_ = static_cast<unsigned>(workers_.size());
            ++generation_;
        }
        cv_.notify_all();
        run_block(0, n, t, fn);  // caller takes block 0
        std::unique_lock lock(mutex_);
        done_cv_.wait(lock, [&] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

private:
    static void run_block(unsigned block, std::size_t n, unsigned t,
                          const std::function<void(std::size_t)>& fn) {
        const std::size_t lo = n * block / t;
        const std::size_t hi = n * (block + 1) / t;
        for (std::size_t i = lo; i < hi; ++i) fn(i);
    }

    void start(unsigned threads) {
        if (threads < 1) threads = 1;
        stopping_ = false;
        for (unsigned w = 1; w < threads; ++w) {
            workers_.emplace_back([this, w] { worker_loop(w); });
        }
    }

    void stop() {
        {
            std::lock_guard lock(mutex_);
            stopping_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& th : workers_) th.join();
        workers_.clear();
    }

    void worker_loop(unsigned block) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::size_t)>* fn = nullptr;
            std::size_t n = 0;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [&] { return stopping_ || generation_ != seen; });
                if (stopping_) return;
                seen = generation_;
                fn = job_fn_;
                n = job_n_;
            }
            if (fn) run_block(block, n, size(), *fn);
            {
                std::lock_guard lock(mutex_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(std::size_t)>* job_fn_ = nullptr;
    std::size_t job_n_ = 0;
    unsigned pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stopping_ = false;
};

namespace detail {

inline unsigned initial_thread_count() {
    if (const char* env = std::getenv("ENET_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

inline ThreadPool& pool() {
    static ThreadPool p(initial_thread_count());
    return p;
}

}  // namespace detail

inline void set_thread_count(unsigned threads) {
    if (threads < 1) threads = 1;
    if (detail::pool().size() != threads) detail::pool().resize(threads);
}

inline unsigned thread_count() { return detail::pool().size(); }

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::function<void(std::size_t)> wrapped = std::forward<Fn>(fn);
    detail::pool().for_each(n, wrapped);
}

}  // namespace enet
