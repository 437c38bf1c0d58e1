#pragma once

// Minimal persistent worker pool for data-parallel loops. Work is handed
// out as index ranges; results must be written to per-index slots so the
// outcome is identical to the serial loop regardless of thread count.

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace metroems {

class ThreadPool {
public:
    explicit ThreadPool(int threads) : requested_(threads < 1 ? 1 : threads) {
        for (int i = 0; i + 1 < requested_; ++i)
            workers_.emplace_back([this, slot = i + 1] { worker_loop(slot); });
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lock(mutex_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    int threads() const { return requested_; }

    /// Run fn(i) for i in [0, n). Blocks until all indices are done. The
    /// calling thread participates, so a 1-thread pool runs inline. Indices
    /// are claimed atomically in blocks; fn must only write state owned by
    /// index i.
    void parallel_for(long n, const std::function<void(long)>& fn) {
        const std::function<void(long, int)> wrapped = [&fn](long i, int) { fn(i); };
        parallel_for_slots(n, wrapped);
    }

    /// As parallel_for, but fn also receives the participant slot in
    /// [0, threads()): 0 is the calling thread, 1.. are pool workers. Use it
    /// to index per-participant scratch without sharing.
    void parallel_for_slots(long n, const std::function<void(long, int)>& fn) {
        if (n <= 0) return;
        if (requested_ == 1 || n == 1) {
            for (long i = 0; i < n; ++i) fn(i, 0);
            return;
        }
        {
            std::unique_lock<std::mutex> lock(mutex_);
            job_fn_ = &fn;
            job_n_ = n;
            next_.store(0, std::memory_order_relaxed);
            pending_ = static_cast<int>(workers_.size());
            ++generation_;
        }
        cv_.notify_all();
        drain(fn, n, 0);
        std::unique_lock<std::mutex> lock(mutex_);
        done_cv_.wait(lock, [this] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

private:
    void drain(const std::function<void(long, int)>& fn, long n, int slot) {
        const long block = std::max(1L, n / (8L * requested_));
        for (;;) {
            const long begin = next_.fetch_add(block, std::memory_order_relaxed);
            if (begin >= n) break;
            const long end = std::min(begin + block, n);
            for (long i = begin; i < end; ++i) fn(i, slot);
        }
    }

    void worker_loop(int slot) {
        long seen = 0;
        for (;;) {
            const std::function<void(long, int)>* fn = nullptr;
            long n = 0;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_.wait(lock, [&] { return stopping_ || generation_ != seen; });
                if (stopping_) return;
                seen = generation_;
                fn = job_fn_;
                n = job_n_;
            }
            drain(*fn, n, slot);
            {
                std::unique_lock<std::mutex> lock(mutex_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    int requested_;
    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(long, int)>* job_fn_ = nullptr;
    long job_n_ = 0;
    std::atomic<long> next_{0};
    int pending_ = 0;
    long generation_ = 0;
    bool stopping_ = false;
};

} // namespace metroems
