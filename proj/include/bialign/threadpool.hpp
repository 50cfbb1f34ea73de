#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace bialign {

class ThreadPool {
public:
    explicit ThreadPool(std::size_t threads) {
        if (threads == 0) threads = 1;
        workers_.reserve(threads);
        for (std::size_t i = 0; i < threads; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_)
            if (t.joinable()) t.join();
    }

    std::size_t size() const { return workers_.size(); }

    void enqueue(std::function<void()> task) {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            tasks_.push(std::move(task));
        }
        cv_.notify_one();
    }

    // Runs fn(i) for i in [0, n), distributing across the pool, and waits.
    // fn must not throw; wrap and capture errors on the caller side.
    void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
        if (n == 0) return;
        std::mutex done_mutex;
        std::condition_variable done_cv;
        std::size_t remaining = n;
        for (std::size_t i = 0; i < n; ++i) {
            enqueue([&, i] {
                fn(i);
                std::lock_guard<std::mutex> lock(done_mutex);
                if (--remaining == 0) done_cv.notify_one();
            });
        }
        std::unique_lock<std::mutex> lock(done_mutex);
        done_cv.wait(lock, [&] { return remaining == 0; });
    }

private:
    void worker_loop() {
        for (;;) {
            std::function<void()> task;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_.wait(lock, [this] { return stop_ || !tasks_.empty(); });
                if (stop_ && tasks_.empty()) return;
                task = std::move(tasks_.front());
                tasks_.pop();
            }
            task();
        }
    }

    std::vector<std::thread> workers_;
    std::queue<std::function<void()>> tasks_;
    std::mutex mutex_;
    std::condition_variable cv_;
    bool stop_ = false;
};

} // namespace bialign
