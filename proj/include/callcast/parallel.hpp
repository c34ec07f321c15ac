#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace callcast {

/// Executes `n` independent tasks identified by index. Implementations decide the threading.
class TaskRunner {
public:
    virtual ~TaskRunner() = default;
    virtual void run(std::size_t n, const std::function<void(std::size_t)>& task) = 0;
    virtual std::size_t workers() const = 0;
};

class SequentialRunner final : public TaskRunner {
public:
    void run(std::size_t n, const std::function<void(std::size_t)>& task) override {
        for (std::size_t i = 0; i < n; ++i) task(i);
    }
    std::size_t workers() const override { return 1; }
};

/**
 * @brief Fixed-size worker pool pulling task indices from a shared counter.
 *
 * The first exception thrown by a task is rethrown from run() after all workers stop.
 */
class ThreadPoolRunner final : public TaskRunner {
public:
    explicit ThreadPoolRunner(std::size_t workers) : workers_(std::max<std::size_t>(workers, 1)) {}

    void run(std::size_t n, const std::function<void(std::size_t)>& task) override {
        if (workers_ == 1 || n <= 1) {
            SequentialRunner{}.run(n, task);
            return;
        }
        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;
        auto loop = [&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next = n;
                }
            }
        };
        std::vector<std::jthread> threads;
        for (std::size_t w = 0; w < std::min(workers_, n); ++w) threads.emplace_back(loop);
        threads.clear();
        if (error) std::rethrow_exception(error);
    }

    std::size_t workers() const override { return workers_; }

private:
    std::size_t workers_;
};

}  // namespace callcast
