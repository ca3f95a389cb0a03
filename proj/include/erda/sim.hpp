// Copyright 2026 The Erda Simulator Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Discrete-event core: a scalar nanosecond clock, an ordered event queue,
// lazily started coroutine tasks and single-shot futures that resume a task
// when the scheduler fires the matching completion.

#pragma once

#include <coroutine>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <utility>
#include <vector>

namespace erda {

using SimTime = std::uint64_t;

class Scheduler {
public:
    using Action = std::function<void()>;

    explicit Scheduler(std::uint64_t seed = 0) : rng_(seed) {}

    void at(SimTime t, Action a);
    void after(SimTime dt, Action a) { at(now_ + dt, std::move(a)); }

    /// Runs the earliest event. Returns false when the queue is empty.
    bool step();
    void run();
    /// Runs events while `until()` is false and events remain. Returns the
    /// number of events executed.
    std::uint64_t run_while(const std::function<bool()>& keep_going);
    std::uint64_t run_steps(std::uint64_t n);

    SimTime now() const { return now_; }
    std::uint64_t steps() const { return steps_; }
    bool idle() const { return queue_.empty(); }
    std::size_t pending() const { return queue_.size(); }

    std::mt19937_64& rng() { return rng_; }
    /// Uniform draw in [0, bound].
    std::uint64_t jitter(std::uint64_t bound);

private:
    struct Event {
        SimTime time;
        std::uint64_t seq;
        Action action;
    };
    struct Later {
        bool operator()(const Event& a, const Event& b) const {
            return a.time != b.time ? a.time > b.time : a.seq > b.seq;
        }
    };

    std::priority_queue<Event, std::vector<Event>, Later> queue_;
    SimTime now_ = 0;
    std::uint64_t seq_ = 0;
    std::uint64_t steps_ = 0;
    std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Single-shot future resolved by a callback.

template <class T>
class Future {
    struct State {
        std::optional<T> value;
        std::coroutine_handle<> waiter;
    };

public:
    class Resolver {
    public:
        Resolver() = default;
        explicit Resolver(std::shared_ptr<State> st) : st_(std::move(st)) {}
        void operator()(T v) const {
            if (!st_ || st_->value) return;
            st_->value.emplace(std::move(v));
            if (auto w = std::exchange(st_->waiter, {})) w.resume();
        }
        explicit operator bool() const { return static_cast<bool>(st_); }

    private:
        std::shared_ptr<State> st_;
    };

    Future() : st_(std::make_shared<State>()) {}

    Resolver resolver() const { return Resolver(st_); }

    static Future ready(T v) {
        Future f;
        f.st_->value.emplace(std::move(v));
        return f;
    }

    bool is_ready() const { return st_->value.has_value(); }

    bool await_ready() const noexcept { return st_->value.has_value(); }
    void await_suspend(std::coroutine_handle<> h) { st_->waiter = h; }
    T await_resume() { return std::move(*st_->value); }

private:
    std::shared_ptr<State> st_;
};

// ---------------------------------------------------------------------------
// Lazily started coroutine task with a single awaiting continuation.

template <class T>
class Task;

namespace detail {

struct FinalAwaiter {
    std::coroutine_handle<> continuation;
    bool await_ready() noexcept { return false; }
    template <class P>
    std::coroutine_handle<> await_suspend(std::coroutine_handle<P> h) noexcept {
        auto c = h.promise().continuation;
        return c ? c : std::noop_coroutine();
    }
    void await_resume() noexcept {}
};

struct PromiseBase {
    std::coroutine_handle<> continuation;
    std::exception_ptr error;
    std::suspend_always initial_suspend() noexcept { return {}; }
    FinalAwaiter final_suspend() noexcept { return {}; }
    void unhandled_exception() { error = std::current_exception(); }
};

}  // namespace detail

template <class T>
class [[nodiscard]] Task {
public:
    struct promise_type : detail::PromiseBase {
        std::optional<T> value;
        Task get_return_object() { return Task(std::coroutine_handle<promise_type>::from_promise(*this)); }
        template <class U>
        void return_value(U&& v) {
            value.emplace(std::forward<U>(v));
        }
    };

    Task() = default;
    explicit Task(std::coroutine_handle<promise_type> h) : h_(h) {}
    Task(Task&& o) noexcept : h_(std::exchange(o.h_, {})) {}
    Task& operator=(Task&& o) noexcept {
        if (this != &o) {
            if (h_) h_.destroy();
            h_ = std::exchange(o.h_, {});
        }
        return *this;
    }
    Task(const Task&) = delete;
    ~Task() {
        if (h_) h_.destroy();
    }

    bool await_ready() const noexcept { return false; }
    std::coroutine_handle<> await_suspend(std::coroutine_handle<> c) {
        h_.promise().continuation = c;
        return h_;
    }
    T await_resume() {
        if (h_.promise().error) std::rethrow_exception(h_.promise().error);
        return std::move(*h_.promise().value);
    }

    /// Starts a top-level task; it runs until its first suspension.
    void start() { h_.resume(); }
    bool done() const { return h_ && h_.done(); }
    bool valid() const { return static_cast<bool>(h_); }
    void rethrow_if_failed() const {
        if (h_ && h_.done() && h_.promise().error) std::rethrow_exception(h_.promise().error);
    }
    T& result() {
        rethrow_if_failed();
        return *h_.promise().value;
    }

private:
    std::coroutine_handle<promise_type> h_;
};

template <>
class [[nodiscard]] Task<void> {
public:
    struct promise_type : detail::PromiseBase {
        Task get_return_object() { return Task(std::coroutine_handle<promise_type>::from_promise(*this)); }
        void return_void() {}
    };

    Task() = default;
    explicit Task(std::coroutine_handle<promise_type> h) : h_(h) {}
    Task(Task&& o) noexcept : h_(std::exchange(o.h_, {})) {}
    Task& operator=(Task&& o) noexcept {
        if (this != &o) {
            if (h_) h_.destroy();
            h_ = std::exchange(o.h_, {});
        }
        return *this;
    }
    Task(const Task&) = delete;
    ~Task() {
        if (h_) h_.destroy();
    }

    bool await_ready() const noexcept { return false; }
    std::coroutine_handle<> await_suspend(std::coroutine_handle<> c) {
        h_.promise().continuation = c;
        return h_;
    }
    void await_resume() {
        if (h_.promise().error) std::rethrow_exception(h_.promise().error);
    }

    void start() { h_.resume(); }
    bool done() const { return h_ && h_.done(); }
    bool valid() const { return static_cast<bool>(h_); }
    void rethrow_if_failed() const {
        if (h_ && h_.done() && h_.promise().error) std::rethrow_exception(h_.promise().error);
    }

private:
    std::coroutine_handle<promise_type> h_;
};

// ---------------------------------------------------------------------------
// A single server CPU: FIFO work items, each charging simulated time. Effects
// registered with at_end() run when the item's CPU time has elapsed.

class CpuQueue {
public:
    class Context {
    public:
        void charge(SimTime ns) { cost_ += ns; }
        void at_end(std::function<void()> fn) { tail_.push_back(std::move(fn)); }
        SimTime cost() const { return cost_; }

    private:
        friend class CpuQueue;
        SimTime cost_ = 0;
        std::vector<std::function<void()>> tail_;
    };
    using Work = std::function<void(Context&)>;
    /// Queried before each item and each item's tail; false stops the queue.
    using Alive = std::function<bool()>;

    CpuQueue(Scheduler& sched, Alive alive) : sched_(sched), alive_(std::move(alive)) {}

    void submit(Work w);
    bool busy() const { return running_; }
    std::size_t backlog() const { return queue_.size(); }
    SimTime busy_time() const { return busy_time_; }

private:
    void kick();

    Scheduler& sched_;
    Alive alive_;
    std::queue<Work> queue_;
    bool running_ = false;
    SimTime busy_time_ = 0;
};

}  // namespace erda
