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

#include "erda/sim.hpp"

#include <stdexcept>

namespace erda {

void Scheduler::at(SimTime t, Action a) {
    if (t < now_) t = now_;
    queue_.push(Event{t, seq_++, std::move(a)});
}

bool Scheduler::step() {
    if (queue_.empty()) return false;
    // priority_queue::top is const; move out through a copy of the handle.
    Event ev = std::move(const_cast<Event&>(queue_.top()));
    queue_.pop();
    now_ = ev.time;
    ++steps_;
    ev.action();
    return true;
}

void Scheduler::run() {
    while (step()) {
    }
}

std::uint64_t Scheduler::run_while(const std::function<bool()>& keep_going) {
    std::uint64_t n = 0;
    while (keep_going() && step()) ++n;
    return n;
}

std::uint64_t Scheduler::run_steps(std::uint64_t n) {
    std::uint64_t done = 0;
    while (done < n && step()) ++done;
    return done;
}

std::uint64_t Scheduler::jitter(std::uint64_t bound) {
    if (bound == 0) return 0;
    return rng_() % (bound + 1);
}

void CpuQueue::submit(Work w) {
    queue_.push(std::move(w));
    kick();
}

void CpuQueue::kick() {
    if (running_ || queue_.empty()) return;
    running_ = true;
    auto alive = alive_;
    sched_.after(0, [this, alive] {
        if (!alive()) return;
        Work w = std::move(queue_.front());
        queue_.pop();
        Context ctx;
        w(ctx);
        busy_time_ += ctx.cost_;
        sched_.after(ctx.cost_, [this, alive, tail = std::move(ctx.tail_)] {
            if (!alive()) return;
            for (auto& fn : tail) fn();
            running_ = false;
            kick();
        });
    });
}

}  // namespace erda
