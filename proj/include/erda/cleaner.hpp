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

// Two-phase log cleaning of one head, run as a sequence of server CPU work
// items interleaved with request handling.
//
// Region 1 is the head's active chain, Region 2 the other chain. While a head
// is being cleaned its metadata words are never flipped: the tag-selected slot
// keeps the Region 1 offset and the other slot collects the Region 2 copy.

#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "erda/erda.hpp"

namespace erda {

class Cleaner {
public:
    Cleaner(ErdaServer& server, std::uint32_t head);
    ~Cleaner();
    Cleaner(const Cleaner&) = delete;
    Cleaner& operator=(const Cleaner&) = delete;

    /// Allocates Region 2, marks the head as merging and notifies clients.
    /// False when no region is free.
    bool start();
    bool done() const { return stage_ == Stage::done; }
    std::uint32_t head() const { return head_; }
    std::uint32_t target_chain() const { return target_; }
    CleanStats& stats() { return stats_; }

    /// Flips every entry of `h` to its Region 2 copy and releases the old
    /// chain. Expects the head word to already name the new chain; safe to run
    /// again after a crash.
    static void complete(ErdaServer& s, std::uint32_t h, RecoveryReport* rep);
    /// Recovery path for a crash during merging or replication: drops Region 2,
    /// copying back any client-written records it holds.
    static void abort(ErdaServer& s, std::uint32_t h, RecoveryReport& rep);

private:
    enum class Stage { idle, prepass, merge_scan, merge, replicate_plan, replicate, finish, done };
    struct Planned {
        Bytes key;
        std::uint32_t from;
        std::uint32_t to;
    };

    void schedule(SimTime delay);
    void step(CpuQueue::Context& ctx);
    void prepass(CpuQueue::Context& ctx);
    void merge_scan(CpuQueue::Context& ctx);
    void merge(CpuQueue::Context& ctx);
    void replicate_plan(CpuQueue::Context& ctx);
    void replicate(CpuQueue::Context& ctx);
    void finish(CpuQueue::Context& ctx);
    /// Copies the record at `from` to Region 2 offset `to`.
    void copy(std::uint32_t from, std::uint32_t to, const ObjectRecord& rec, std::size_t size);

    ErdaServer& s_;
    std::shared_ptr<bool> life_ = std::make_shared<bool>(true);
    std::uint32_t head_;
    std::uint32_t active_ = 0;
    std::uint32_t target_ = 1;
    Stage stage_ = Stage::idle;
    SimTime delay_ = 0;  ///< wait before the next step
    std::uint64_t snapshot_ = 0;
    std::vector<std::uint32_t> merge_offsets_;
    std::size_t merge_next_ = 0;
    std::vector<Planned> plan_;
    std::size_t plan_next_ = 0;
    CleanStats stats_;
};

/// Valid records of a byte range, found by sequential parsing with byte-wise
/// resynchronisation after an invalid record. `pos` values are relative to
/// `base_pos`.
struct ScannedRecord {
    std::uint64_t pos;
    std::size_t size;
};
std::vector<ScannedRecord> scan_records(ByteView bytes, std::uint64_t base_pos);

}  // namespace erda
