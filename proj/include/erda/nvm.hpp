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

// Simulated byte-addressable persistent memory.
//
// Stores land in a visible image immediately and are queued as in-flight until
// flush() drains them into the durable image. A crash keeps the durable image
// plus a model-selected part of the in-flight stores: aligned 8-byte atomic
// stores survive whole or not at all, bulk stores survive per persistence unit.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

#include "erda/bytes.hpp"

namespace erda {

class DeviceFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum class CrashMode { prefix, arbitrary_subset };

struct CrashModel {
    CrashMode mode = CrashMode::arbitrary_subset;
    std::size_t unit = 64;
    std::uint64_t seed = 0;
    /// prefix mode: number of bytes of the in-flight stream (stores concatenated
    /// in issue order) that persist. Drawn from `seed` when absent.
    std::optional<std::size_t> cut;
    /// arbitrary-subset mode: explicit keep/drop decision per persistence unit of
    /// the in-flight stream. Drawn from `seed` when absent.
    std::optional<std::vector<bool>> units;

    static CrashModel prefix_cut(std::size_t bytes) {
        CrashModel m;
        m.mode = CrashMode::prefix;
        m.cut = bytes;
        return m;
    }
    static CrashModel subset(std::vector<bool> keep, std::size_t unit = 64) {
        CrashModel m;
        m.mode = CrashMode::arbitrary_subset;
        m.unit = unit;
        m.units = std::move(keep);
        return m;
    }
    static CrashModel seeded(std::uint64_t seed, std::size_t unit = 64) {
        CrashModel m;
        m.unit = unit;
        m.seed = seed;
        return m;
    }
    /// Nothing in flight survives.
    static CrashModel drop_all() { return prefix_cut(0); }
};

/// Units a store of `len` bytes splits into (atomic stores are one unit).
inline std::size_t persistence_units(std::size_t len, bool atomic8, std::size_t unit) {
    if (atomic8) return 1;
    return (len + unit - 1) / unit;
}

class NvmDevice {
public:
    static constexpr std::uint64_t kDefaultExtraWriteLatencyNs = 150;

    explicit NvmDevice(std::size_t capacity);

    std::size_t capacity() const { return visible_.size(); }

    /// Queues a store. `paper_bytes` is what the NVM-write accounting charges
    /// when the store drains (0 for plumbing writes).
    void store(std::uint64_t addr, ByteView data, bool atomic8 = false, std::size_t paper_bytes = 0);
    void store_atomic(std::uint64_t addr, std::uint64_t word, std::size_t paper_bytes = 0);

    Bytes read(std::uint64_t addr, std::size_t len) const;
    std::uint64_t read_u64(std::uint64_t addr) const;
    ByteView view(std::uint64_t addr, std::size_t len) const;

    /// Drains every in-flight store into the durable image.
    void flush();

    void account(std::size_t paper_bytes) { write_bytes_paper_ += paper_bytes; }

    /// Applies a crash in place: durable image plus the model-selected part of
    /// the in-flight stores becomes the only content.
    void crash(const CrashModel& model);
    NvmDevice crashed(const CrashModel& model) const;

    bool has_inflight() const { return !inflight_.empty(); }
    std::size_t inflight_count() const { return inflight_.size(); }
    std::size_t inflight_bytes() const;
    std::size_t inflight_units(std::size_t unit) const;

    ByteView durable_image() const { return durable_; }

    std::uint64_t write_bytes_paper() const { return write_bytes_paper_; }
    std::uint64_t write_bytes_actual() const { return write_bytes_actual_; }
    std::uint64_t store_count() const { return store_count_; }
    std::uint64_t atomic_store_count() const { return atomic_store_count_; }
    void reset_counters();

    std::uint64_t extra_write_latency_ns() const { return extra_write_latency_ns_; }
    void set_extra_write_latency_ns(std::uint64_t ns) { extra_write_latency_ns_ = ns; }

    /// Raw durable image behind a 16-byte header: "ERDANVM1" then the capacity
    /// as 8-byte little-endian.
    void dump(const std::filesystem::path& path) const;
    static NvmDevice load(const std::filesystem::path& path);
    Bytes serialize() const;
    static NvmDevice deserialize(ByteView image);

private:
    struct Pending {
        std::uint64_t addr;
        Bytes data;
        bool atomic8;
        std::size_t paper_bytes;
    };

    void check_range(std::uint64_t addr, std::size_t len) const;

    Bytes durable_;
    Bytes visible_;
    std::vector<Pending> inflight_;
    std::uint64_t write_bytes_paper_ = 0;
    std::uint64_t write_bytes_actual_ = 0;
    std::uint64_t store_count_ = 0;
    std::uint64_t atomic_store_count_ = 0;
    std::uint64_t extra_write_latency_ns_ = kDefaultExtraWriteLatencyNs;
};

}  // namespace erda
