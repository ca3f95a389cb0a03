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

// Hopscotch hash table of fixed 32-byte metadata entries living in NVM.
//
// Entry layout:
//
//   [0]      occupancy (0 empty, 1 live)
//   [1]      key length
//   [2..17]  key, zero padded
//   [18]     head id
//   [19]     object size hint, in 64-byte units (0 = unknown)
//   [20..23] hop info of the bucket this slot is home for (server side only)
//   [24..31] 8-byte atomic metadata word
//
// The table has `slots` home buckets followed by H-1 overflow slots so no
// neighborhood wraps. A client reads the whole H-entry neighborhood of a key's
// home bucket with one one-sided read.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>

#include "erda/bytes.hpp"
#include "erda/nvm.hpp"

namespace erda {

inline constexpr std::size_t kEntrySize = 32;
inline constexpr std::size_t kNeighborhood = 32;
inline constexpr std::size_t kMaxInlineKey = 16;
inline constexpr std::size_t kSizeHintUnit = 64;

inline constexpr std::size_t kEntryOccupancy = 0;
inline constexpr std::size_t kEntryKeyLen = 1;
inline constexpr std::size_t kEntryKey = 2;
inline constexpr std::size_t kEntryHead = 18;
inline constexpr std::size_t kEntryHint = 19;
inline constexpr std::size_t kEntryHop = 20;
inline constexpr std::size_t kEntryWord = 24;

/// FNV-1a 64 followed by the MurmurHash3 fmix64 finalizer. Client and server
/// both use it for table addressing and head selection.
std::uint64_t hash64(ByteView key);

class TableFull : public std::runtime_error {
public:
    TableFull() : std::runtime_error("hash table neighborhood full") {}
};

struct TableGeometry {
    std::uint64_t base = 0;
    std::uint32_t slots = 0;  ///< home buckets, power of two

    std::uint64_t physical_slots() const { return std::uint64_t{slots} + kNeighborhood - 1; }
    std::uint64_t bytes() const { return physical_slots() * kEntrySize; }
    std::uint64_t home_slot(ByteView key) const { return hash64(key) & (slots - 1); }
    std::uint64_t slot_addr(std::uint64_t slot) const { return base + slot * kEntrySize; }
};

/// Address of the home entry for `key`.
std::uint64_t entry_addr(ByteView key, std::uint64_t table_base, std::uint32_t table_slots);

struct HashEntry {
    std::uint64_t addr = 0;  ///< NVM address of the entry
    Bytes key;
    std::uint8_t head_id = 0;
    std::uint8_t size_hint = 0;
    std::uint64_t word = 0;
};

/// Parses one raw 32-byte entry; nullopt when unoccupied or malformed.
std::optional<HashEntry> parse_entry(ByteView raw, std::uint64_t addr);

/// Finds `key` in a neighborhood image read starting at `first_addr`.
std::optional<HashEntry> find_in_neighborhood(ByteView image, std::uint64_t first_addr, ByteView key);

inline std::uint8_t size_hint_for(std::size_t record_size) {
    const std::size_t units = (record_size + kSizeHintUnit - 1) / kSizeHintUnit;
    return units > 255 ? 0 : static_cast<std::uint8_t>(units);
}

class HopscotchIndex {
public:
    HopscotchIndex(NvmDevice& dev, TableGeometry geo);

    const TableGeometry& geometry() const { return geo_; }

    /// Creates a live entry. `paper_bytes` is charged to the entry store.
    std::uint64_t insert(ByteView key, std::uint8_t head_id, std::uint64_t word,
                         std::size_t paper_bytes = 0, std::uint8_t size_hint = 0);
    std::optional<HashEntry> lookup(ByteView key) const;
    /// Exactly one 8-byte atomic store; the entry must be live.
    void update_atomic(std::uint64_t entry, std::uint64_t word, std::size_t paper_bytes = 0);
    void set_size_hint(std::uint64_t entry, std::uint8_t hint);
    /// Zeroes the entry. Returns false when the key is absent.
    bool remove(ByteView key, std::size_t paper_bytes = 0);

    void for_each_live(const std::function<void(const HashEntry&)>& fn) const;
    std::size_t live_count() const;

    /// Restart-time cleanup after an interrupted displacement or removal:
    /// drops entries unreachable from their home bucket's hop info, duplicate
    /// copies, and hop bits that point at nothing. Returns the number of slots
    /// or bits changed.
    std::size_t recover();

private:
    std::uint32_t hop(std::uint64_t bucket) const;
    void set_hop(std::uint64_t bucket, std::uint32_t bits);
    std::optional<HashEntry> at(std::uint64_t slot) const;
    bool occupied(std::uint64_t slot) const;
    void write_entry(std::uint64_t slot, const HashEntry& e, std::size_t paper_bytes);
    void clear_entry(std::uint64_t slot, std::size_t paper_bytes);
    std::uint64_t slot_of(std::uint64_t addr) const;

    NvmDevice& dev_;
    TableGeometry geo_;
};

}  // namespace erda
