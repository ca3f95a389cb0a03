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

#include "erda/index.hpp"

#include <algorithm>
#include <array>
#include <map>

namespace erda {

std::uint64_t hash64(ByteView key) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto b : key) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ull;
    h ^= h >> 33;
    return h;
}

std::uint64_t entry_addr(ByteView key, std::uint64_t table_base, std::uint32_t table_slots) {
    return table_base + kEntrySize * (hash64(key) & (table_slots - 1));
}

std::optional<HashEntry> parse_entry(ByteView raw, std::uint64_t addr) {
    if (raw.size() < kEntrySize || raw[kEntryOccupancy] != 1) return std::nullopt;
    const std::size_t klen = raw[kEntryKeyLen];
    if (klen == 0 || klen > kMaxInlineKey) return std::nullopt;
    HashEntry e;
    e.addr = addr;
    e.key.assign(raw.begin() + kEntryKey, raw.begin() + kEntryKey + static_cast<std::ptrdiff_t>(klen));
    e.head_id = raw[kEntryHead];
    e.size_hint = raw[kEntryHint];
    e.word = load_le<std::uint64_t>(raw.data() + kEntryWord);
    return e;
}

std::optional<HashEntry> find_in_neighborhood(ByteView image, std::uint64_t first_addr, ByteView key) {
    for (std::size_t off = 0; off + kEntrySize <= image.size(); off += kEntrySize) {
        auto e = parse_entry(image.subspan(off, kEntrySize), first_addr + off);
        if (e && std::equal(e->key.begin(), e->key.end(), key.begin(), key.end())) return e;
    }
    return std::nullopt;
}

HopscotchIndex::HopscotchIndex(NvmDevice& dev, TableGeometry geo) : dev_(dev), geo_(geo) {
    if (geo_.slots == 0 || (geo_.slots & (geo_.slots - 1)) != 0)
        throw ContractViolation("table slot count must be a power of two");
    if (geo_.base % 8 != 0) throw ContractViolation("table base must be 8-byte aligned");
    if (geo_.base + geo_.bytes() > dev_.capacity()) throw ContractViolation("table exceeds device");
}

std::uint64_t HopscotchIndex::slot_of(std::uint64_t addr) const {
    if (addr < geo_.base || (addr - geo_.base) % kEntrySize != 0 ||
        (addr - geo_.base) / kEntrySize >= geo_.physical_slots())
        throw ContractViolation("not an entry address");
    return (addr - geo_.base) / kEntrySize;
}

std::uint32_t HopscotchIndex::hop(std::uint64_t bucket) const {
    return load_le<std::uint32_t>(dev_.view(geo_.slot_addr(bucket) + kEntryHop, 4).data());
}

void HopscotchIndex::set_hop(std::uint64_t bucket, std::uint32_t bits) {
    std::uint8_t buf[4];
    store_le(buf, bits);
    dev_.store(geo_.slot_addr(bucket) + kEntryHop, ByteView(buf, 4));
}

bool HopscotchIndex::occupied(std::uint64_t slot) const {
    return dev_.view(geo_.slot_addr(slot), 1)[0] != 0;
}

std::optional<HashEntry> HopscotchIndex::at(std::uint64_t slot) const {
    return parse_entry(dev_.view(geo_.slot_addr(slot), kEntrySize), geo_.slot_addr(slot));
}

void HopscotchIndex::write_entry(std::uint64_t slot, const HashEntry& e, std::size_t paper_bytes) {
    // The hop info bytes of a slot belong to the bucket, not to the entry in it.
    std::array<std::uint8_t, kEntrySize> raw{};
    raw[kEntryOccupancy] = 1;
    raw[kEntryKeyLen] = static_cast<std::uint8_t>(e.key.size());
    std::copy(e.key.begin(), e.key.end(), raw.begin() + kEntryKey);
    raw[kEntryHead] = e.head_id;
    raw[kEntryHint] = e.size_hint;
    store_le<std::uint32_t>(raw.data() + kEntryHop, hop(slot));
    store_le<std::uint64_t>(raw.data() + kEntryWord, e.word);
    dev_.store(geo_.slot_addr(slot), raw, false, paper_bytes);
}

void HopscotchIndex::clear_entry(std::uint64_t slot, std::size_t paper_bytes) {
    std::array<std::uint8_t, kEntrySize> raw{};
    store_le<std::uint32_t>(raw.data() + kEntryHop, hop(slot));
    dev_.store(geo_.slot_addr(slot), raw, false, paper_bytes);
}

std::uint64_t HopscotchIndex::insert(ByteView key, std::uint8_t head_id, std::uint64_t word,
                                     std::size_t paper_bytes, std::uint8_t size_hint) {
    if (key.empty() || key.size() > kMaxInlineKey) throw ContractViolation("key must be 1..16 bytes");
    if (lookup(key)) throw ContractViolation("key already present");

    const std::uint64_t home = geo_.home_slot(key);
    const std::uint64_t limit = geo_.physical_slots();

    std::uint64_t free = home;
    while (free < limit && occupied(free)) ++free;
    if (free == limit) throw TableFull();

    // Hop the free slot back toward home until it lies inside the neighborhood.
    while (free - home >= kNeighborhood) {
        bool moved = false;
        for (std::uint64_t bucket = free - (kNeighborhood - 1); bucket < free && !moved; ++bucket) {
            const std::uint32_t bits = hop(bucket);
            for (std::uint64_t d = 0; d < free - bucket; ++d) {
                if (!(bits & (1u << d))) continue;
                const std::uint64_t from = bucket + d;
                auto e = at(from);
                if (!e) continue;
                // copy, publish, then retire the source: a crash leaves at most a
                // duplicate that recover() removes.
                write_entry(free, *e, 0);
                dev_.flush();
                set_hop(bucket, bits | (1u << (free - bucket)));
                dev_.flush();
                set_hop(bucket, (bits | (1u << (free - bucket))) & ~(1u << d));
                dev_.flush();
                clear_entry(from, 0);
                dev_.flush();
                free = from;
                moved = true;
                break;
            }
        }
        if (!moved) throw TableFull();
    }

    HashEntry e;
    e.key.assign(key.begin(), key.end());
    e.head_id = head_id;
    e.size_hint = size_hint;
    e.word = word;
    write_entry(free, e, paper_bytes);
    dev_.flush();
    set_hop(home, hop(home) | (1u << (free - home)));
    return geo_.slot_addr(free);
}

std::optional<HashEntry> HopscotchIndex::lookup(ByteView key) const {
    if (key.empty() || key.size() > kMaxInlineKey) return std::nullopt;
    const std::uint64_t home = geo_.home_slot(key);
    const std::uint32_t bits = hop(home);
    for (std::uint64_t d = 0; d < kNeighborhood; ++d) {
        if (!(bits & (1u << d))) continue;
        auto e = at(home + d);
        if (e && std::equal(e->key.begin(), e->key.end(), key.begin(), key.end())) return e;
    }
    return std::nullopt;
}

void HopscotchIndex::update_atomic(std::uint64_t entry, std::uint64_t word, std::size_t paper_bytes) {
    if (!occupied(slot_of(entry))) throw ContractViolation("update of a dead entry");
    dev_.store_atomic(entry + kEntryWord, word, paper_bytes);
}

void HopscotchIndex::set_size_hint(std::uint64_t entry, std::uint8_t hint) {
    if (!occupied(slot_of(entry))) throw ContractViolation("hint update of a dead entry");
    dev_.store(entry + kEntryHint, ByteView(&hint, 1));
}

bool HopscotchIndex::remove(ByteView key, std::size_t paper_bytes) {
    auto e = lookup(key);
    if (!e) return false;
    const std::uint64_t home = geo_.home_slot(key);
    const std::uint64_t slot = slot_of(e->addr);
    set_hop(home, hop(home) & ~(1u << (slot - home)));
    dev_.flush();
    clear_entry(slot, paper_bytes);
    return true;
}

void HopscotchIndex::for_each_live(const std::function<void(const HashEntry&)>& fn) const {
    for (std::uint64_t s = 0; s < geo_.physical_slots(); ++s) {
        if (auto e = at(s)) fn(*e);
    }
}

std::size_t HopscotchIndex::live_count() const {
    std::size_t n = 0;
    for_each_live([&](const HashEntry&) { ++n; });
    return n;
}

std::size_t HopscotchIndex::recover() {
    std::size_t changes = 0;
    std::map<Bytes, std::uint64_t> seen;
    for (std::uint64_t s = 0; s < geo_.physical_slots(); ++s) {
        if (!occupied(s)) continue;
        auto e = at(s);
        bool keep = false;
        if (e) {
            const std::uint64_t home = geo_.home_slot(e->key);
            keep = s >= home && s - home < kNeighborhood && (hop(home) & (1u << (s - home))) &&
                   !seen.contains(e->key);
        }
        if (keep) {
            seen.emplace(e->key, s);
            continue;
        }
        if (e) {
            const std::uint64_t home = geo_.home_slot(e->key);
            if (s >= home && s - home < kNeighborhood && (hop(home) & (1u << (s - home)))) {
                set_hop(home, hop(home) & ~(1u << (s - home)));
                dev_.flush();
            }
        }
        clear_entry(s, 0);
        ++changes;
    }
    // Bits that reference empty slots or slots homed elsewhere.
    for (std::uint64_t b = 0; b < geo_.slots; ++b) {
        std::uint32_t bits = hop(b);
        std::uint32_t fixed = bits;
        for (std::uint64_t d = 0; d < kNeighborhood; ++d) {
            if (!(bits & (1u << d))) continue;
            auto e = at(b + d);
            if (!e || geo_.home_slot(e->key) != b) fixed &= ~(1u << d);
        }
        if (fixed != bits) {
            set_hop(b, fixed);
            ++changes;
        }
    }
    dev_.flush();
    return changes;
}

}  // namespace erda
