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

#include <map>
#include <random>

#include <gtest/gtest.h>

#include "erda/codec.hpp"
#include "erda/index.hpp"
#include "oracles.hpp"

namespace erda {
namespace {

Bytes key_of(std::uint64_t i) { return to_bytes("key-" + std::to_string(i)); }

struct Table {
    TableGeometry geo;
    NvmDevice dev;
    HopscotchIndex idx;

    explicit Table(std::uint32_t slots, std::uint64_t base = 64)
        : geo{base, slots}, dev(base + geo.bytes() + 64), idx(dev, geo) {}

    /// The client path: one read of the home neighborhood.
    std::optional<HashEntry> client_lookup(ByteView key) {
        const auto home = geo.home_slot(key);
        const auto first = geo.slot_addr(home);
        return find_in_neighborhood(dev.view(first, kNeighborhood * kEntrySize), first, key);
    }
};

TEST(Index, RandomOpsMatchModelMap) {
    Table t(1024);
    std::map<Bytes, std::uint64_t> model;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 10000; ++i) {
        const Bytes k = key_of(rng() % 900);
        const auto op = rng() % 4;
        auto hit = model.find(k);
        if (op == 0) {
            const std::uint64_t w = rng() & ~1ull;
            if (hit == model.end()) {
                t.idx.insert(k, static_cast<std::uint8_t>(rng() % 4), w);
                model[k] = w;
            } else {
                EXPECT_THROW(t.idx.insert(k, 0, w), ContractViolation);
            }
        } else if (op == 1) {
            ASSERT_EQ(t.idx.remove(k), hit != model.end());
            if (hit != model.end()) model.erase(hit);
        } else if (op == 2 && hit != model.end()) {
            const std::uint64_t w = rng() & ~1ull;
            auto e = t.idx.lookup(k);
            ASSERT_TRUE(e);
            t.idx.update_atomic(e->addr, w);
            hit->second = w;
        }
        t.dev.flush();
        auto e = t.idx.lookup(k);
        ASSERT_EQ(e.has_value(), model.contains(k)) << i;
        if (e) {
            ASSERT_EQ(e->word, model[k]);
            ASSERT_EQ(e->key, k);
            const auto c = t.client_lookup(k);
            ASSERT_TRUE(c);
            ASSERT_EQ(c->addr, e->addr);
            ASSERT_EQ(c->word, e->word);
            const auto slot = (e->addr - t.geo.base) / kEntrySize;
            const auto home = t.geo.home_slot(k);
            ASSERT_TRUE(slot >= home && slot - home < kNeighborhood);
        }
    }
    EXPECT_EQ(t.idx.live_count(), model.size());
    std::map<Bytes, std::uint64_t> seen;
    t.idx.for_each_live([&](const HashEntry& e) { seen[e.key] = e.word; });
    EXPECT_EQ(seen, model);
    EXPECT_EQ(t.idx.recover(), 0u);
}

TEST(Index, SharedOracleAgrees) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) EXPECT_EQ(oracle::index_vs_map(seed, 10000), "");
}

TEST(Index, AtomicUpdateIsOneEightByteStore) {
    Table t(64);
    const auto addr = t.idx.insert(to_bytes("k"), 1, pack_atomic(false, 0, 0));
    t.dev.flush();
    t.dev.reset_counters();
    t.idx.update_atomic(addr, 0xABCDEF00ull, 8);
    EXPECT_EQ(t.dev.inflight_count(), 1u);
    EXPECT_EQ(t.dev.inflight_bytes(), 8u);
    t.dev.flush();
    EXPECT_EQ(t.dev.store_count(), 1u);
    EXPECT_EQ(t.dev.atomic_store_count(), 1u);
    EXPECT_EQ(t.dev.write_bytes_actual(), 8u);
    EXPECT_EQ(t.dev.read_u64(addr + kEntryWord), 0xABCDEF00ull);
    EXPECT_THROW(t.idx.update_atomic(t.geo.slot_addr(t.geo.physical_slots() - 1), 1), ContractViolation);
}

TEST(Index, DenseTableDisplaces) {
    Table t(64);
    std::vector<Bytes> keys;
    for (std::uint64_t i = 0; keys.size() < 80; ++i) {
        try {
            t.idx.insert(key_of(i), 0, i << 1);
            keys.push_back(key_of(i));
        } catch (const TableFull&) {
            break;
        }
        t.dev.flush();
    }
    EXPECT_GE(keys.size(), 60u);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        auto e = t.client_lookup(keys[i]);
        ASSERT_TRUE(e) << i;
    }
    EXPECT_EQ(t.idx.recover(), 0u);
}

TEST(Index, EntryLayout) {
    Table t(64);
    const auto addr = t.idx.insert(to_bytes("abc"), 3, 0x1122334455667788ull, 0, 9);
    t.dev.flush();
    auto raw = t.dev.read(addr, kEntrySize);
    EXPECT_EQ(raw[kEntryOccupancy], 1);
    EXPECT_EQ(raw[kEntryKeyLen], 3);
    EXPECT_EQ(to_string(ByteView(raw).subspan(kEntryKey, 3)), "abc");
    EXPECT_EQ(raw[kEntryHead], 3);
    EXPECT_EQ(raw[kEntryHint], 9);
    EXPECT_EQ(load_le<std::uint64_t>(raw.data() + kEntryWord), 0x1122334455667788ull);
    auto e = parse_entry(raw, addr);
    ASSERT_TRUE(e);
    EXPECT_EQ(e->size_hint, 9);
    EXPECT_EQ(size_hint_for(64), 1);
    EXPECT_EQ(size_hint_for(65), 2);
    EXPECT_EQ(size_hint_for(255 * 64 + 1), 0);
    EXPECT_THROW(t.idx.insert(Bytes(17, 'x'), 0, 0), ContractViolation);
}

TEST(Index, RecoverDropsOrphanCopy) {
    Table t(64);
    const auto addr = t.idx.insert(to_bytes("orphan"), 0, 42 << 1);
    t.dev.flush();
    // A displacement copy that was written but never published.
    const auto home = t.geo.home_slot(to_bytes("orphan"));
    std::uint64_t free = home;
    while (t.dev.read(t.geo.slot_addr(free), 1)[0] != 0) ++free;
    auto raw = t.dev.read(addr, kEntrySize);
    store_le<std::uint32_t>(raw.data() + kEntryHop, 0);
    t.dev.store(t.geo.slot_addr(free), raw);
    t.dev.flush();
    EXPECT_EQ(t.idx.live_count(), 2u);
    EXPECT_EQ(t.idx.recover(), 1u);
    EXPECT_EQ(t.idx.live_count(), 1u);
    EXPECT_EQ(t.idx.lookup(to_bytes("orphan"))->addr, addr);
    EXPECT_EQ(t.idx.recover(), 0u);
}

TEST(Index, RecoverDropsPublishedDuplicateAndDanglingBits) {
    Table t(64);
    const Bytes k = to_bytes("dup");
    const auto addr = t.idx.insert(k, 0, 7 << 1);
    t.dev.flush();
    const auto home = t.geo.home_slot(k);
    const auto slot = (addr - t.geo.base) / kEntrySize;
    std::uint64_t free = slot + 1;
    while (t.dev.read(t.geo.slot_addr(free), 1)[0] != 0) ++free;
    ASSERT_LT(free - home, kNeighborhood);
    auto raw = t.dev.read(addr, kEntrySize);
    store_le<std::uint32_t>(raw.data() + kEntryHop, 0);
    t.dev.store(t.geo.slot_addr(free), raw);
    const auto hop_addr = t.geo.slot_addr(home) + kEntryHop;
    const auto bits = load_le<std::uint32_t>(t.dev.read(hop_addr, 4).data());
    Bytes nb(4);
    // Both copies published, plus a bit naming an empty slot.
    std::uint64_t empty = free + 1;
    while (t.dev.read(t.geo.slot_addr(empty), 1)[0] != 0) ++empty;
    store_le<std::uint32_t>(nb.data(), bits | (1u << (free - home)) | (1u << (empty - home)));
    t.dev.store(hop_addr, nb);
    t.dev.flush();
    EXPECT_GE(t.idx.recover(), 2u);
    EXPECT_EQ(t.idx.live_count(), 1u);
    auto e = t.idx.lookup(k);
    ASSERT_TRUE(e);
    EXPECT_EQ(e->word, 7u << 1);
    EXPECT_EQ(t.idx.recover(), 0u);
}

TEST(Index, CrashDuringInsertNeverLosesCommittedKeys) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        Table t(64);
        std::vector<Bytes> committed;
        const int n = 20 + static_cast<int>(rng() % 40);
        for (int i = 0; i < n; ++i) {
            t.idx.insert(key_of(trial * 1000 + i), 0, 2);
            t.dev.flush();
            committed.push_back(key_of(trial * 1000 + i));
        }
        const Bytes extra = key_of(trial * 1000 + 999);
        try {
            t.idx.insert(extra, 0, 4);
        } catch (const TableFull&) {
            continue;
        }
        t.dev.crash(CrashModel::seeded(rng(), 4));
        HopscotchIndex again(t.dev, t.geo);
        again.recover();
        for (const auto& k : committed) ASSERT_TRUE(again.lookup(k)) << trial;
        std::map<Bytes, int> count;
        again.for_each_live([&](const HashEntry& e) { count[e.key]++; });
        for (const auto& [k, c] : count) ASSERT_EQ(c, 1);
        ASSERT_EQ(again.recover(), 0u);
    }
}

}  // namespace
}  // namespace erda
