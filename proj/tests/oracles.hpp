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

// Reference implementations shared by the unit tests and the acceptance run.

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "erda/codec.hpp"
#include "erda/index.hpp"

namespace erda::oracle {

inline std::uint32_t reflect(std::uint32_t v, int bits) {
    std::uint32_t r = 0;
    for (int i = 0; i < bits; ++i)
        if (v & (1u << i)) r |= 1u << (bits - 1 - i);
    return r;
}

/// Bit-at-a-time CRC-32: MSB-first long division by the unreflected
/// polynomial, with input and output bit reversal.
inline std::uint32_t crc32(ByteView data) {
    std::uint32_t c = 0xFFFFFFFF;
    for (auto b : data) {
        c ^= reflect(b, 8) << 24;
        for (int k = 0; k < 8; ++k) c = (c & 0x80000000u) ? (c << 1) ^ 0x04C11DB7u : c << 1;
    }
    return reflect(c, 32) ^ 0xFFFFFFFF;
}

inline Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
    Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
}

/// Runs `ops` random insert / remove / atomic-update operations against both
/// the index and a std::map. Returns an empty string when they always agree
/// and every atomic update was exactly one 8-byte store.
inline std::string index_vs_map(std::uint64_t seed, int ops) {
    const TableGeometry geo{64, 1024};
    NvmDevice dev(geo.base + geo.bytes() + 64);
    HopscotchIndex idx(dev, geo);
    std::map<Bytes, std::uint64_t> model;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < ops; ++i) {
        const Bytes k = to_bytes("key-" + std::to_string(rng() % 900));
        const auto op = rng() % 4;
        auto hit = model.find(k);
        const std::string at = "op " + std::to_string(i) + ": ";
        if (op == 0 && hit == model.end()) {
            const std::uint64_t w = rng() & ~1ull;
            idx.insert(k, 0, w);
            model[k] = w;
        } else if (op == 1) {
            if (idx.remove(k) != (hit != model.end())) return at + "remove disagrees";
            if (hit != model.end()) model.erase(hit);
        } else if (op == 2 && hit != model.end()) {
            dev.flush();
            auto e = idx.lookup(k);
            if (!e) return at + "live key not found";
            const std::uint64_t w = rng() & ~1ull;
            dev.reset_counters();
            idx.update_atomic(e->addr, w);
            dev.flush();
            if (dev.store_count() != 1 || dev.atomic_store_count() != 1 || dev.write_bytes_actual() != 8)
                return at + "atomic update was not one 8-byte store";
            hit->second = w;
        }
        dev.flush();
        auto e = idx.lookup(k);
        if (e.has_value() != model.contains(k)) return at + "lookup presence disagrees";
        if (e && e->word != model[k]) return at + "word disagrees";
    }
    if (idx.live_count() != model.size()) return "live count disagrees";
    std::map<Bytes, std::uint64_t> seen;
    idx.for_each_live([&](const HashEntry& e) { seen[e.key] = e.word; });
    if (seen != model) return "table contents disagree";
    return {};
}

}  // namespace erda::oracle
