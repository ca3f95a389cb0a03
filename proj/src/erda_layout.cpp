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

#include <bit>
#include <cstring>

#include "erda/cleaner.hpp"
#include "erda/erda.hpp"

namespace erda {

namespace {

constexpr char kSuperMagic[8] = {'E', 'R', 'D', 'A', 'S', 'B', '0', '1'};

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

}  // namespace

std::string_view to_string(GetStatus s) {
    switch (s) {
        case GetStatus::ok: return "ok";
        case GetStatus::not_found: return "not_found";
        case GetStatus::recovered: return "recovered";
        case GetStatus::data_loss: return "data_loss";
        case GetStatus::disconnected: return "disconnected";
    }
    return "?";
}

std::string_view to_string(WriteStatus s) {
    switch (s) {
        case WriteStatus::ok: return "ok";
        case WriteStatus::not_found: return "not_found";
        case WriteStatus::full: return "full";
        case WriteStatus::disconnected: return "disconnected";
        case WriteStatus::protocol_error: return "protocol_error";
    }
    return "?";
}

std::string_view to_string(HeadPhase p) {
    switch (p) {
        case HeadPhase::normal: return "normal";
        case HeadPhase::merging: return "merging";
        case HeadPhase::replicating: return "replicating";
        case HeadPhase::finishing: return "finishing";
    }
    return "?";
}

void ErdaConfig::validate() const {
    if (table_slots == 0 || !std::has_single_bit(table_slots))
        throw ContractViolation("table_slots must be a power of two");
    if (heads == 0 || heads > 255) throw ContractViolation("heads must be 1..255");
    if (segment_size == 0 || region_size % segment_size != 0)
        throw ContractViolation("segment_size must divide region_size");
    if (max_object_size < kObjectHeaderSize + 1 || max_object_size > segment_size)
        throw ContractViolation("max_object_size must fit in a segment");
    if (max_object_size > 255 * kSizeHintUnit) throw ContractViolation("max_object_size exceeds size hint range");
    if (max_chain == 0 || max_chain > kMaxChainRegions) throw ContractViolation("max_chain must be 1..100");
    if (std::uint64_t{max_chain} * region_size > kChainBit) throw ContractViolation("chain exceeds 2^30 bytes");
    if (region_count < heads || region_count > 0xFFFF) throw ContractViolation("region_count must cover every head");
    if (!(clean_threshold > 0.0 && clean_threshold <= 1.0)) throw ContractViolation("clean_threshold must be in (0,1]");
    if (clean_batch == 0) throw ContractViolation("clean_batch must be positive");
}

ErdaLayout::ErdaLayout(ErdaConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    table_base_ = align_up(kSuperblockSize + cfg_.heads * kHeadRecordSize, 4096);
    region_base_ = align_up(table_base_ + table().bytes(), 4096);
}

void ErdaLayout::write_superblock(NvmDevice& dev) const {
    Bytes sb(kSuperMagic, kSuperMagic + 8);
    append_le<std::uint64_t>(sb, cfg_.table_slots);
    append_le<std::uint64_t>(sb, cfg_.heads);
    append_le<std::uint64_t>(sb, cfg_.region_size);
    append_le<std::uint64_t>(sb, cfg_.segment_size);
    append_le<std::uint64_t>(sb, cfg_.region_count);
    append_le<std::uint64_t>(sb, cfg_.max_chain);
    append_le<std::uint64_t>(sb, cfg_.max_object_size);
    append_le<std::uint64_t>(sb, std::bit_cast<std::uint64_t>(cfg_.clean_threshold));
    append_le<std::uint64_t>(sb, cfg_.auto_clean ? 1 : 0);
    append_le<std::uint64_t>(sb, cfg_.clean_batch);
    append_le<std::uint32_t>(sb, crc32(sb));
    dev.store(0, sb);
    dev.flush();
}

ErdaConfig ErdaLayout::read_superblock(const NvmDevice& dev) {
    if (dev.capacity() < kSuperblockSize) throw DeviceFault("device too small for a superblock");
    constexpr std::size_t kLen = 8 + 10 * 8;
    ByteView sb = dev.durable_image().subspan(0, kLen + 4);
    if (std::memcmp(sb.data(), kSuperMagic, 8) != 0) throw DeviceFault("superblock magic mismatch");
    if (crc32(sb.first(kLen)) != load_le<std::uint32_t>(sb.data() + kLen))
        throw DeviceFault("superblock checksum mismatch");
    Reader in(sb.subspan(8));
    ErdaConfig c;
    c.table_slots = static_cast<std::uint32_t>(in.le<std::uint64_t>());
    c.heads = static_cast<std::uint32_t>(in.le<std::uint64_t>());
    c.region_size = in.le<std::uint64_t>();
    c.segment_size = in.le<std::uint64_t>();
    c.region_count = static_cast<std::uint32_t>(in.le<std::uint64_t>());
    c.max_chain = static_cast<std::uint32_t>(in.le<std::uint64_t>());
    c.max_object_size = static_cast<std::uint32_t>(in.le<std::uint64_t>());
    c.clean_threshold = std::bit_cast<double>(in.le<std::uint64_t>());
    c.auto_clean = in.le<std::uint64_t>() != 0;
    c.clean_batch = static_cast<std::uint32_t>(in.le<std::uint64_t>());
    try {
        ErdaLayout check(c);
        if (check.capacity() > dev.capacity()) throw DeviceFault("device smaller than recorded geometry");
    } catch (const ContractViolation& e) {
        throw DeviceFault(std::string("superblock geometry invalid: ") + e.what());
    }
    return c;
}

std::uint32_t head_of(ByteView key, std::uint32_t heads) {
    return static_cast<std::uint32_t>((hash64(key) >> 32) % heads);
}

void encode_head_array(Bytes& out, const std::vector<HeadInfo>& heads) {
    out.push_back(static_cast<std::uint8_t>(heads.size()));
    for (const auto& h : heads) {
        out.push_back(static_cast<std::uint8_t>(h.phase));
        out.push_back(h.active);
        for (const auto& chain : h.chains) {
            out.push_back(static_cast<std::uint8_t>(chain.size()));
            for (const auto& r : chain) {
                append_le<std::uint64_t>(out, r.base);
                append_le<std::uint32_t>(out, r.rkey);
            }
        }
    }
}

std::vector<HeadInfo> decode_head_array(Reader& in) {
    std::vector<HeadInfo> heads(in.le<std::uint8_t>());
    for (auto& h : heads) {
        const auto phase = in.le<std::uint8_t>();
        if (phase > 3) throw std::out_of_range("bad head phase");
        h.phase = static_cast<HeadPhase>(phase);
        h.active = in.le<std::uint8_t>();
        for (auto& chain : h.chains) {
            chain.resize(in.le<std::uint8_t>());
            for (auto& r : chain) {
                r.base = in.le<std::uint64_t>();
                r.rkey = in.le<std::uint32_t>();
            }
        }
    }
    return heads;
}

std::vector<ScannedRecord> scan_records(ByteView bytes, std::uint64_t base_pos) {
    std::vector<ScannedRecord> out;
    std::size_t pos = 0;
    while (pos + kObjectHeaderSize <= bytes.size()) {
        auto view = bytes.subspan(pos);
        if (auto len = framed_length(view); len && verify_object(view.first(*len))) {
            out.push_back({base_pos + pos, *len});
            pos += *len;
        } else {
            ++pos;
        }
    }
    return out;
}

}  // namespace erda
