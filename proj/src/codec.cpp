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

#include "erda/codec.hpp"

#include <array>

namespace erda {

namespace {

constexpr std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
        t[i] = c;
    }
    return t;
}

constexpr auto kCrcTable = make_crc_table();

constexpr std::size_t kCrcOffset = 1;

struct Header {
    std::uint8_t tag;
    std::uint32_t crc;
    std::uint16_t key_len;
    std::uint32_t value_len;
};

std::optional<Header> parse_header(ByteView buf) {
    if (buf.size() < kObjectHeaderSize) return std::nullopt;
    Header h{buf[0], load_le<std::uint32_t>(buf.data() + 1), load_le<std::uint16_t>(buf.data() + 5),
             load_le<std::uint32_t>(buf.data() + 7)};
    if ((h.tag & 0xFE) != 0) return std::nullopt;
    if (h.key_len == 0) return std::nullopt;
    if ((h.tag & 1) && h.value_len != 0) return std::nullopt;
    return h;
}

std::uint32_t record_crc(ByteView rec) {
    // CRC over the record with the crc field read as zero.
    static constexpr std::uint8_t zeros[4] = {0, 0, 0, 0};
    std::uint32_t c = crc32(rec.first(kCrcOffset));
    c = crc32(ByteView(zeros, 4), c);
    return crc32(rec.subspan(kCrcOffset + 4), c);
}

}  // namespace

std::uint32_t crc32(ByteView data, std::uint32_t seed) {
    std::uint32_t c = ~seed;
    for (auto b : data) c = kCrcTable[(c ^ b) & 0xFF] ^ (c >> 8);
    return ~c;
}

Bytes encode_object(ByteView key, std::optional<ByteView> value) {
    if (key.empty()) throw EncodingError("empty key");
    if (key.size() > kMaxKeyLen) throw EncodingError("key longer than 65535 bytes");
    const std::size_t vlen = value ? value->size() : 0;
    if (vlen > 0xFFFFFFFFull) throw EncodingError("value longer than 2^32-1 bytes");

    Bytes out;
    out.reserve(kObjectHeaderSize + key.size() + vlen);
    out.push_back(value ? 0 : 1);
    append_le<std::uint32_t>(out, 0);
    append_le<std::uint16_t>(out, static_cast<std::uint16_t>(key.size()));
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(vlen));
    append(out, key);
    if (value) append(out, *value);
    store_le<std::uint32_t>(out.data() + kCrcOffset, record_crc(out));
    return out;
}

std::optional<std::size_t> framed_length(ByteView buf) {
    auto h = parse_header(buf);
    if (!h) return std::nullopt;
    const std::size_t len = kObjectHeaderSize + h->key_len + std::size_t{h->value_len};
    if (len > buf.size()) return std::nullopt;
    return len;
}

std::optional<std::size_t> header_length(ByteView buf) {
    auto h = parse_header(buf);
    if (!h) return std::nullopt;
    return kObjectHeaderSize + h->key_len + std::size_t{h->value_len};
}

std::optional<ObjectRecord> decode_unchecked(ByteView buf) {
    auto h = parse_header(buf);
    if (!h) return std::nullopt;
    auto len = framed_length(buf);
    if (!len) return std::nullopt;
    ObjectRecord r;
    r.is_delete = (h->tag & 1) != 0;
    auto body = buf.subspan(kObjectHeaderSize);
    r.key.assign(body.begin(), body.begin() + h->key_len);
    r.value.assign(body.begin() + h->key_len, body.begin() + h->key_len + h->value_len);
    return r;
}

std::optional<ObjectRecord> verify_object(ByteView buf) {
    auto h = parse_header(buf);
    if (!h) return std::nullopt;
    auto len = framed_length(buf);
    if (!len) return std::nullopt;
    if (record_crc(buf.first(*len)) != h->crc) return std::nullopt;
    return decode_unchecked(buf);
}

std::uint64_t pack_atomic(bool new_tag, std::uint32_t new_off, std::uint32_t old_off) {
    if (new_off > kMaxOffset || old_off > kMaxOffset) throw EncodingError("offset exceeds 31 bits");
    const std::uint32_t a = new_tag ? new_off : old_off;
    const std::uint32_t b = new_tag ? old_off : new_off;
    return (std::uint64_t{new_tag} << 63) | (std::uint64_t{a} << 32) | (std::uint64_t{b} << 1);
}

std::uint64_t pack_region(const AtomicRegion& r) {
    return pack_atomic(r.new_tag, r.new_offset(), r.old_offset());
}

AtomicRegion unpack_atomic(std::uint64_t word) {
    AtomicRegion r;
    r.new_tag = (word >> 63) != 0;
    r.offset_a = static_cast<std::uint32_t>((word >> 32) & kMaxOffset);
    r.offset_b = static_cast<std::uint32_t>((word >> 1) & kMaxOffset);
    return r;
}

std::uint64_t flip_with(std::uint64_t word, std::uint32_t offset) {
    const auto r = unpack_atomic(word);
    return pack_atomic(!r.new_tag, offset, r.new_offset());
}

std::string_view to_string(Scheme s) {
    switch (s) {
        case Scheme::erda: return "erda";
        case Scheme::redo: return "redo";
        case Scheme::raw: return "raw";
    }
    return "?";
}

std::optional<Scheme> parse_scheme(std::string_view s) {
    if (s == "erda") return Scheme::erda;
    if (s == "redo") return Scheme::redo;
    if (s == "raw" || s == "read-after-write") return Scheme::raw;
    return std::nullopt;
}

std::size_t paper_cost(Scheme scheme, OpKind op, std::size_t key_size, std::size_t n) {
    if (scheme == Scheme::erda) {
        switch (op) {
            case OpKind::create: return key_size + 10 + n;
            case OpKind::update: return 9 + n;
            case OpKind::remove: return key_size + 9;
        }
    }
    switch (op) {
        case OpKind::create: return key_size + 12 + 2 * n;
        case OpKind::update: return 4 + 2 * n;
        case OpKind::remove: return key_size + 8;
    }
    return 0;
}

}  // namespace erda
