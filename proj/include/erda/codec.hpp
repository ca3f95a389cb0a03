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

// Storage and wire encodings shared by every scheme.
//
// Object record layout (little-endian):
//
//   +-----+--------+---------+-----------+-----+-------+
//   | tag | crc32  | key_len | value_len | key | value |
//   | 1B  | 4B     | 2B      | 4B        |     |       |
//   +-----+--------+---------+-----------+-----+-------+
//
// Bit 0 of the tag byte is the delete tag; bits 1-7 are zero. The CRC covers
// the whole record with the crc field zeroed.
//
// The 8-byte atomic metadata word, most significant bit first:
//
//   new_tag(1) | offset_a(31) | offset_b(31) | reserved(1)

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string_view>

#include "erda/bytes.hpp"

namespace erda {

/// CRC-32/ISO-HDLC (poly 0x04C11DB7 reflected, init and xorout 0xFFFFFFFF).
std::uint32_t crc32(ByteView data, std::uint32_t seed = 0);

class EncodingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kObjectHeaderSize = 11;
inline constexpr std::size_t kMaxKeyLen = 0xFFFF;
/// Bytes of the header that the NVM-write accounting counts (tag + crc).
inline constexpr std::size_t kPaperObjectOverhead = 5;

struct ObjectRecord {
    bool is_delete = false;
    Bytes key;
    Bytes value;

    std::size_t encoded_size() const { return kObjectHeaderSize + key.size() + value.size(); }
    /// Size of the record as counted by the NVM-write accounting (5 + key + value).
    std::size_t paper_size() const { return kPaperObjectOverhead + key.size() + value.size(); }
};

inline std::size_t encoded_object_size(std::size_t key_len, std::size_t value_len) {
    return kObjectHeaderSize + key_len + value_len;
}

/// Encodes a normal object, or a delete marker when `value` is empty optional.
Bytes encode_object(ByteView key, std::optional<ByteView> value);

inline Bytes encode_delete(ByteView key) { return encode_object(key, std::nullopt); }

/// Parses the framing without checking the CRC. Returns the full record length
/// if the header lengths fit in `buf`.
std::optional<std::size_t> framed_length(ByteView buf);

/// Record length announced by a header alone; nothing beyond the header is
/// checked.
std::optional<std::size_t> header_length(ByteView buf);

/// Returns the decoded record when `buf` starts with a well-formed record whose
/// CRC matches; trailing bytes after the record are ignored.
std::optional<ObjectRecord> verify_object(ByteView buf);

/// Decodes without checking the CRC. Used only by the fault-injection hook that
/// disables checksum verification.
std::optional<ObjectRecord> decode_unchecked(ByteView buf);

// ---------------------------------------------------------------------------
// Atomic metadata word.

inline constexpr std::uint32_t kMaxOffset = (1u << 31) - 1;

struct AtomicRegion {
    bool new_tag = false;
    std::uint32_t offset_a = 0;  ///< first 31-bit slot
    std::uint32_t offset_b = 0;  ///< second 31-bit slot

    std::uint32_t new_offset() const { return new_tag ? offset_a : offset_b; }
    std::uint32_t old_offset() const { return new_tag ? offset_b : offset_a; }

    friend bool operator==(const AtomicRegion&, const AtomicRegion&) = default;
};

std::uint64_t pack_atomic(bool new_tag, std::uint32_t new_off, std::uint32_t old_off);
std::uint64_t pack_region(const AtomicRegion& r);
AtomicRegion unpack_atomic(std::uint64_t word);

/// The word written by an update: flip the tag and place `offset` in the slot
/// the new tag selects; the previous new offset becomes the old one.
std::uint64_t flip_with(std::uint64_t word, std::uint32_t offset);

// ---------------------------------------------------------------------------
// NVM-write accounting constants.

enum class Scheme { erda, redo, raw };
enum class OpKind { create, update, remove };

std::string_view to_string(Scheme s);
std::optional<Scheme> parse_scheme(std::string_view s);

/// Bytes of NVM written by one operation. `n` is the size of the key-value pair
/// (key + value); it is ignored for deletes.
std::size_t paper_cost(Scheme scheme, OpKind op, std::size_t key_size, std::size_t n);

}  // namespace erda
