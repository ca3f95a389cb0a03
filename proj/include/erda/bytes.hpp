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

#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace erda {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

inline std::string to_string(ByteView b) {
    return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

template <class T>
inline T load_le(const std::uint8_t* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

template <class T>
inline void store_le(std::uint8_t* p, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

template <class T>
inline void append_le(Bytes& out, T v) {
    const auto at = out.size();
    out.resize(at + sizeof(T));
    store_le<T>(out.data() + at, v);
}

inline void append(Bytes& out, ByteView b) { out.insert(out.end(), b.begin(), b.end()); }

/// Sequential little-endian reader over a byte view; throws on underrun.
class Reader {
public:
    explicit Reader(ByteView buf) : buf_(buf) {}

    template <class T>
    T le() {
        need(sizeof(T));
        T v = load_le<T>(buf_.data() + pos_);
        pos_ += sizeof(T);
        return v;
    }

    Bytes take(std::size_t n) {
        need(n);
        Bytes out(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }

    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) throw std::out_of_range("message truncated");
    }

    ByteView buf_;
    std::size_t pos_ = 0;
};

}  // namespace erda
