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

#include "erda/nvm.hpp"

#include <algorithm>
#include <fstream>
#include <random>

namespace erda {

namespace {
constexpr char kMagic[8] = {'E', 'R', 'D', 'A', 'N', 'V', 'M', '1'};
constexpr std::size_t kImageHeader = 16;
}  // namespace

NvmDevice::NvmDevice(std::size_t capacity) : durable_(capacity, 0), visible_(capacity, 0) {}

void NvmDevice::check_range(std::uint64_t addr, std::size_t len) const {
    if (addr > capacity() || len > capacity() - addr)
        throw DeviceFault("nvm access out of bounds: addr=" + std::to_string(addr) +
                          " len=" + std::to_string(len));
}

void NvmDevice::store(std::uint64_t addr, ByteView data, bool atomic8, std::size_t paper_bytes) {
    check_range(addr, data.size());
    if (atomic8 && (data.size() != 8 || addr % 8 != 0))
        throw ContractViolation("atomic store must be 8 bytes at an 8-byte aligned address");
    std::copy(data.begin(), data.end(), visible_.begin() + static_cast<std::ptrdiff_t>(addr));
    inflight_.push_back(Pending{addr, Bytes(data.begin(), data.end()), atomic8, paper_bytes});
}

void NvmDevice::store_atomic(std::uint64_t addr, std::uint64_t word, std::size_t paper_bytes) {
    std::uint8_t buf[8];
    store_le(buf, word);
    store(addr, ByteView(buf, 8), true, paper_bytes);
}

Bytes NvmDevice::read(std::uint64_t addr, std::size_t len) const {
    check_range(addr, len);
    auto first = visible_.begin() + static_cast<std::ptrdiff_t>(addr);
    return Bytes(first, first + static_cast<std::ptrdiff_t>(len));
}

std::uint64_t NvmDevice::read_u64(std::uint64_t addr) const {
    check_range(addr, 8);
    return load_le<std::uint64_t>(visible_.data() + addr);
}

ByteView NvmDevice::view(std::uint64_t addr, std::size_t len) const {
    check_range(addr, len);
    return ByteView(visible_.data() + addr, len);
}

void NvmDevice::flush() {
    for (auto& p : inflight_) {
        std::copy(p.data.begin(), p.data.end(), durable_.begin() + static_cast<std::ptrdiff_t>(p.addr));
        write_bytes_actual_ += p.data.size();
        write_bytes_paper_ += p.paper_bytes;
        ++store_count_;
        if (p.atomic8) ++atomic_store_count_;
    }
    inflight_.clear();
}

std::size_t NvmDevice::inflight_bytes() const {
    std::size_t n = 0;
    for (const auto& p : inflight_) n += p.data.size();
    return n;
}

std::size_t NvmDevice::inflight_units(std::size_t unit) const {
    std::size_t n = 0;
    for (const auto& p : inflight_) n += persistence_units(p.data.size(), p.atomic8, unit);
    return n;
}

void NvmDevice::crash(const CrashModel& model) {
    if (model.unit == 0) throw ContractViolation("persistence unit must be positive");
    std::mt19937_64 rng(model.seed);

    auto persist = [&](const Pending& p, std::size_t from, std::size_t to) {
        std::copy(p.data.begin() + static_cast<std::ptrdiff_t>(from),
                  p.data.begin() + static_cast<std::ptrdiff_t>(to),
                  durable_.begin() + static_cast<std::ptrdiff_t>(p.addr + from));
    };

    if (model.mode == CrashMode::prefix) {
        const std::size_t total = inflight_bytes();
        std::size_t cut = model.cut ? *model.cut : static_cast<std::size_t>(rng() % (total + 1));
        std::size_t pos = 0;
        for (const auto& p : inflight_) {
            const std::size_t len = p.data.size();
            if (cut >= pos + len) {
                persist(p, 0, len);
            } else if (!p.atomic8 && cut > pos) {
                persist(p, 0, cut - pos);
            }
            pos += len;
        }
    } else {
        std::size_t index = 0;
        for (const auto& p : inflight_) {
            const std::size_t units = persistence_units(p.data.size(), p.atomic8, model.unit);
            for (std::size_t u = 0; u < units; ++u, ++index) {
                bool keep;
                if (model.units)
                    keep = index < model.units->size() && (*model.units)[index];
                else
                    keep = (rng() & 1) != 0;
                if (!keep) continue;
                if (p.atomic8)
                    persist(p, 0, 8);
                else
                    persist(p, u * model.unit, std::min(p.data.size(), (u + 1) * model.unit));
            }
        }
    }
    inflight_.clear();
    visible_ = durable_;
}

NvmDevice NvmDevice::crashed(const CrashModel& model) const {
    NvmDevice copy = *this;
    copy.crash(model);
    return copy;
}

void NvmDevice::reset_counters() {
    write_bytes_paper_ = 0;
    write_bytes_actual_ = 0;
    store_count_ = 0;
    atomic_store_count_ = 0;
}

Bytes NvmDevice::serialize() const {
    Bytes out(kMagic, kMagic + 8);
    append_le<std::uint64_t>(out, capacity());
    append(out, durable_);
    return out;
}

NvmDevice NvmDevice::deserialize(ByteView image) {
    if (image.size() < kImageHeader || !std::equal(kMagic, kMagic + 8, image.begin()))
        throw DeviceFault("not an nvm image (bad magic)");
    const auto cap = load_le<std::uint64_t>(image.data() + 8);
    if (image.size() - kImageHeader != cap) throw DeviceFault("nvm image size does not match header");
    NvmDevice dev(cap);
    std::copy(image.begin() + kImageHeader, image.end(), dev.durable_.begin());
    dev.visible_ = dev.durable_;
    return dev;
}

void NvmDevice::dump(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DeviceFault("cannot open " + path.string() + " for writing");
    auto bytes = serialize();
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DeviceFault("short write to " + path.string());
}

NvmDevice NvmDevice::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DeviceFault("cannot open " + path.string());
    Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace erda
