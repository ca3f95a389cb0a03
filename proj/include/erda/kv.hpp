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

// Scheme-independent client/server interfaces and the two-sided message
// vocabulary. Every two-sided payload starts with a one-byte message type.

#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "erda/bytes.hpp"
#include "erda/codec.hpp"
#include "erda/fabric.hpp"
#include "erda/sim.hpp"

namespace erda {

namespace msg {
inline constexpr std::uint8_t kPut = 1;
inline constexpr std::uint8_t kDelete = 2;
inline constexpr std::uint8_t kRead = 3;
inline constexpr std::uint8_t kRepair = 4;
inline constexpr std::uint8_t kConnect = 5;
inline constexpr std::uint8_t kHeadArrayReq = 6;
inline constexpr std::uint8_t kSlotReq = 7;

inline constexpr std::uint8_t kWriteResp = 0x81;
inline constexpr std::uint8_t kReadResp = 0x83;
inline constexpr std::uint8_t kConnectResp = 0x85;
inline constexpr std::uint8_t kHeadArray = 0x86;
inline constexpr std::uint8_t kSlotResp = 0x87;
inline constexpr std::uint8_t kHeadArrayResp = 0x88;
inline constexpr std::uint8_t kCleanStart = 0x90;
inline constexpr std::uint8_t kCleanFinish = 0x91;

inline bool is_notification(std::uint8_t type) {
    return type == kHeadArray || type == kCleanStart || type == kCleanFinish;
}
}  // namespace msg

/// Status byte carried in responses.
enum class Reply : std::uint8_t { ok = 0, not_found = 1, redirect = 2, busy = 3, full = 4, error = 5 };

enum class GetStatus { ok, not_found, recovered, data_loss, disconnected };

std::string_view to_string(GetStatus s);

struct GetResult {
    GetStatus status = GetStatus::not_found;
    Bytes value;

    bool has_value() const { return status == GetStatus::ok || status == GetStatus::recovered; }
};

enum class WriteStatus { ok, not_found, full, disconnected, protocol_error };

std::string_view to_string(WriteStatus s);

/// Per-client operation counters, kept by the client itself.
struct ClientCounters {
    std::uint64_t gets = 0;
    std::uint64_t puts = 0;
    std::uint64_t deletes = 0;
    std::uint64_t retries = 0;
    std::uint64_t fallbacks = 0;
    std::uint64_t repairs_sent = 0;
    std::uint64_t two_sided_ops = 0;
    std::uint64_t busy_retries = 0;
    /// One-sided reads issued by the most recent get.
    std::uint64_t last_get_reads = 0;
};

class KvClient {
public:
    virtual ~KvClient() = default;
    virtual Task<bool> connect() = 0;
    virtual Task<GetResult> get(Bytes key) = 0;
    virtual Task<WriteStatus> put(Bytes key, Bytes value) = 0;
    virtual Task<WriteStatus> remove(Bytes key) = 0;
    virtual EndpointId endpoint() const = 0;
    virtual const ClientCounters& counters() const = 0;
};

class KvServer {
public:
    virtual ~KvServer() = default;
    virtual Scheme scheme() const = 0;
    virtual EndpointId endpoint() const = 0;
    virtual NvmDevice& nvm() = 0;
    /// True while the server still has internal work queued (apply loops,
    /// cleaning). Harnesses wait for this before tearing down.
    virtual bool background_busy() const = 0;
};

/// Waits for the next non-notification message delivered to a client.
class ReplySlot {
public:
    Future<Message> expect() {
        Future<Message> f;
        pending_ = f.resolver();
        return f;
    }
    /// Returns false when nobody was waiting.
    bool deliver(Message m) {
        if (!pending_) return false;
        auto r = std::exchange(pending_, {});
        r(std::move(m));
        return true;
    }

private:
    Future<Message>::Resolver pending_;
};

}  // namespace erda
