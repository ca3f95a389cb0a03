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

// Simulated RDMA fabric.
//
// One-sided writes land in the target NIC's volatile cache and are ACKed from
// there; a separate drain event hands them to the NVM device and a persist
// event follows after the NVM write latency. A crash between ACK and drain
// loses the payload. One-sided reads never involve the target CPU and force
// earlier writes from the same connection out of the NIC cache first.
// Two-sided sends and writes with immediate data queue a completion that the
// target CPU has to poll.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "erda/bytes.hpp"
#include "erda/nvm.hpp"
#include "erda/sim.hpp"

namespace erda {

using EndpointId = std::uint32_t;

struct CostModel {
    SimTime rtt_ns = 2000;
    SimTime per_byte_ns = 1;
    SimTime server_cpu_op_ns = 1500;
    /// Receive-side software path of a two-sided message (recv buffer
    /// consumption, completion dispatch); charged to the receiving CPU.
    SimTime two_sided_overhead_ns = 3500;
    /// Client-side software path of one key-value operation (request
    /// preparation, completion handling); paid by workload clients per op.
    SimTime client_op_overhead_ns = 9400;
    SimTime nvm_write_extra_ns = NvmDevice::kDefaultExtraWriteLatencyNs;
    SimTime nic_drain_ns = 50;
    /// Upper bound of the uniform per-leg delay used for schedule exploration.
    SimTime jitter_ns = 0;

    SimTime half_rtt() const { return rtt_ns / 2; }
    /// Longest possible round trip, used as the cleaner's notification grace.
    SimTime max_rtt(std::size_t max_payload) const {
        return rtt_ns + 2 * jitter_ns + per_byte_ns * max_payload + nic_drain_ns + nvm_write_extra_ns;
    }
};

enum class VerbKind { rdma_read, rdma_write, rdma_write_with_imm, send, recv_completion, ack };

std::string_view to_string(VerbKind k);

enum class Status { ok, remote_access_error, disconnected };

struct TraceEvent {
    SimTime time;
    VerbKind kind;
    EndpointId src;
    EndpointId dst;
    std::uint64_t addr;
    std::size_t len;
    std::uint32_t imm;
};

struct ReadResult {
    Status status = Status::ok;
    Bytes data;
};

struct WriteAck {
    Status status = Status::ok;
};

struct Message {
    EndpointId src = 0;
    VerbKind kind = VerbKind::send;
    Bytes payload;
    std::uint32_t imm = 0;
};

struct EndpointStats {
    std::uint64_t server_cpu_events = 0;  ///< completions polled by this endpoint
    std::uint64_t reads_posted = 0;
    std::uint64_t writes_posted = 0;
    std::uint64_t writes_imm_posted = 0;
    std::uint64_t sends_posted = 0;
    std::uint64_t bytes_posted = 0;

    std::uint64_t round_trips() const { return reads_posted + writes_posted + writes_imm_posted + sends_posted; }
};

class Fabric {
public:
    using MessageHandler = std::function<void(Message)>;

    Fabric(Scheduler& sched, CostModel cost);
    ~Fabric();
    Fabric(const Fabric&) = delete;
    Fabric& operator=(const Fabric&) = delete;

    Scheduler& scheduler() { return sched_; }
    const CostModel& cost() const { return cost_; }

    EndpointId add_endpoint(std::string name, NvmDevice* nvm = nullptr);
    /// Starts a new incarnation of a crashed endpoint (e.g. a restarted server
    /// with its recovered device). Registrations and connections start empty.
    void restart_endpoint(EndpointId id, NvmDevice* nvm);

    /// Two-sided traffic for an endpoint with a handler is delivered to the
    /// handler (client side, after the receive overhead). Endpoints without a
    /// handler queue completions for poll() and ring `doorbell`.
    void set_message_handler(EndpointId id, MessageHandler h);
    void set_doorbell(EndpointId id, std::function<void()> doorbell);

    std::uint32_t register_region(EndpointId id, std::uint64_t base, std::uint64_t len);
    void unregister_region(EndpointId id, std::uint32_t rkey);
    void connect(EndpointId a, EndpointId b);
    bool connected(EndpointId a, EndpointId b) const;
    bool alive(EndpointId id) const;
    std::shared_ptr<bool> liveness(EndpointId id) const;

    Future<ReadResult> read(EndpointId src, EndpointId dst, std::uint32_t rkey, std::uint64_t addr,
                            std::size_t len);
    /// One-sided write; `paper_bytes` is the accounting charge applied when the
    /// payload drains into NVM. With `imm`, the target CPU sees a completion once
    /// the payload is visible in memory.
    Future<WriteAck> write(EndpointId src, EndpointId dst, std::uint32_t rkey, std::uint64_t addr, Bytes payload,
                           std::size_t paper_bytes = 0, std::optional<std::uint32_t> imm = std::nullopt);
    /// Write with immediate into the target's volatile request mailbox.
    Future<WriteAck> write_imm(EndpointId src, EndpointId dst, Bytes payload, std::uint32_t imm);
    Status send(EndpointId src, EndpointId dst, Bytes payload);
    std::vector<Message> poll(EndpointId id);
    /// Resolves after `dt` unless `id` crashed meanwhile.
    Future<bool> sleep(EndpointId id, SimTime dt);

    void crash_endpoint(EndpointId id, const CrashModel& model = CrashModel::drop_all());

    /// Test hooks for the ACK-before-durability window.
    void set_drain_paused(EndpointId id, bool paused);
    void drain_now(EndpointId id);
    std::size_t nic_cache_size(EndpointId id) const;
    /// Bytes of one-sided writes from `src` still on the wire.
    std::size_t inflight_write_bytes(EndpointId src) const;
    std::size_t inflight_write_units(EndpointId src, std::size_t unit) const;

    const EndpointStats& stats(EndpointId id) const;
    void reset_stats();
    const std::string& name(EndpointId id) const;
    std::size_t endpoint_count() const { return eps_.size(); }

    void enable_trace(bool on) { trace_on_ = on; }
    void clear_trace() { trace_.clear(); }
    const std::vector<TraceEvent>& trace() const { return trace_; }
    void set_trace_sink(std::ostream* out) { trace_sink_ = out; }

private:
    struct Region {
        std::uint64_t base;
        std::uint64_t len;
    };
    struct NicEntry {
        std::uint64_t id;
        EndpointId src;
        std::uint64_t addr;
        Bytes data;
        std::size_t paper_bytes;
        std::optional<std::uint32_t> imm;
    };
    struct Endpoint {
        std::string name;
        NvmDevice* nvm = nullptr;
        std::shared_ptr<bool> alive;
        std::map<std::uint32_t, Region> regions;
        std::set<EndpointId> peers;
        std::vector<NicEntry> nic_cache;
        std::vector<Message> cq;
        MessageHandler handler;
        std::function<void()> doorbell;
        bool drain_paused = false;
        EndpointStats stats;
    };
    struct Piece {
        std::size_t offset;
        std::size_t len;
    };
    struct InflightWrite {
        EndpointId src;
        EndpointId dst;
        std::uint64_t addr;
        std::size_t len;
        bool partial = false;
        std::vector<Piece> pieces;
    };

    Endpoint& ep(EndpointId id);
    const Endpoint& ep(EndpointId id) const;
    SimTime leg(EndpointId from, EndpointId to, std::size_t bytes);
    void record(VerbKind kind, EndpointId src, EndpointId dst, std::uint64_t addr, std::size_t len,
                std::uint32_t imm);
    bool region_ok(const Endpoint& e, std::uint32_t rkey, std::uint64_t addr, std::size_t len) const;
    void land_write(EndpointId dst, NicEntry entry);
    void drain_entry(EndpointId dst, std::uint64_t id);
    void schedule_persist(EndpointId dst);
    void deliver(EndpointId dst, Message m);

    Scheduler& sched_;
    CostModel cost_;
    std::vector<Endpoint> eps_;
    std::map<std::pair<EndpointId, EndpointId>, SimTime> last_arrival_;
    std::map<std::uint64_t, InflightWrite> inflight_writes_;
    std::uint64_t next_write_id_ = 1;
    std::uint32_t next_rkey_ = 0x1000;
    bool trace_on_ = false;
    std::vector<TraceEvent> trace_;
    std::ostream* trace_sink_ = nullptr;
};

}  // namespace erda
