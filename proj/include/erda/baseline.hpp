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

// Redo Logging and Read After Write.
//
// Both schemes persist every write twice: once into a ring of log slots and
// once into its destination in a heap, reached through the same hopscotch
// index Erda uses. Redo clients hand the record to the server CPU, which logs
// it. RAW clients reserve a slot, write it one-sided and force it to NVM with
// a trailing read. Reads always go through the server CPU, which looks in the
// unapplied log first. The RAW server learns that a slot was written by
// polling its header from the apply loop.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "erda/codec.hpp"
#include "erda/fabric.hpp"
#include "erda/index.hpp"
#include "erda/kv.hpp"
#include "erda/nvm.hpp"
#include "erda/sim.hpp"

namespace erda {

struct BaselineConfig {
    std::uint32_t table_slots = 16384;
    std::uint32_t ring_slots = 64;
    std::uint32_t max_object_size = 8192;
    std::uint64_t heap_size = 32 << 20;
    /// A reserved RAW slot whose write never shows up is skipped after this
    /// many round trips.
    std::uint32_t abandon_rtts = 20;

    void validate() const;
};

/// Slot header: seq u64, record length u32, crc32 over seq, length and record.
inline constexpr std::size_t kSlotHeaderSize = 16;
/// Log bytes charged per logged record beyond the key-value pair.
inline constexpr std::size_t kPaperLogOverhead = 4;
/// Index bytes charged when an entry is created or dropped, beyond the key.
inline constexpr std::size_t kPaperBaselineEntry = 8;

Bytes encode_slot(std::uint64_t seq, ByteView object);
/// The framed object of a slot image holding `seq`, if intact.
std::optional<Bytes> parse_slot(ByteView slot, std::uint64_t seq);
/// Sequence number recorded in a slot header (unvalidated).
inline std::uint64_t slot_seq(ByteView slot) { return load_le<std::uint64_t>(slot.data()); }

class BaselineLayout {
public:
    static constexpr std::uint64_t kSuperblockSize = 4096;
    static constexpr std::uint64_t kCursorAddr = 4096;

    BaselineLayout(Scheme scheme, BaselineConfig cfg);

    Scheme scheme() const { return scheme_; }
    const BaselineConfig& config() const { return cfg_; }
    TableGeometry table() const { return {table_base_, cfg_.table_slots}; }
    std::uint64_t slot_size() const { return slot_size_; }
    std::uint64_t ring_base() const { return ring_base_; }
    std::uint64_t ring_bytes() const { return slot_size_ * cfg_.ring_slots; }
    std::uint64_t slot_addr(std::uint64_t seq) const { return ring_base_ + (seq % cfg_.ring_slots) * slot_size_; }
    std::uint64_t heap_base() const { return heap_base_; }
    std::uint64_t capacity() const { return heap_base_ + cfg_.heap_size; }

    void write_superblock(NvmDevice& dev) const;
    /// Throws DeviceFault when the superblock is unreadable.
    static BaselineLayout read_superblock(const NvmDevice& dev);

private:
    Scheme scheme_;
    BaselineConfig cfg_;
    std::uint64_t table_base_;
    std::uint64_t slot_size_;
    std::uint64_t ring_base_;
    std::uint64_t heap_base_;
};

struct BaselineServerCounters {
    std::uint64_t logged = 0;
    std::uint64_t applied = 0;
    std::uint64_t busy_replies = 0;
    std::uint64_t abandoned_slots = 0;
    std::uint64_t apply_failures = 0;
    std::uint64_t log_hits = 0;  ///< reads served from the unapplied log
    std::uint64_t replayed = 0;  ///< records applied during recovery
};

class BaselineServer : public KvServer {
public:
    static std::unique_ptr<BaselineServer> format(Fabric& fab, EndpointId ep, NvmDevice& dev, Scheme scheme,
                                                  const BaselineConfig& cfg);
    static std::unique_ptr<BaselineServer> recover(Fabric& fab, EndpointId ep, NvmDevice& dev);
    ~BaselineServer() override;

    Scheme scheme() const override { return layout_.scheme(); }
    EndpointId endpoint() const override { return ep_; }
    NvmDevice& nvm() override { return dev_; }
    bool background_busy() const override;

    const BaselineLayout& layout() const { return layout_; }
    HopscotchIndex& index() { return index_; }
    const BaselineServerCounters& counters() const { return counters_; }
    std::uint64_t applied_seq() const { return apply_seq_; }
    std::size_t unapplied() const { return pending_.size(); }
    /// Test hook: holds the apply loop so records stay in the log.
    void set_apply_paused(bool paused);
    /// Current value of `key` as the server would serve it.
    std::optional<Bytes> value_of(ByteView key) const;

private:
    enum class SlotState { reserved, written, abandoned };
    struct Pending {
        SlotState state;
        Bytes key;
    };

    BaselineServer(Fabric& fab, EndpointId ep, NvmDevice& dev, BaselineLayout layout);

    void start_serving();
    void do_format();
    void do_recover();
    void rebuild_heap();

    void on_doorbell();
    void handle(CpuQueue::Context& ctx, const Message& m);
    void handle_connect(CpuQueue::Context& ctx, const Message& m);
    void handle_log_write(CpuQueue::Context& ctx, const Message& m, Reader& in, std::uint8_t op);
    void handle_slot_request(CpuQueue::Context& ctx, const Message& m, Reader& in);
    /// The RAW slot `seq` holds an intact record for `key`.
    bool slot_landed(std::uint64_t seq, ByteView key) const;
    void mark_written(std::uint64_t seq, Pending& p);
    void handle_read(CpuQueue::Context& ctx, const Message& m, Reader& in);
    void reply(CpuQueue::Context& ctx, EndpointId to, Bytes payload);

    /// Latest record for `key`, looking at the unapplied log first.
    std::optional<ObjectRecord> latest(ByteView key, bool* from_log = nullptr) const;
    bool ring_full() const { return next_seq_ - apply_seq_ >= layout_.config().ring_slots; }
    void kick_apply();
    /// Installs the logged record `object` at its destination. False if the
    /// heap or the index ran out of room.
    bool apply(ByteView object, bool account);
    void persist_cursor();

    std::optional<std::uint64_t> allocate(std::size_t size);
    void release(std::uint64_t addr);

    Fabric& fab_;
    Scheduler& sched_;
    EndpointId ep_;
    std::shared_ptr<bool> life_ = std::make_shared<bool>(true);
    std::shared_ptr<bool> ep_token_;
    NvmDevice& dev_;
    BaselineLayout layout_;
    HopscotchIndex index_;
    std::uint32_t ring_rkey_ = 0;
    std::unique_ptr<CpuQueue> cpu_;
    std::uint64_t next_seq_ = 0;
    std::uint64_t apply_seq_ = 0;
    std::map<std::uint64_t, Pending> pending_;
    std::map<Bytes, std::uint64_t> shadow_;  ///< key -> newest unapplied seq
    bool apply_queued_ = false;
    bool apply_paused_ = false;
    bool poll_scheduled_ = false;
    std::uint64_t bump_ = 0;
    std::map<std::uint64_t, std::vector<std::uint64_t>> free_;  ///< size -> blocks
    std::uint32_t next_client_id_ = 1;
    BaselineServerCounters counters_;
};

class BaselineClient : public KvClient {
public:
    BaselineClient(Fabric& fab, EndpointId self, EndpointId server, Scheme scheme);
    ~BaselineClient() override;

    Task<bool> connect() override;
    Task<GetResult> get(Bytes key) override;
    Task<WriteStatus> put(Bytes key, Bytes value) override;
    Task<WriteStatus> remove(Bytes key) override;
    EndpointId endpoint() const override { return self_; }
    const ClientCounters& counters() const override { return counters_; }

private:
    void on_message(Message m);
    Task<Message> rpc(Bytes payload);
    Task<WriteStatus> write(Bytes key, std::optional<Bytes> value);
    Task<WriteStatus> write_redo(const Bytes& key, const Bytes& object, std::uint8_t op);
    Task<WriteStatus> write_raw(const Bytes& key, const Bytes& object, std::uint8_t op, std::size_t paper);

    Fabric& fab_;
    EndpointId self_;
    EndpointId server_;
    Scheme scheme_;
    ReplySlot replies_;
    std::shared_ptr<bool> token_;
    std::uint32_t ring_rkey_ = 0;
    std::uint32_t max_object_ = 0;
    bool lost_ = false;
    ClientCounters counters_;
};

}  // namespace erda
