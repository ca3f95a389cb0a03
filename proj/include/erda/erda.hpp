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

// Erda: zero-copy log-structured store. Clients read metadata and objects with
// one-sided reads and write objects with one-sided writes into log ranges the
// server hands out; the server only touches the 8-byte metadata word.
//
// Device layout:
//
//   [0, 4096)            superblock (magic, geometry)
//   [4096, ...)          one 512-byte record per head
//   table                hopscotch table (page aligned)
//   regions              region pool, `region_count` x `region_size`
//
// Head record:
//
//   [0..7]     head word (atomic): bit 0 active chain, bits 1-2 phase
//   [8..11]    reserved replication end (chain position)
//   [16..223]  chain 0: count (8, atomic) then up to 100 region ids (2 each)
//   [224..431] chain 1
//
// Log offsets stored in metadata words are 31-bit: bit 30 names the chain
// (0 or 1), the low 30 bits are the position inside that chain.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "erda/codec.hpp"
#include "erda/fabric.hpp"
#include "erda/index.hpp"
#include "erda/kv.hpp"
#include "erda/nvm.hpp"
#include "erda/sim.hpp"

namespace erda {

struct ErdaConfig {
    std::uint32_t table_slots = 16384;
    std::uint32_t heads = 4;
    std::uint64_t region_size = 1 << 20;
    std::uint64_t segment_size = 64 << 10;
    std::uint32_t region_count = 48;
    std::uint32_t max_chain = 16;
    std::uint32_t max_object_size = 8192;
    double clean_threshold = 0.75;
    bool auto_clean = true;
    /// Records the cleaner handles per CPU work item.
    std::uint32_t clean_batch = 8;

    /// Throws ContractViolation on an unusable geometry.
    void validate() const;
};

enum class HeadPhase : std::uint8_t { normal = 0, merging = 1, replicating = 2, finishing = 3 };

std::string_view to_string(HeadPhase p);

inline constexpr std::uint32_t kChainBit = 1u << 30;
inline constexpr std::uint32_t kMaxChainRegions = 100;

inline std::uint32_t chain_of(std::uint32_t off) { return off >> 30; }
inline std::uint32_t chain_pos(std::uint32_t off) { return off & (kChainBit - 1); }
inline std::uint32_t make_offset(std::uint32_t chain, std::uint32_t pos) { return (chain << 30) | pos; }

class ErdaLayout {
public:
    static constexpr std::uint64_t kSuperblockSize = 4096;
    static constexpr std::uint64_t kHeadRecordSize = 512;
    static constexpr std::uint64_t kHeadWord = 0;
    static constexpr std::uint64_t kHeadReserved = 8;
    static constexpr std::uint64_t kChain0 = 16;
    static constexpr std::uint64_t kChainStride = 208;

    explicit ErdaLayout(ErdaConfig cfg);

    const ErdaConfig& config() const { return cfg_; }
    std::uint64_t head_addr(std::uint32_t h) const { return kSuperblockSize + h * kHeadRecordSize; }
    std::uint64_t chain_addr(std::uint32_t h, std::uint32_t chain) const {
        return head_addr(h) + kChain0 + chain * kChainStride;
    }
    TableGeometry table() const { return {table_base_, cfg_.table_slots}; }
    std::uint64_t region_addr(std::uint32_t id) const { return region_base_ + id * cfg_.region_size; }
    std::uint64_t capacity() const { return region_addr(cfg_.region_count); }
    /// Bytes one chain can address.
    std::uint64_t chain_capacity() const { return std::uint64_t{cfg_.max_chain} * cfg_.region_size; }

    void write_superblock(NvmDevice& dev) const;
    /// Reads and validates the superblock. Throws DeviceFault when unreadable.
    static ErdaConfig read_superblock(const NvmDevice& dev);

private:
    ErdaConfig cfg_;
    std::uint64_t table_base_;
    std::uint64_t region_base_;
};

std::uint32_t head_of(ByteView key, std::uint32_t heads);

/// Client-visible view of one head: where its chains live.
struct RegionRef {
    std::uint64_t base = 0;
    std::uint32_t rkey = 0;
};

struct HeadInfo {
    HeadPhase phase = HeadPhase::normal;
    std::uint8_t active = 0;
    std::vector<RegionRef> chains[2];
};

void encode_head_array(Bytes& out, const std::vector<HeadInfo>& heads);
std::vector<HeadInfo> decode_head_array(Reader& in);

struct RecoveryReport {
    std::size_t index_fixes = 0;
    std::vector<Bytes> repaired_keys;  ///< entries rewritten to their old version
    std::vector<Bytes> removed_keys;   ///< entries dropped (torn creates, finished deletes)
    std::vector<Bytes> salvaged_keys;  ///< aborted-cleaning records copied back
    std::vector<Bytes> lost_keys;      ///< torn newest version and no intact old one
    std::uint64_t atomic_stores = 0;
    std::size_t cleanings_aborted = 0;
    std::size_t cleanings_completed = 0;
    std::vector<std::uint64_t> cursors;  ///< recovered last_written per head
};

struct ErdaServerCounters {
    std::uint64_t writes_granted = 0;
    std::uint64_t two_sided_writes = 0;
    std::uint64_t two_sided_reads = 0;
    std::uint64_t redirects = 0;
    std::uint64_t repairs_applied = 0;
    std::uint64_t repairs_skipped = 0;
    std::uint64_t regions_linked = 0;
    std::uint64_t cleanings_started = 0;
    std::uint64_t cleanings_completed = 0;
};

/// Byte accounting of the last completed cleaning of a head.
struct CleanStats {
    std::uint32_t head = 0;
    std::uint64_t region1_record_bytes = 0;  ///< valid records found in Region 1
    std::uint64_t client_region2_bytes = 0;  ///< records clients wrote into Region 2
    std::uint64_t copied_bytes = 0;          ///< records the cleaner copied
    std::uint64_t region2_live_bytes = 0;    ///< records referenced after finish
    std::uint64_t skipped_replicas = 0;
    SimTime started_at = 0;
    SimTime finished_at = 0;

    std::uint64_t reclaimed() const { return region1_record_bytes + client_region2_bytes - region2_live_bytes; }
};

class Cleaner;

class ErdaServer : public KvServer {
public:
    /// Formats `dev` and starts serving.
    static std::unique_ptr<ErdaServer> format(Fabric& fab, EndpointId ep, NvmDevice& dev, const ErdaConfig& cfg);
    /// Recovers from the durable content of `dev` and starts serving.
    static std::unique_ptr<ErdaServer> recover(Fabric& fab, EndpointId ep, NvmDevice& dev);

    ~ErdaServer() override;

    Scheme scheme() const override { return Scheme::erda; }
    EndpointId endpoint() const override { return ep_; }
    NvmDevice& nvm() override { return dev_; }
    bool background_busy() const override;

    const ErdaLayout& layout() const { return layout_; }
    HopscotchIndex& index() { return index_; }
    const RecoveryReport& recovery_report() const { return recovery_; }
    const ErdaServerCounters& counters() const { return counters_; }

    HeadPhase phase(std::uint32_t h) const { return heads_.at(h).phase; }
    std::uint64_t cursor(std::uint32_t h) const;
    std::uint64_t chain_capacity() const { return layout_.chain_capacity(); }
    std::vector<HeadInfo> head_array() const;
    bool cleaning_active() const;
    /// Starts cleaning `h` regardless of occupancy. False if another cleaning
    /// runs, the head is not in normal phase, or no region is free.
    bool force_clean(std::uint32_t h);
    const std::map<std::uint32_t, CleanStats>& clean_history() const { return clean_stats_; }

    /// Device address of a log offset under head `h`, if mapped.
    std::optional<std::uint64_t> translate(std::uint32_t h, std::uint32_t off) const;
    /// Valid record at a log offset, if any.
    std::optional<ObjectRecord> record_at(std::uint32_t h, std::uint32_t off) const;
    std::size_t free_regions() const { return free_regions_.size(); }

private:
    friend class Cleaner;

    struct Chain {
        std::vector<std::uint16_t> regions;
        std::vector<std::uint32_t> rkeys;
        std::uint64_t cursor = 0;
    };
    struct Head {
        std::uint8_t active = 0;
        HeadPhase phase = HeadPhase::normal;
        std::uint32_t reserved_end = 0;
        Chain chains[2];
    };
    class ChainFull : public std::runtime_error {
    public:
        ChainFull() : std::runtime_error("log chain full") {}
    };

    ErdaServer(Fabric& fab, EndpointId ep, NvmDevice& dev, ErdaLayout layout);

    void start_serving();
    bool live() const;
    void do_format();
    void do_recover();

    // head records
    void persist_head_word(std::uint32_t h);
    void persist_reserved(std::uint32_t h);
    void persist_chain(std::uint32_t h, std::uint32_t chain);
    std::uint16_t take_region();
    void link_region(std::uint32_t h, std::uint32_t chain);
    void release_chain(std::uint32_t h, std::uint32_t chain);
    /// Reserves `size` bytes at the end of a chain, skipping to the next
    /// segment rather than straddling one.
    std::uint32_t allocate(std::uint32_t h, std::uint32_t chain, std::size_t size);
    std::uint64_t scan_chain_end(std::uint32_t h, std::uint32_t chain) const;

    // requests
    void on_doorbell();
    void handle(CpuQueue::Context& ctx, const Message& m);
    void handle_write(CpuQueue::Context& ctx, const Message& m, Reader& in, std::uint8_t op);
    void handle_read(CpuQueue::Context& ctx, const Message& m, Reader& in);
    void handle_repair(CpuQueue::Context& ctx, Reader& in);
    void handle_connect(CpuQueue::Context& ctx, const Message& m);
    void reply(CpuQueue::Context& ctx, EndpointId to, Bytes payload);
    void broadcast(Bytes payload);
    Bytes head_array_message(std::uint8_t type, std::optional<std::uint32_t> head = std::nullopt) const;
    void maybe_clean(std::uint32_t h);
    /// Installs `off` as the newest version of `key` with the word rules of the
    /// head's current phase.
    void publish(ByteView key, std::uint32_t h, std::uint32_t off, std::size_t object_size,
                 const std::optional<HashEntry>& entry);
    /// Offset a two-sided read should be served from.
    std::uint32_t serving_offset(std::uint32_t h, const AtomicRegion& r) const;

    /// One-sided grants younger than this are treated as still being written.
    static constexpr SimTime kGrantLeaseRtts = 20;
    SimTime grant_lease() const;
    void note_grant(std::uint32_t h, std::uint32_t off);
    bool write_in_flight(std::uint32_t h, std::uint32_t off) const;
    /// Some in-flight grant of `h` has not landed yet.
    bool grants_pending(std::uint32_t h) const;

    // recovery helpers
    bool repair_entry_locally(const HashEntry& e, RecoveryReport& rep);

    Fabric& fab_;
    Scheduler& sched_;
    EndpointId ep_;
    std::shared_ptr<bool> life_ = std::make_shared<bool>(true);
    std::shared_ptr<bool> ep_token_;
    NvmDevice& dev_;
    ErdaLayout layout_;
    HopscotchIndex index_;
    std::uint32_t table_rkey_ = 0;
    std::vector<Head> heads_;
    std::vector<std::uint16_t> free_regions_;
    std::vector<EndpointId> clients_;
    std::uint32_t next_client_id_ = 1;
    std::unique_ptr<CpuQueue> cpu_;
    std::unique_ptr<Cleaner> cleaning_;
    std::map<std::uint32_t, CleanStats> clean_stats_;
    std::map<std::uint64_t, SimTime> grants_;  ///< (head, offset) -> grant time
    RecoveryReport recovery_;
    ErdaServerCounters counters_;
};

struct ErdaClientOptions {
    std::uint32_t read_retries = 3;
    /// 0 means one round trip of the cost model.
    SimTime retry_backoff_ns = 0;
    /// Test hook for the crash-test mutation check: accept records without
    /// checking their CRC.
    bool unsafe_skip_crc = false;
};

class ErdaClient : public KvClient {
public:
    ErdaClient(Fabric& fab, EndpointId self, EndpointId server, ErdaClientOptions opts = {});
    ~ErdaClient() override;

    Task<bool> connect() override;
    Task<GetResult> get(Bytes key) override;
    Task<WriteStatus> put(Bytes key, Bytes value) override;
    Task<WriteStatus> remove(Bytes key) override;
    EndpointId endpoint() const override { return self_; }
    const ClientCounters& counters() const override { return counters_; }

    std::uint32_t client_id() const { return client_id_; }
    bool head_cleaning(std::uint32_t h) const { return heads_.at(h).phase != HeadPhase::normal; }

private:
    struct Located {
        std::uint64_t addr;
        std::uint32_t rkey;
        std::size_t room;  ///< bytes left in the segment
    };

    void on_message(Message m);
    std::optional<Located> locate(std::uint32_t h, std::uint32_t off) const;
    Task<std::optional<Located>> locate_or_refresh(std::uint32_t h, std::uint32_t off);
    Task<bool> refresh_heads();
    Task<std::optional<ObjectRecord>> fetch(std::uint32_t h, std::uint32_t off, std::size_t window, ByteView key);
    Task<WriteStatus> write(Bytes key, std::optional<Bytes> value);
    Task<WriteStatus> write_two_sided(Bytes key, Bytes object, std::uint8_t op);
    Task<GetResult> get_two_sided(Bytes key);
    /// Request/response exchange; `mailbox` posts the request as a write with
    /// immediate instead of a send.
    Task<Message> rpc(Bytes payload, bool mailbox = false);

    Fabric& fab_;
    EndpointId self_;
    EndpointId server_;
    ErdaClientOptions opts_;
    ReplySlot replies_;
    std::uint32_t client_id_ = 0;
    TableGeometry table_;
    std::uint32_t table_rkey_ = 0;
    std::uint32_t max_object_ = 0;
    std::uint64_t region_size_ = 0;
    std::uint64_t segment_size_ = 0;
    std::vector<HeadInfo> heads_;
    std::shared_ptr<bool> token_;
    bool lost_ = false;
    ClientCounters counters_;
};

}  // namespace erda
