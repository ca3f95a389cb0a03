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

#include "erda/baseline.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace erda {

namespace {

constexpr char kMagic[8] = {'E', 'R', 'D', 'A', 'B', 'L', '0', '1'};
constexpr std::uint64_t kBlock = 64;

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

std::uint32_t slot_crc(std::uint64_t seq, ByteView object) {
    std::uint8_t head[12];
    store_le<std::uint64_t>(head, seq);
    store_le<std::uint32_t>(head + 8, static_cast<std::uint32_t>(object.size()));
    return crc32(object, crc32(ByteView(head, 12)));
}

Bytes write_resp(Reply r) { return Bytes{msg::kWriteResp, static_cast<std::uint8_t>(r), 0, 0, 0, 0, 0}; }

Bytes read_resp(Reply r, ByteView value = {}) {
    Bytes out{msg::kReadResp, static_cast<std::uint8_t>(r)};
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(value.size()));
    append(out, value);
    return out;
}

}  // namespace

void BaselineConfig::validate() const {
    if (table_slots == 0 || !std::has_single_bit(table_slots))
        throw ContractViolation("table_slots must be a power of two");
    if (ring_slots == 0) throw ContractViolation("ring_slots must be positive");
    if (max_object_size < kObjectHeaderSize + 1) throw ContractViolation("max_object_size too small");
    if (heap_size < max_object_size) throw ContractViolation("heap smaller than one object");
}

Bytes encode_slot(std::uint64_t seq, ByteView object) {
    Bytes out;
    out.reserve(kSlotHeaderSize + object.size());
    append_le<std::uint64_t>(out, seq);
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(object.size()));
    append_le<std::uint32_t>(out, slot_crc(seq, object));
    append(out, object);
    return out;
}

std::optional<Bytes> parse_slot(ByteView slot, std::uint64_t seq) {
    if (slot.size() < kSlotHeaderSize || slot_seq(slot) != seq) return std::nullopt;
    const std::size_t len = load_le<std::uint32_t>(slot.data() + 8);
    if (len > slot.size() - kSlotHeaderSize) return std::nullopt;
    ByteView object = slot.subspan(kSlotHeaderSize, len);
    if (slot_crc(seq, object) != load_le<std::uint32_t>(slot.data() + 12)) return std::nullopt;
    if (!verify_object(object)) return std::nullopt;
    return Bytes(object.begin(), object.end());
}

BaselineLayout::BaselineLayout(Scheme scheme, BaselineConfig cfg) : scheme_(scheme), cfg_(cfg) {
    if (scheme == Scheme::erda) throw ContractViolation("baseline layout needs redo or raw");
    cfg_.validate();
    table_base_ = 2 * kSuperblockSize;
    slot_size_ = align_up(kSlotHeaderSize + cfg_.max_object_size, kBlock);
    ring_base_ = align_up(table_base_ + table().bytes(), 4096);
    heap_base_ = align_up(ring_base_ + ring_bytes(), 4096);
}

void BaselineLayout::write_superblock(NvmDevice& dev) const {
    Bytes sb(kMagic, kMagic + 8);
    append_le<std::uint64_t>(sb, scheme_ == Scheme::redo ? 1 : 2);
    append_le<std::uint64_t>(sb, cfg_.table_slots);
    append_le<std::uint64_t>(sb, cfg_.ring_slots);
    append_le<std::uint64_t>(sb, cfg_.max_object_size);
    append_le<std::uint64_t>(sb, cfg_.heap_size);
    append_le<std::uint64_t>(sb, cfg_.abandon_rtts);
    append_le<std::uint32_t>(sb, crc32(sb));
    dev.store(0, sb);
    dev.flush();
}

BaselineLayout BaselineLayout::read_superblock(const NvmDevice& dev) {
    constexpr std::size_t kLen = 8 + 6 * 8;
    if (dev.capacity() < kSuperblockSize) throw DeviceFault("device too small for a superblock");
    ByteView sb = dev.durable_image().subspan(0, kLen + 4);
    if (std::memcmp(sb.data(), kMagic, 8) != 0) throw DeviceFault("superblock magic mismatch");
    if (crc32(sb.first(kLen)) != load_le<std::uint32_t>(sb.data() + kLen))
        throw DeviceFault("superblock checksum mismatch");
    Reader in(sb.subspan(8));
    const auto kind = in.le<std::uint64_t>();
    if (kind != 1 && kind != 2) throw DeviceFault("unknown baseline scheme");
    BaselineConfig c;
    c.table_slots = static_cast<std::uint32_t>(in.le<std::uint64_t>());
    c.ring_slots = static_cast<std::uint32_t>(in.le<std::uint64_t>());
    c.max_object_size = static_cast<std::uint32_t>(in.le<std::uint64_t>());
    c.heap_size = in.le<std::uint64_t>();
    c.abandon_rtts = static_cast<std::uint32_t>(in.le<std::uint64_t>());
    try {
        return BaselineLayout(kind == 1 ? Scheme::redo : Scheme::raw, c);
    } catch (const ContractViolation& e) {
        throw DeviceFault(std::string("superblock geometry: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Server

BaselineServer::BaselineServer(Fabric& fab, EndpointId ep, NvmDevice& dev, BaselineLayout layout)
    : fab_(fab), sched_(fab.scheduler()), ep_(ep), dev_(dev), layout_(layout), index_(dev, layout.table()) {
    if (dev_.capacity() < layout_.capacity()) throw ContractViolation("device smaller than layout");
}

std::unique_ptr<BaselineServer> BaselineServer::format(Fabric& fab, EndpointId ep, NvmDevice& dev, Scheme scheme,
                                                       const BaselineConfig& cfg) {
    std::unique_ptr<BaselineServer> s(new BaselineServer(fab, ep, dev, BaselineLayout(scheme, cfg)));
    s->do_format();
    s->start_serving();
    return s;
}

std::unique_ptr<BaselineServer> BaselineServer::recover(Fabric& fab, EndpointId ep, NvmDevice& dev) {
    std::unique_ptr<BaselineServer> s(new BaselineServer(fab, ep, dev, BaselineLayout::read_superblock(dev)));
    s->do_recover();
    s->start_serving();
    return s;
}

BaselineServer::~BaselineServer() {
    *life_ = false;
    if (ep_token_ && fab_.liveness(ep_) == ep_token_) fab_.set_doorbell(ep_, nullptr);
}

bool BaselineServer::background_busy() const {
    return (cpu_ && (cpu_->busy() || cpu_->backlog())) || (!pending_.empty() && !apply_paused_);
}

void BaselineServer::start_serving() {
    ep_token_ = fab_.liveness(ep_);
    cpu_ = std::make_unique<CpuQueue>(sched_, [life = life_, ep = ep_token_] { return *life && *ep; });
    ring_rkey_ = fab_.register_region(ep_, layout_.ring_base(), layout_.ring_bytes());
    fab_.set_doorbell(ep_, [this] { on_doorbell(); });
}

void BaselineServer::do_format() {
    const Bytes zeros(layout_.heap_base() - BaselineLayout::kCursorAddr, 0);
    dev_.store(BaselineLayout::kCursorAddr, zeros);
    layout_.write_superblock(dev_);
    bump_ = layout_.heap_base();
}

void BaselineServer::do_recover() {
    index_.recover();
    apply_seq_ = dev_.read_u64(BaselineLayout::kCursorAddr);
    rebuild_heap();

    std::map<std::uint64_t, Bytes> logged;
    for (std::uint64_t i = 0; i < layout_.config().ring_slots; ++i) {
        ByteView slot = dev_.view(layout_.ring_base() + i * layout_.slot_size(), layout_.slot_size());
        const std::uint64_t seq = slot_seq(slot);
        if (seq < apply_seq_) continue;
        if (auto obj = parse_slot(slot, seq)) logged.emplace(seq, std::move(*obj));
    }
    for (auto& [seq, obj] : logged) {
        if (!apply(obj, false)) counters_.apply_failures++;
        apply_seq_ = seq + 1;
        persist_cursor();
        counters_.replayed++;
    }
    next_seq_ = apply_seq_;
    dev_.flush();
}

void BaselineServer::rebuild_heap() {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> used;
    index_.for_each_live([&](const HashEntry& e) {
        if (e.word < layout_.heap_base() || e.word + kObjectHeaderSize > layout_.capacity()) return;
        auto len = header_length(dev_.view(e.word, kObjectHeaderSize));
        if (len) used.emplace_back(e.word, align_up(*len, kBlock));
    });
    std::sort(used.begin(), used.end());
    free_.clear();
    std::uint64_t at = layout_.heap_base();
    for (auto [addr, size] : used) {
        if (addr > at) free_[addr - at].push_back(at);
        at = std::max(at, addr + size);
    }
    bump_ = at;
}

std::optional<std::uint64_t> BaselineServer::allocate(std::size_t size) {
    const std::uint64_t need = align_up(size, kBlock);
    if (auto it = free_.find(need); it != free_.end() && !it->second.empty()) {
        const auto addr = it->second.back();
        it->second.pop_back();
        return addr;
    }
    if (bump_ + need <= layout_.capacity()) {
        const auto addr = bump_;
        bump_ += need;
        return addr;
    }
    for (auto it = free_.lower_bound(need); it != free_.end(); ++it) {
        if (it->second.empty()) continue;
        const auto addr = it->second.back();
        it->second.pop_back();
        if (it->first > need) free_[it->first - need].push_back(addr + need);
        return addr;
    }
    return std::nullopt;
}

void BaselineServer::release(std::uint64_t addr) {
    if (auto len = header_length(dev_.view(addr, kObjectHeaderSize))) free_[align_up(*len, kBlock)].push_back(addr);
}

void BaselineServer::persist_cursor() { dev_.store_atomic(BaselineLayout::kCursorAddr, apply_seq_); }

bool BaselineServer::apply(ByteView object, bool account) {
    auto rec = decode_unchecked(object);
    if (!rec) return false;
    const std::size_t n = rec->key.size() + rec->value.size();
    auto entry = index_.lookup(rec->key);
    if (rec->is_delete) {
        if (!entry) return true;
        const std::uint64_t old = entry->word;
        index_.remove(rec->key, account ? rec->key.size() + kPaperBaselineEntry : 0);
        dev_.flush();
        release(old);
        return true;
    }
    // Out of place, so a crash mid-apply leaves the previous version intact
    // for the replay.
    auto addr = allocate(object.size());
    if (!addr) return false;
    dev_.store(*addr, object, false, account ? n : 0);
    dev_.flush();
    if (entry) {
        index_.update_atomic(entry->addr, *addr);
        dev_.flush();
        release(entry->word);
        return true;
    }
    try {
        index_.insert(rec->key, 0, *addr, account ? rec->key.size() + kPaperBaselineEntry : 0);
    } catch (const TableFull&) {
        release(*addr);
        return false;
    }
    dev_.flush();
    return true;
}

void BaselineServer::set_apply_paused(bool paused) {
    apply_paused_ = paused;
    kick_apply();
}

void BaselineServer::kick_apply() {
    if (apply_queued_ || apply_paused_ || poll_scheduled_) return;
    if (!pending_.count(apply_seq_)) return;
    apply_queued_ = true;
    cpu_->submit([this](CpuQueue::Context& ctx) {
        apply_queued_ = false;
        if (apply_paused_) return;
        auto it = pending_.find(apply_seq_);
        if (it == pending_.end()) return;
        const auto& cost = fab_.cost();
        const std::uint64_t seq = apply_seq_;
        if (it->second.state == SlotState::reserved) {
            // RAW: poll the slot header until the client's write shows up.
            ctx.charge(cost.server_cpu_op_ns);
            if (!slot_landed(seq, it->second.key)) {
                poll_scheduled_ = true;
                sched_.after(cost.rtt_ns, [this, life = life_] {
                    if (!*life) return;
                    poll_scheduled_ = false;
                    kick_apply();
                });
                return;
            }
            mark_written(seq, it->second);
        }
        ctx.charge(cost.server_cpu_op_ns + cost.nvm_write_extra_ns);
        if (it->second.state == SlotState::written) {
            auto obj = parse_slot(dev_.view(layout_.slot_addr(seq), layout_.slot_size()), seq);
            if (!obj || !apply(*obj, true)) counters_.apply_failures++;
            counters_.applied++;
        }
        if (auto s = shadow_.find(it->second.key); s != shadow_.end() && s->second == seq) shadow_.erase(s);
        pending_.erase(it);
        apply_seq_ = seq + 1;
        persist_cursor();
        dev_.flush();
        ctx.at_end([this] { kick_apply(); });
    });
}

bool BaselineServer::slot_landed(std::uint64_t seq, ByteView key) const {
    auto obj = parse_slot(dev_.view(layout_.slot_addr(seq), layout_.slot_size()), seq);
    auto rec = obj ? decode_unchecked(*obj) : std::nullopt;
    return rec && std::equal(rec->key.begin(), rec->key.end(), key.begin(), key.end());
}

void BaselineServer::mark_written(std::uint64_t seq, Pending& p) {
    p.state = SlotState::written;
    if (auto s = shadow_.find(p.key); s == shadow_.end() || s->second < seq) shadow_[p.key] = seq;
    counters_.logged++;
}

std::optional<ObjectRecord> BaselineServer::latest(ByteView key, bool* from_log) const {
    const Bytes k(key.begin(), key.end());
    // A RAW write is acknowledged once it is in NVM, possibly before the
    // apply loop has noticed it.
    for (auto it = pending_.rbegin(); it != pending_.rend(); ++it) {
        if (it->second.state != SlotState::reserved || it->second.key != k) continue;
        if (auto obj = parse_slot(dev_.view(layout_.slot_addr(it->first), layout_.slot_size()), it->first)) {
            if (auto s = shadow_.find(k); s == shadow_.end() || s->second < it->first) {
                if (from_log) *from_log = true;
                return decode_unchecked(*obj);
            }
        }
    }
    if (auto s = shadow_.find(k); s != shadow_.end()) {
        auto obj = parse_slot(dev_.view(layout_.slot_addr(s->second), layout_.slot_size()), s->second);
        if (obj) {
            if (from_log) *from_log = true;
            return decode_unchecked(*obj);
        }
    }
    auto e = index_.lookup(key);
    if (!e) return std::nullopt;
    auto len = header_length(dev_.view(e->word, kObjectHeaderSize));
    if (!len) return std::nullopt;
    return verify_object(dev_.view(e->word, *len));
}

std::optional<Bytes> BaselineServer::value_of(ByteView key) const {
    auto rec = latest(key);
    if (!rec || rec->is_delete) return std::nullopt;
    return rec->value;
}

void BaselineServer::on_doorbell() {
    for (auto& m : fab_.poll(ep_)) {
        cpu_->submit([this, m = std::move(m)](CpuQueue::Context& ctx) { handle(ctx, m); });
    }
}

void BaselineServer::reply(CpuQueue::Context& ctx, EndpointId to, Bytes payload) {
    ctx.at_end([this, to, payload = std::move(payload)]() mutable { fab_.send(ep_, to, std::move(payload)); });
}

void BaselineServer::handle(CpuQueue::Context& ctx, const Message& m) {
    const auto& cost = fab_.cost();
    ctx.charge(cost.two_sided_overhead_ns + cost.server_cpu_op_ns);
    ctx.at_end([this] { dev_.flush(); });
    if (m.payload.empty()) return;
    Reader in(m.payload);
    try {
        const auto op = in.le<std::uint8_t>();
        switch (op) {
            case msg::kPut:
            case msg::kDelete: handle_log_write(ctx, m, in, op); break;
            case msg::kSlotReq: handle_slot_request(ctx, m, in); break;
            case msg::kRead: handle_read(ctx, m, in); break;
            case msg::kConnect: handle_connect(ctx, m); break;
            default: break;
        }
    } catch (const std::out_of_range&) {
        reply(ctx, m.src, write_resp(Reply::error));
    }
}

void BaselineServer::handle_connect(CpuQueue::Context& ctx, const Message& m) {
    Bytes out{msg::kConnectResp};
    append_le<std::uint32_t>(out, next_client_id_++);
    append_le<std::uint32_t>(out, ring_rkey_);
    append_le<std::uint32_t>(out, layout_.config().max_object_size);
    reply(ctx, m.src, std::move(out));
}

void BaselineServer::handle_log_write(CpuQueue::Context& ctx, const Message& m, Reader& in, std::uint8_t op) {
    const auto klen = in.le<std::uint8_t>();
    const Bytes key = in.take(klen);
    const auto size = in.le<std::uint32_t>();
    const Bytes object = in.take(size);
    auto rec = verify_object(object);
    if (layout_.scheme() != Scheme::redo || !rec || rec->key != key || rec->is_delete != (op == msg::kDelete) ||
        object.size() > layout_.config().max_object_size) {
        reply(ctx, m.src, write_resp(Reply::error));
        return;
    }
    if (rec->is_delete) {
        auto cur = latest(key);
        if (!cur || cur->is_delete) {
            reply(ctx, m.src, write_resp(Reply::not_found));
            return;
        }
    }
    if (ring_full()) {
        counters_.busy_replies++;
        reply(ctx, m.src, write_resp(Reply::busy));
        return;
    }
    ctx.charge(fab_.cost().nvm_write_extra_ns);
    const std::uint64_t seq = next_seq_++;
    const std::size_t paper = rec->is_delete ? 0 : kPaperLogOverhead + key.size() + rec->value.size();
    dev_.store(layout_.slot_addr(seq), encode_slot(seq, object), false, paper);
    pending_[seq] = Pending{SlotState::written, key};
    shadow_[key] = seq;
    counters_.logged++;
    reply(ctx, m.src, write_resp(Reply::ok));
    ctx.at_end([this] { kick_apply(); });
}

void BaselineServer::handle_slot_request(CpuQueue::Context& ctx, const Message& m, Reader& in) {
    const auto op = in.le<std::uint8_t>();
    const auto klen = in.le<std::uint8_t>();
    const Bytes key = in.take(klen);
    const auto size = in.le<std::uint32_t>();
    auto resp = [&](Reply r, std::uint64_t seq = 0, std::uint64_t addr = 0) {
        Bytes out{msg::kSlotResp, static_cast<std::uint8_t>(r)};
        append_le<std::uint64_t>(out, seq);
        append_le<std::uint64_t>(out, addr);
        append_le<std::uint32_t>(out, ring_rkey_);
        reply(ctx, m.src, std::move(out));
    };
    if (layout_.scheme() != Scheme::raw || size + kSlotHeaderSize > layout_.slot_size()) {
        resp(Reply::error);
        return;
    }
    if (op == msg::kDelete) {
        auto cur = latest(key);
        if (!cur || cur->is_delete) {
            resp(Reply::not_found);
            return;
        }
    }
    if (ring_full()) {
        counters_.busy_replies++;
        resp(Reply::busy);
        return;
    }
    const std::uint64_t seq = next_seq_++;
    pending_[seq] = Pending{SlotState::reserved, key};
    resp(Reply::ok, seq, layout_.slot_addr(seq));
    const SimTime timeout = SimTime{layout_.config().abandon_rtts} * fab_.cost().rtt_ns;
    sched_.after(timeout, [this, seq, life = life_] {
        if (!*life) return;
        auto it = pending_.find(seq);
        if (it == pending_.end() || it->second.state != SlotState::reserved) return;
        if (slot_landed(seq, it->second.key)) {
            mark_written(seq, it->second);
        } else {
            it->second.state = SlotState::abandoned;
            counters_.abandoned_slots++;
        }
        kick_apply();
    });
}

void BaselineServer::handle_read(CpuQueue::Context& ctx, const Message& m, Reader& in) {
    const auto klen = in.le<std::uint8_t>();
    const Bytes key = in.take(klen);
    bool from_log = false;
    auto rec = latest(key, &from_log);
    if (from_log) counters_.log_hits++;
    if (!rec || rec->is_delete) {
        reply(ctx, m.src, read_resp(Reply::not_found));
        return;
    }
    reply(ctx, m.src, read_resp(Reply::ok, rec->value));
}

// ---------------------------------------------------------------------------
// Client

BaselineClient::BaselineClient(Fabric& fab, EndpointId self, EndpointId server, Scheme scheme)
    : fab_(fab), self_(self), server_(server), scheme_(scheme) {
    if (scheme == Scheme::erda) throw ContractViolation("baseline client needs redo or raw");
    token_ = fab_.liveness(self_);
    fab_.set_message_handler(self_, [this](Message m) { replies_.deliver(std::move(m)); });
}

BaselineClient::~BaselineClient() {
    if (fab_.liveness(self_) == token_) fab_.set_message_handler(self_, nullptr);
}

Task<Message> BaselineClient::rpc(Bytes payload) {
    auto reply = replies_.expect();
    if (fab_.send(self_, server_, std::move(payload)) != Status::ok) {
        replies_.deliver(Message{});
        lost_ = true;
    }
    co_return co_await reply;
}

Task<bool> BaselineClient::connect() {
    Message m = co_await rpc(Bytes{msg::kConnect});
    if (m.payload.size() < 13 || m.payload[0] != msg::kConnectResp) co_return false;
    ring_rkey_ = load_le<std::uint32_t>(m.payload.data() + 5);
    max_object_ = load_le<std::uint32_t>(m.payload.data() + 9);
    lost_ = false;
    co_return true;
}

Task<GetResult> BaselineClient::get(Bytes key) {
    counters_.gets++;
    counters_.last_get_reads = 0;
    if (lost_) co_return GetResult{GetStatus::disconnected, {}};
    Bytes req{msg::kRead, static_cast<std::uint8_t>(key.size())};
    append(req, key);
    Message m = co_await rpc(std::move(req));
    if (m.payload.size() < 6 || m.payload[0] != msg::kReadResp) co_return GetResult{GetStatus::disconnected, {}};
    if (static_cast<Reply>(m.payload[1]) != Reply::ok) co_return GetResult{GetStatus::not_found, {}};
    const std::size_t vlen = load_le<std::uint32_t>(m.payload.data() + 2);
    if (m.payload.size() < 6 + vlen) co_return GetResult{GetStatus::disconnected, {}};
    co_return GetResult{GetStatus::ok, Bytes(m.payload.begin() + 6, m.payload.begin() + 6 + vlen)};
}

Task<WriteStatus> BaselineClient::put(Bytes key, Bytes value) {
    counters_.puts++;
    return write(std::move(key), std::move(value));
}

Task<WriteStatus> BaselineClient::remove(Bytes key) {
    counters_.deletes++;
    return write(std::move(key), std::nullopt);
}

Task<WriteStatus> BaselineClient::write(Bytes key, std::optional<Bytes> value) {
    if (lost_) co_return WriteStatus::disconnected;
    if (key.empty() || key.size() > kMaxInlineKey) co_return WriteStatus::protocol_error;
    const std::uint8_t op = value ? msg::kPut : msg::kDelete;
    const Bytes object = value ? encode_object(key, ByteView(*value)) : encode_delete(key);
    if (object.size() > max_object_) co_return WriteStatus::protocol_error;
    const std::size_t paper = value ? kPaperLogOverhead + key.size() + value->size() : 0;
    while (true) {
        const WriteStatus st = scheme_ == Scheme::redo ? co_await write_redo(key, object, op)
                                                       : co_await write_raw(key, object, op, paper);
        if (st != WriteStatus::full) co_return st;
        // The log is full until the server applies; back off one round trip.
        counters_.busy_retries++;
        if (!co_await fab_.sleep(self_, fab_.cost().rtt_ns)) co_return WriteStatus::disconnected;
    }
}

Task<WriteStatus> BaselineClient::write_redo(const Bytes& key, const Bytes& object, std::uint8_t op) {
    Bytes req{op, static_cast<std::uint8_t>(key.size())};
    append(req, key);
    append_le<std::uint32_t>(req, static_cast<std::uint32_t>(object.size()));
    append(req, object);
    Message m = co_await rpc(std::move(req));
    if (m.payload.empty()) co_return WriteStatus::disconnected;
    if (m.payload.size() < 2 || m.payload[0] != msg::kWriteResp) co_return WriteStatus::protocol_error;
    switch (static_cast<Reply>(m.payload[1])) {
        case Reply::ok: co_return WriteStatus::ok;
        case Reply::not_found: co_return WriteStatus::not_found;
        case Reply::busy: co_return WriteStatus::full;
        default: co_return WriteStatus::protocol_error;
    }
}

Task<WriteStatus> BaselineClient::write_raw(const Bytes& key, const Bytes& object, std::uint8_t op,
                                            std::size_t paper) {
    Bytes req{msg::kSlotReq, op, static_cast<std::uint8_t>(key.size())};
    append(req, key);
    append_le<std::uint32_t>(req, static_cast<std::uint32_t>(object.size()));
    Message m = co_await rpc(std::move(req));
    if (m.payload.empty()) co_return WriteStatus::disconnected;
    if (m.payload.size() < 22 || m.payload[0] != msg::kSlotResp) co_return WriteStatus::protocol_error;
    switch (static_cast<Reply>(m.payload[1])) {
        case Reply::ok: break;
        case Reply::not_found: co_return WriteStatus::not_found;
        case Reply::busy: co_return WriteStatus::full;
        default: co_return WriteStatus::protocol_error;
    }
    const std::uint64_t seq = load_le<std::uint64_t>(m.payload.data() + 2);
    const std::uint64_t addr = load_le<std::uint64_t>(m.payload.data() + 10);
    const std::uint32_t rkey = load_le<std::uint32_t>(m.payload.data() + 18);
    auto ack = fab_.write(self_, server_, rkey, addr, encode_slot(seq, object), paper);
    // The read trails the write on the same connection and returns only once
    // the slot is in NVM.
    auto forced = fab_.read(self_, server_, rkey, addr, 8);
    const ReadResult r = co_await std::move(forced);
    const WriteAck a = co_await std::move(ack);
    if (r.status != Status::ok || a.status != Status::ok) {
        lost_ = r.status == Status::disconnected || a.status == Status::disconnected;
        co_return lost_ ? WriteStatus::disconnected : WriteStatus::protocol_error;
    }
    co_return WriteStatus::ok;
}

}  // namespace erda
