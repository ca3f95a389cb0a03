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

#include <algorithm>

#include "erda/cleaner.hpp"
#include "erda/erda.hpp"

namespace erda {

namespace {

std::uint64_t head_word(std::uint8_t active, HeadPhase phase) {
    return std::uint64_t{active} | (std::uint64_t{static_cast<std::uint8_t>(phase)} << 1);
}

}  // namespace

ErdaServer::ErdaServer(Fabric& fab, EndpointId ep, NvmDevice& dev, ErdaLayout layout)
    : fab_(fab), sched_(fab.scheduler()), ep_(ep), dev_(dev), layout_(layout), index_(dev, layout.table()) {
    if (dev_.capacity() < layout_.capacity()) throw ContractViolation("device smaller than layout");
    heads_.resize(layout_.config().heads);
}

ErdaServer::~ErdaServer() {
    *life_ = false;
    if (ep_token_ && fab_.liveness(ep_) == ep_token_) fab_.set_doorbell(ep_, nullptr);
}

bool ErdaServer::live() const { return *life_ && ep_token_ && *ep_token_; }

std::unique_ptr<ErdaServer> ErdaServer::format(Fabric& fab, EndpointId ep, NvmDevice& dev, const ErdaConfig& cfg) {
    std::unique_ptr<ErdaServer> s(new ErdaServer(fab, ep, dev, ErdaLayout(cfg)));
    s->do_format();
    s->start_serving();
    return s;
}

std::unique_ptr<ErdaServer> ErdaServer::recover(Fabric& fab, EndpointId ep, NvmDevice& dev) {
    const ErdaConfig cfg = ErdaLayout::read_superblock(dev);
    std::unique_ptr<ErdaServer> s(new ErdaServer(fab, ep, dev, ErdaLayout(cfg)));
    s->do_recover();
    s->start_serving();
    return s;
}

void ErdaServer::start_serving() {
    ep_token_ = fab_.liveness(ep_);
    cpu_ = std::make_unique<CpuQueue>(sched_, [life = life_, ep = ep_token_] { return *life && *ep; });
    fab_.set_doorbell(ep_, [this] { on_doorbell(); });
}

bool ErdaServer::cleaning_active() const { return cleaning_ && !cleaning_->done(); }

bool ErdaServer::background_busy() const { return cleaning_active() || (cpu_ && (cpu_->busy() || cpu_->backlog())); }

std::uint64_t ErdaServer::cursor(std::uint32_t h) const {
    const auto& hd = heads_.at(h);
    return hd.chains[hd.active].cursor;
}

// ---------------------------------------------------------------------------
// Head records and chains

void ErdaServer::persist_head_word(std::uint32_t h) {
    dev_.store_atomic(layout_.head_addr(h) + ErdaLayout::kHeadWord, head_word(heads_[h].active, heads_[h].phase));
}

void ErdaServer::persist_reserved(std::uint32_t h) {
    dev_.store_atomic(layout_.head_addr(h) + ErdaLayout::kHeadReserved, heads_[h].reserved_end);
}

void ErdaServer::persist_chain(std::uint32_t h, std::uint32_t chain) {
    const auto& c = heads_[h].chains[chain];
    const std::uint64_t at = layout_.chain_addr(h, chain);
    if (!c.regions.empty()) {
        Bytes ids;
        for (auto id : c.regions) append_le<std::uint16_t>(ids, id);
        dev_.store(at + 8, ids);
        dev_.flush();
    }
    dev_.store_atomic(at, c.regions.size());
    dev_.flush();
}

std::uint16_t ErdaServer::take_region() {
    if (free_regions_.empty()) throw ChainFull();
    auto it = std::min_element(free_regions_.begin(), free_regions_.end());
    const std::uint16_t id = *it;
    free_regions_.erase(it);
    return id;
}

void ErdaServer::link_region(std::uint32_t h, std::uint32_t chain) {
    auto& c = heads_[h].chains[chain];
    if (c.regions.size() >= layout_.config().max_chain) throw ChainFull();
    const std::uint16_t id = take_region();
    c.regions.push_back(id);
    c.rkeys.push_back(fab_.register_region(ep_, layout_.region_addr(id), layout_.config().region_size));
    persist_chain(h, chain);
    counters_.regions_linked++;
    broadcast(head_array_message(msg::kHeadArray));
}

void ErdaServer::release_chain(std::uint32_t h, std::uint32_t chain) {
    auto& c = heads_[h].chains[chain];
    // Zero first: a region handed out again must not contain parseable records.
    const Bytes zeros(layout_.config().region_size, 0);
    for (auto id : c.regions) dev_.store(layout_.region_addr(id), zeros);
    dev_.flush();
    for (auto rkey : c.rkeys) fab_.unregister_region(ep_, rkey);
    for (auto id : c.regions) free_regions_.push_back(id);
    c.regions.clear();
    c.rkeys.clear();
    c.cursor = 0;
    persist_chain(h, chain);
}

std::uint32_t ErdaServer::allocate(std::uint32_t h, std::uint32_t chain, std::size_t size) {
    const auto& cfg = layout_.config();
    if (size > cfg.max_object_size) throw ContractViolation("object larger than max_object_size");
    auto& c = heads_[h].chains[chain];
    std::uint64_t pos = c.cursor;
    const std::uint64_t seg_end = (pos / cfg.segment_size + 1) * cfg.segment_size;
    if (pos + size > seg_end) pos = seg_end;
    if (pos + size > layout_.chain_capacity()) throw ChainFull();
    while (pos + size > c.regions.size() * cfg.region_size) link_region(h, chain);
    c.cursor = pos + size;
    return make_offset(chain, static_cast<std::uint32_t>(pos));
}

std::optional<std::uint64_t> ErdaServer::translate(std::uint32_t h, std::uint32_t off) const {
    if (h >= heads_.size()) return std::nullopt;
    const auto& cfg = layout_.config();
    const auto& c = heads_[h].chains[chain_of(off)];
    const std::uint64_t pos = chain_pos(off);
    const std::uint64_t idx = pos / cfg.region_size;
    if (idx >= c.regions.size()) return std::nullopt;
    return layout_.region_addr(c.regions[idx]) + pos % cfg.region_size;
}

std::optional<ObjectRecord> ErdaServer::record_at(std::uint32_t h, std::uint32_t off) const {
    auto addr = translate(h, off);
    if (!addr) return std::nullopt;
    const auto& cfg = layout_.config();
    const std::uint64_t room = cfg.segment_size - chain_pos(off) % cfg.segment_size;
    auto view = dev_.view(*addr, std::min<std::uint64_t>(room, cfg.max_object_size));
    auto len = framed_length(view);
    if (!len) return std::nullopt;
    return verify_object(view.first(*len));
}

std::uint64_t ErdaServer::scan_chain_end(std::uint32_t h, std::uint32_t chain) const {
    const auto& cfg = layout_.config();
    const auto& c = heads_[h].chains[chain];
    std::uint64_t end = 0;
    for (std::size_t i = 0; i < c.regions.size(); ++i) {
        const std::uint64_t base = layout_.region_addr(c.regions[i]);
        for (std::uint64_t seg = 0; seg < cfg.region_size; seg += cfg.segment_size) {
            auto found = scan_records(dev_.view(base + seg, cfg.segment_size), i * cfg.region_size + seg);
            if (!found.empty()) end = std::max(end, found.back().pos + found.back().size);
        }
    }
    return end;
}

std::vector<HeadInfo> ErdaServer::head_array() const {
    std::vector<HeadInfo> out(heads_.size());
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        out[h].phase = heads_[h].phase;
        out[h].active = heads_[h].active;
        for (int c = 0; c < 2; ++c) {
            const auto& chain = heads_[h].chains[c];
            for (std::size_t i = 0; i < chain.regions.size(); ++i)
                out[h].chains[c].push_back({layout_.region_addr(chain.regions[i]), chain.rkeys[i]});
        }
    }
    return out;
}

Bytes ErdaServer::head_array_message(std::uint8_t type, std::optional<std::uint32_t> head) const {
    Bytes out{type};
    if (head) out.push_back(static_cast<std::uint8_t>(*head));
    encode_head_array(out, head_array());
    return out;
}

// ---------------------------------------------------------------------------
// Format and recovery

void ErdaServer::do_format() {
    layout_.write_superblock(dev_);
    table_rkey_ = fab_.register_region(ep_, layout_.table().base, layout_.table().bytes());
    for (std::uint32_t id = 0; id < layout_.config().region_count; ++id)
        free_regions_.push_back(static_cast<std::uint16_t>(id));
    for (std::uint32_t h = 0; h < heads_.size(); ++h) {
        persist_head_word(h);
        persist_reserved(h);
        link_region(h, 0);
    }
    dev_.flush();
}

bool ErdaServer::repair_entry_locally(const HashEntry& e, RecoveryReport& rep) {
    const auto r = unpack_atomic(e.word);
    if (record_at(e.head_id, r.new_offset())) return false;
    if (r.old_offset() == r.new_offset()) {
        index_.remove(e.key);
        rep.removed_keys.push_back(e.key);
        return true;
    }
    if (!record_at(e.head_id, r.old_offset())) {
        rep.lost_keys.push_back(e.key);  // reads report data loss
        return false;
    }
    index_.update_atomic(e.addr, pack_atomic(r.new_tag, r.old_offset(), r.old_offset()));
    rep.repaired_keys.push_back(e.key);
    rep.atomic_stores++;
    return true;
}

void ErdaServer::do_recover() {
    const auto& cfg = layout_.config();
    recovery_ = RecoveryReport{};
    recovery_.index_fixes = index_.recover();

    std::vector<bool> used(cfg.region_count, false);
    table_rkey_ = fab_.register_region(ep_, layout_.table().base, layout_.table().bytes());
    for (std::uint32_t h = 0; h < heads_.size(); ++h) {
        auto& hd = heads_[h];
        const std::uint64_t word = dev_.read_u64(layout_.head_addr(h) + ErdaLayout::kHeadWord);
        hd.active = word & 1;
        hd.phase = static_cast<HeadPhase>((word >> 1) & 3);
        hd.reserved_end = static_cast<std::uint32_t>(dev_.read_u64(layout_.head_addr(h) + ErdaLayout::kHeadReserved));
        for (std::uint32_t c = 0; c < 2; ++c) {
            const std::uint64_t at = layout_.chain_addr(h, c);
            const std::uint64_t count = dev_.read_u64(at);
            if (count > cfg.max_chain) throw DeviceFault("chain descriptor count out of range");
            for (std::uint64_t i = 0; i < count; ++i) {
                const auto id = load_le<std::uint16_t>(dev_.view(at + 8 + 2 * i, 2).data());
                if (id >= cfg.region_count || used[id]) throw DeviceFault("chain descriptor names a bad region");
                used[id] = true;
                hd.chains[c].regions.push_back(id);
                hd.chains[c].rkeys.push_back(fab_.register_region(ep_, layout_.region_addr(id), cfg.region_size));
            }
        }
        if (hd.chains[hd.active].regions.empty()) throw DeviceFault("active chain is empty");
    }
    for (std::uint32_t id = 0; id < cfg.region_count; ++id)
        if (!used[id]) free_regions_.push_back(static_cast<std::uint16_t>(id));

    for (std::uint32_t h = 0; h < heads_.size(); ++h)
        for (std::uint32_t c = 0; c < 2; ++c) heads_[h].chains[c].cursor = scan_chain_end(h, c);

    for (std::uint32_t h = 0; h < heads_.size(); ++h) {
        switch (heads_[h].phase) {
            case HeadPhase::normal:
                // Region 2 linked but the phase change never became durable.
                if (!heads_[h].chains[1 - heads_[h].active].regions.empty()) release_chain(h, 1 - heads_[h].active);
                break;
            case HeadPhase::merging:
            case HeadPhase::replicating: Cleaner::abort(*this, h, recovery_); break;
            case HeadPhase::finishing: Cleaner::complete(*this, h, &recovery_); break;
        }
    }

    std::vector<HashEntry> live;
    index_.for_each_live([&](const HashEntry& e) { live.push_back(e); });
    for (const auto& e : live) {
        if (e.head_id >= heads_.size()) {
            index_.remove(e.key);
            recovery_.removed_keys.push_back(e.key);
            continue;
        }
        repair_entry_locally(e, recovery_);
    }
    dev_.flush();
    for (std::uint32_t h = 0; h < heads_.size(); ++h) recovery_.cursors.push_back(cursor(h));
}

// ---------------------------------------------------------------------------
// Request handling

void ErdaServer::on_doorbell() {
    for (auto& m : fab_.poll(ep_)) {
        cpu_->submit([this, m = std::move(m)](CpuQueue::Context& ctx) { handle(ctx, m); });
    }
}

void ErdaServer::reply(CpuQueue::Context& ctx, EndpointId to, Bytes payload) {
    ctx.at_end([this, to, payload = std::move(payload)]() mutable { fab_.send(ep_, to, std::move(payload)); });
}

void ErdaServer::broadcast(Bytes payload) {
    for (auto c : clients_)
        if (fab_.connected(ep_, c)) fab_.send(ep_, c, payload);
}

void ErdaServer::handle(CpuQueue::Context& ctx, const Message& m) {
    const auto& cost = fab_.cost();
    ctx.charge(cost.two_sided_overhead_ns + cost.server_cpu_op_ns);
    ctx.at_end([this] { dev_.flush(); });
    if (m.payload.empty()) return;
    Reader in(m.payload);
    try {
        const auto op = in.le<std::uint8_t>();
        switch (op) {
            case msg::kPut:
            case msg::kDelete: handle_write(ctx, m, in, op); break;
            case msg::kRead: handle_read(ctx, m, in); break;
            case msg::kRepair: handle_repair(ctx, in); break;
            case msg::kConnect: handle_connect(ctx, m); break;
            case msg::kHeadArrayReq: reply(ctx, m.src, head_array_message(msg::kHeadArrayResp)); break;
            default: break;
        }
    } catch (const std::out_of_range&) {
        reply(ctx, m.src, Bytes{msg::kWriteResp, static_cast<std::uint8_t>(Reply::error), 0, 0, 0, 0, 0});
    }
}

void ErdaServer::handle_connect(CpuQueue::Context& ctx, const Message& m) {
    if (std::find(clients_.begin(), clients_.end(), m.src) == clients_.end()) clients_.push_back(m.src);
    const auto& cfg = layout_.config();
    Bytes out{msg::kConnectResp};
    append_le<std::uint32_t>(out, next_client_id_++);
    append_le<std::uint64_t>(out, layout_.table().base);
    append_le<std::uint32_t>(out, layout_.table().slots);
    append_le<std::uint32_t>(out, table_rkey_);
    append_le<std::uint32_t>(out, cfg.max_object_size);
    append_le<std::uint64_t>(out, cfg.region_size);
    append_le<std::uint64_t>(out, cfg.segment_size);
    encode_head_array(out, head_array());
    reply(ctx, m.src, std::move(out));
}

std::uint32_t ErdaServer::serving_offset(std::uint32_t h, const AtomicRegion& r) const {
    const auto& hd = heads_[h];
    if (hd.phase != HeadPhase::replicating) return r.new_offset();
    const std::uint32_t target = 1 - hd.active;
    if (chain_of(r.new_offset()) == target) return r.new_offset();
    if (chain_of(r.old_offset()) == target && chain_pos(r.old_offset()) >= hd.reserved_end) return r.old_offset();
    return r.new_offset();
}

void ErdaServer::publish(ByteView key, std::uint32_t h, std::uint32_t off, std::size_t object_size,
                         const std::optional<HashEntry>& entry) {
    const std::uint8_t hint = size_hint_for(object_size);
    const auto& hd = heads_[h];
    if (!entry) {
        index_.insert(key, static_cast<std::uint8_t>(h), pack_atomic(true, off, off), key.size() + 5, hint);
        return;
    }
    const auto r = unpack_atomic(entry->word);
    std::uint64_t word = 0;
    switch (hd.phase) {
        case HeadPhase::normal:
        case HeadPhase::finishing: word = flip_with(entry->word, off); break;
        case HeadPhase::merging: word = pack_atomic(r.new_tag, off, r.old_offset()); break;
        case HeadPhase::replicating:
            if (chain_of(r.new_offset()) == chain_of(off))
                word = pack_atomic(r.new_tag, off, off);
            else
                word = pack_atomic(r.new_tag, r.new_offset(), off);
            break;
    }
    index_.update_atomic(entry->addr, word, 4);
    if (hint != entry->size_hint) index_.set_size_hint(entry->addr, hint);
}

void ErdaServer::handle_write(CpuQueue::Context& ctx, const Message& m, Reader& in, std::uint8_t op) {
    const auto& cfg = layout_.config();
    const std::size_t klen = in.le<std::uint8_t>();
    const Bytes key = in.take(klen);
    const std::uint32_t size = in.le<std::uint32_t>();
    const bool two_sided = in.remaining() > 0;
    const Bytes object = two_sided ? in.take(in.remaining()) : Bytes{};

    auto respond = [&](Reply status, std::uint32_t h, std::uint32_t off) {
        Bytes out{msg::kWriteResp, static_cast<std::uint8_t>(status), static_cast<std::uint8_t>(h)};
        append_le<std::uint32_t>(out, off);
        reply(ctx, m.src, std::move(out));
    };

    if (klen == 0 || klen > kMaxInlineKey || size > cfg.max_object_size || size < kObjectHeaderSize + klen)
        return respond(Reply::error, 0, 0);
    if (two_sided) {
        auto rec = verify_object(object);
        if (!rec || object.size() != size || rec->key != key || rec->is_delete != (op == msg::kDelete))
            return respond(Reply::error, 0, 0);
    }
    const std::uint32_t h = head_of(key, cfg.heads);
    auto& hd = heads_[h];
    if (!two_sided && hd.phase != HeadPhase::normal) {
        counters_.redirects++;
        return respond(Reply::redirect, h, 0);
    }

    const auto entry = index_.lookup(key);
    if (op == msg::kDelete) {
        if (!entry) return respond(Reply::not_found, h, 0);
        auto latest = record_at(h, serving_offset(h, unpack_atomic(entry->word)));
        if (latest && latest->is_delete) return respond(Reply::not_found, h, 0);
    }

    const std::uint32_t chain = hd.phase == HeadPhase::replicating ? 1 - hd.active : hd.active;
    std::uint32_t off = 0;
    try {
        off = allocate(h, chain, size);
    } catch (const ChainFull&) {
        return respond(Reply::full, h, 0);
    }
    ctx.charge(fab_.cost().nvm_write_extra_ns);
    if (two_sided) {
        // The server writes the object itself, so it is durable before any
        // metadata names it.
        dev_.store(*translate(h, off), object, false, kPaperObjectOverhead + size - kObjectHeaderSize);
        dev_.flush();
        counters_.two_sided_writes++;
        if (hd.phase == HeadPhase::replicating && cleaning_) cleaning_->stats().client_region2_bytes += size;
    }
    try {
        publish(key, h, off, size, entry);
    } catch (const TableFull&) {
        return respond(Reply::full, h, 0);
    }
    counters_.writes_granted++;
    if (!two_sided) note_grant(h, off);
    respond(Reply::ok, h, off);
    maybe_clean(h);
}

void ErdaServer::handle_read(CpuQueue::Context& ctx, const Message& m, Reader& in) {
    const std::size_t klen = in.le<std::uint8_t>();
    const Bytes key = in.take(klen);
    counters_.two_sided_reads++;
    Bytes out{msg::kReadResp};
    std::optional<ObjectRecord> rec;
    if (auto e = index_.lookup(key)) {
        const auto r = unpack_atomic(e->word);
        const std::uint32_t off = serving_offset(e->head_id, r);
        rec = record_at(e->head_id, off);
        // The newest record may still be on the wire; serve the other slot.
        const std::uint32_t other = off == r.new_offset() ? r.old_offset() : r.new_offset();
        if (!rec && other != off) rec = record_at(e->head_id, other);
    }
    if (rec && !rec->is_delete) {
        out.push_back(static_cast<std::uint8_t>(Reply::ok));
        append_le<std::uint32_t>(out, static_cast<std::uint32_t>(rec->value.size()));
        append(out, rec->value);
    } else {
        out.push_back(static_cast<std::uint8_t>(Reply::not_found));
        append_le<std::uint32_t>(out, 0);
    }
    reply(ctx, m.src, std::move(out));
}

void ErdaServer::handle_repair(CpuQueue::Context& ctx, Reader& in) {
    const std::size_t klen = in.le<std::uint8_t>();
    const Bytes key = in.take(klen);
    const std::uint64_t observed = in.le<std::uint64_t>();
    auto e = index_.lookup(key);
    // A newer write replaced the word the client saw, or the record finished
    // landing after the client gave up: nothing to repair.
    // So is a record whose writer may still be on the wire.
    if (!e || e->word != observed || heads_[e->head_id].phase != HeadPhase::normal ||
        record_at(e->head_id, unpack_atomic(e->word).new_offset()) ||
        write_in_flight(e->head_id, unpack_atomic(e->word).new_offset())) {
        counters_.repairs_skipped++;
        return;
    }
    ctx.charge(fab_.cost().nvm_write_extra_ns);
    RecoveryReport scratch;
    if (repair_entry_locally(*e, scratch))
        counters_.repairs_applied++;
    else
        counters_.repairs_skipped++;
}

SimTime ErdaServer::grant_lease() const { return kGrantLeaseRtts * fab_.cost().rtt_ns; }

void ErdaServer::note_grant(std::uint32_t h, std::uint32_t off) {
    const SimTime now = sched_.now();
    if (grants_.size() >= 4096)
        std::erase_if(grants_, [&](const auto& g) { return now - g.second >= grant_lease(); });
    grants_[(std::uint64_t{h} << 32) | off] = now;
}

bool ErdaServer::write_in_flight(std::uint32_t h, std::uint32_t off) const {
    auto it = grants_.find((std::uint64_t{h} << 32) | off);
    return it != grants_.end() && sched_.now() - it->second < grant_lease();
}

bool ErdaServer::grants_pending(std::uint32_t h) const {
    for (auto it = grants_.lower_bound(std::uint64_t{h} << 32); it != grants_.end() && (it->first >> 32) == h; ++it) {
        const auto off = static_cast<std::uint32_t>(it->first);
        if (write_in_flight(h, off) && !record_at(h, off)) return true;
    }
    return false;
}

void ErdaServer::maybe_clean(std::uint32_t h) {
    const auto& cfg = layout_.config();
    if (!cfg.auto_clean || cleaning_active() || heads_[h].phase != HeadPhase::normal) return;
    if (static_cast<double>(cursor(h)) < cfg.clean_threshold * static_cast<double>(layout_.chain_capacity())) return;
    force_clean(h);
}

bool ErdaServer::force_clean(std::uint32_t h) {
    if (cleaning_active() || heads_.at(h).phase != HeadPhase::normal) return false;
    auto c = std::make_unique<Cleaner>(*this, h);
    if (!c->start()) return false;
    cleaning_ = std::move(c);
    counters_.cleanings_started++;
    return true;
}

}  // namespace erda
