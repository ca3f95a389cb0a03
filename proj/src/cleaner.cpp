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

#include "erda/cleaner.hpp"

#include <algorithm>
#include <utility>

namespace erda {

namespace {

std::vector<HashEntry> entries_of(HopscotchIndex& index, std::uint32_t h) {
    std::vector<HashEntry> out;
    index.for_each_live([&](const HashEntry& e) {
        if (e.head_id == h) out.push_back(e);
    });
    return out;
}

/// Valid records of chain positions [from, to), segment by segment.
std::vector<ScannedRecord> scan_range(const NvmDevice& dev, const ErdaLayout& layout,
                                      const std::vector<std::uint16_t>& regions, std::uint64_t from,
                                      std::uint64_t to) {
    const auto& cfg = layout.config();
    std::vector<ScannedRecord> out;
    for (std::uint64_t seg = from / cfg.segment_size * cfg.segment_size; seg < to; seg += cfg.segment_size) {
        const std::uint64_t idx = seg / cfg.region_size;
        if (idx >= regions.size()) break;
        const std::uint64_t lo = std::max(from, seg);
        const std::uint64_t hi = std::min(to, seg + cfg.segment_size);
        auto found = scan_records(dev.view(layout.region_addr(regions[idx]) + lo % cfg.region_size, hi - lo), lo);
        out.insert(out.end(), found.begin(), found.end());
    }
    return out;
}

}  // namespace

Cleaner::Cleaner(ErdaServer& server, std::uint32_t head) : s_(server), head_(head) {}

Cleaner::~Cleaner() { *life_ = false; }

bool Cleaner::start() {
    auto& hd = s_.heads_[head_];
    if (hd.phase != HeadPhase::normal || s_.free_regions_.empty()) return false;
    active_ = hd.active;
    target_ = 1 - active_;
    try {
        s_.link_region(head_, target_);
    } catch (const ErdaServer::ChainFull&) {
        return false;
    }
    hd.phase = HeadPhase::merging;
    hd.reserved_end = 0;
    s_.persist_reserved(head_);
    s_.persist_head_word(head_);
    s_.dev_.flush();

    stats_ = CleanStats{};
    stats_.head = head_;
    stats_.started_at = s_.sched_.now();
    snapshot_ = hd.chains[active_].cursor;
    s_.broadcast(s_.head_array_message(msg::kCleanStart, head_));

    // Writes granted before the notification may still be on the wire.
    const auto& cost = s_.fab_.cost();
    stage_ = Stage::prepass;
    schedule(cost.max_rtt(s_.layout_.config().max_object_size) + cost.two_sided_overhead_ns +
             cost.server_cpu_op_ns);
    return true;
}

void Cleaner::schedule(SimTime delay) {
    s_.sched_.after(delay, [this, life = life_, ep = s_.ep_token_] {
        if (!*life || !*ep) return;
        s_.cpu_->submit([this](CpuQueue::Context& ctx) { step(ctx); });
    });
}

void Cleaner::step(CpuQueue::Context& ctx) {
    ctx.charge(s_.fab_.cost().server_cpu_op_ns);
    ctx.at_end([this] { s_.dev_.flush(); });
    switch (stage_) {
        case Stage::prepass: prepass(ctx); break;
        case Stage::merge_scan: merge_scan(ctx); break;
        case Stage::merge: merge(ctx); break;
        case Stage::replicate_plan: replicate_plan(ctx); break;
        case Stage::replicate: replicate(ctx); break;
        case Stage::finish: finish(ctx); break;
        case Stage::idle:
        case Stage::done: return;
    }
    if (stage_ != Stage::done) ctx.at_end([this] { schedule(std::exchange(delay_, 0)); });
}

void Cleaner::prepass(CpuQueue::Context&) {
    // Let one-sided writes granted before the notification land first.
    if (s_.grants_pending(head_)) {
        delay_ = s_.fab_.cost().rtt_ns;
        return;
    }
    // A torn newest version would otherwise make the key invisible to merging.
    RecoveryReport scratch;
    for (const auto& e : entries_of(s_.index_, head_)) s_.repair_entry_locally(e, scratch);
    stage_ = Stage::merge_scan;
}

void Cleaner::merge_scan(CpuQueue::Context&) {
    const auto& regions = s_.heads_[head_].chains[active_].regions;
    for (const auto& r : scan_range(s_.dev_, s_.layout_, regions, 0, snapshot_))
        merge_offsets_.push_back(make_offset(active_, static_cast<std::uint32_t>(r.pos)));
    merge_next_ = 0;
    stage_ = Stage::merge;
}

void Cleaner::copy(std::uint32_t from, std::uint32_t to, const ObjectRecord& rec, std::size_t size) {
    Bytes raw = s_.dev_.read(*s_.translate(head_, from), size);
    s_.dev_.store(*s_.translate(head_, to), raw, false, rec.paper_size());
    s_.dev_.flush();
    stats_.copied_bytes += size;
}

void Cleaner::merge(CpuQueue::Context& ctx) {
    const auto& cost = s_.fab_.cost();
    for (std::uint32_t n = 0; n < s_.layout_.config().clean_batch && merge_next_ < merge_offsets_.size(); ++n) {
        // Reverse order: the newest record of a key is met first.
        const std::uint32_t off = merge_offsets_[merge_offsets_.size() - 1 - merge_next_++];
        auto rec = s_.record_at(head_, off);
        if (!rec || rec->is_delete) continue;
        auto e = s_.index_.lookup(rec->key);
        if (!e || e->head_id != head_) continue;
        const auto r = unpack_atomic(e->word);
        if (r.new_offset() != off) continue;  // stale version
        const std::size_t size = rec->encoded_size();
        const std::uint32_t to = s_.allocate(head_, target_, size);
        copy(off, to, *rec, size);
        s_.index_.update_atomic(e->addr, pack_atomic(r.new_tag, off, to), 4);
        ctx.charge(cost.nvm_write_extra_ns);
    }
    if (merge_next_ == merge_offsets_.size()) stage_ = Stage::replicate_plan;
}

void Cleaner::replicate_plan(CpuQueue::Context&) {
    auto& hd = s_.heads_[head_];
    const std::uint64_t end = hd.chains[active_].cursor;
    const auto& regions = hd.chains[active_].regions;
    stats_.region1_record_bytes = 0;
    for (const auto& r : scan_range(s_.dev_, s_.layout_, regions, 0, end)) stats_.region1_record_bytes += r.size;

    for (const auto& r : scan_range(s_.dev_, s_.layout_, regions, snapshot_, end)) {
        const std::uint32_t off = make_offset(active_, static_cast<std::uint32_t>(r.pos));
        auto rec = s_.record_at(head_, off);
        if (!rec) continue;
        auto e = s_.index_.lookup(rec->key);
        if (!e || e->head_id != head_) continue;
        const auto w = unpack_atomic(e->word);
        if (w.new_offset() != off) continue;
        if (rec->is_delete) {
            // Drop an earlier merge copy so finish removes the key.
            if (chain_of(w.old_offset()) == target_)
                s_.index_.update_atomic(e->addr, pack_atomic(w.new_tag, off, off));
            continue;
        }
        plan_.push_back({rec->key, off, s_.allocate(head_, target_, r.size)});
    }
    // The reserved region ends where the planned replicas end; client writes
    // from now on land after it.
    hd.reserved_end = static_cast<std::uint32_t>(hd.chains[target_].cursor);
    s_.persist_reserved(head_);
    s_.dev_.flush();
    hd.phase = HeadPhase::replicating;
    s_.persist_head_word(head_);
    s_.dev_.flush();
    plan_next_ = 0;
    stage_ = Stage::replicate;
}

void Cleaner::replicate(CpuQueue::Context& ctx) {
    const auto& hd = s_.heads_[head_];
    const auto& cost = s_.fab_.cost();
    for (std::uint32_t n = 0; n < s_.layout_.config().clean_batch && plan_next_ < plan_.size(); ++n) {
        const auto& p = plan_[plan_next_++];
        auto e = s_.index_.lookup(p.key);
        if (!e) continue;
        const auto w = unpack_atomic(e->word);
        if (w.new_offset() != p.from) continue;
        if (chain_of(w.old_offset()) == target_ && chain_pos(w.old_offset()) >= hd.reserved_end) {
            stats_.skipped_replicas++;  // a client already wrote a newer version into Region 2
            continue;
        }
        auto rec = s_.record_at(head_, p.from);
        if (!rec) continue;
        copy(p.from, p.to, *rec, rec->encoded_size());
        s_.index_.update_atomic(e->addr, pack_atomic(w.new_tag, p.from, p.to), 4);
        ctx.charge(cost.nvm_write_extra_ns);
    }
    if (plan_next_ == plan_.size()) stage_ = Stage::finish;
}

void Cleaner::finish(CpuQueue::Context& ctx) {
    auto& hd = s_.heads_[head_];
    hd.active = static_cast<std::uint8_t>(target_);
    hd.phase = HeadPhase::finishing;
    s_.persist_head_word(head_);
    s_.dev_.flush();
    complete(s_, head_, nullptr);
    ctx.charge(s_.fab_.cost().nvm_write_extra_ns);

    stats_.region2_live_bytes = 0;
    for (const auto& e : entries_of(s_.index_, head_))
        if (auto rec = s_.record_at(head_, unpack_atomic(e.word).new_offset()))
            stats_.region2_live_bytes += rec->encoded_size();
    stats_.finished_at = s_.sched_.now();
    s_.clean_stats_[head_] = stats_;
    s_.counters_.cleanings_completed++;
    s_.broadcast(s_.head_array_message(msg::kCleanFinish, head_));
    stage_ = Stage::done;
}

void Cleaner::complete(ErdaServer& s, std::uint32_t h, RecoveryReport* rep) {
    auto& hd = s.heads_[h];
    const std::uint32_t nc = hd.active;
    for (const auto& e : entries_of(s.index_, h)) {
        const auto r = unpack_atomic(e.word);
        const std::uint32_t t = r.new_offset();
        const std::uint32_t o = r.old_offset();
        std::optional<std::uint64_t> word;
        if (chain_of(t) == nc) {
            auto rec = s.record_at(h, t);
            if (rec && !rec->is_delete) {
                if (o != t) word = pack_atomic(r.new_tag, t, t);
            } else {
                s.index_.remove(e.key);
                if (rep) rep->removed_keys.push_back(e.key);
                continue;
            }
        } else if (chain_of(o) == nc) {
            auto rec = s.record_at(h, o);
            if (rec && !rec->is_delete) {
                word = pack_atomic(!r.new_tag, o, o);
            } else {
                s.index_.remove(e.key);
                if (rep) rep->removed_keys.push_back(e.key);
                continue;
            }
        } else {
            // Latest version was a delete marker, never copied.
            s.index_.remove(e.key);
            if (rep) rep->removed_keys.push_back(e.key);
            continue;
        }
        if (word) {
            s.index_.update_atomic(e.addr, *word, 4);
            if (rep) rep->atomic_stores++;
        }
    }
    s.dev_.flush();
    s.release_chain(h, 1 - nc);
    hd.phase = HeadPhase::normal;
    hd.reserved_end = 0;
    s.persist_reserved(h);
    s.persist_head_word(h);
    s.dev_.flush();
    if (rep) rep->cleanings_completed++;
}

void Cleaner::abort(ErdaServer& s, std::uint32_t h, RecoveryReport& rep) {
    auto& hd = s.heads_[h];
    const std::uint32_t a = hd.active;
    const std::uint32_t tg = 1 - a;
    const bool replicating = hd.phase == HeadPhase::replicating;

    auto salvage = [&](std::uint32_t from, const ObjectRecord& rec) {
        const std::size_t size = rec.encoded_size();
        std::uint32_t to = 0;
        try {
            to = s.allocate(h, a, size);
        } catch (const ErdaServer::ChainFull&) {
            throw DeviceFault("no room to salvage records of an aborted cleaning");
        }
        Bytes raw = s.dev_.read(*s.translate(h, from), size);
        s.dev_.store(*s.translate(h, to), raw);
        s.dev_.flush();
        rep.salvaged_keys.push_back(rec.key);
        return to;
    };

    for (const auto& e : entries_of(s.index_, h)) {
        const auto r = unpack_atomic(e.word);
        const std::uint32_t t = r.new_offset();
        const std::uint32_t o = r.old_offset();
        std::uint64_t word = e.word;
        if (chain_of(t) == tg) {
            // Created while replicating; only Region 2 holds it.
            auto rec = s.record_at(h, t);
            if (!rec) {
                s.index_.remove(e.key);
                rep.removed_keys.push_back(e.key);
                continue;
            }
            const std::uint32_t to = salvage(t, *rec);
            word = pack_atomic(r.new_tag, to, to);
        } else if (chain_of(o) == tg) {
            auto rec = replicating && chain_pos(o) >= hd.reserved_end ? s.record_at(h, o) : std::nullopt;
            word = rec ? pack_atomic(r.new_tag, salvage(o, *rec), t) : pack_atomic(r.new_tag, t, t);
        }
        if (word != e.word) {
            s.index_.update_atomic(e.addr, word);
            rep.atomic_stores++;
        }
    }
    s.dev_.flush();
    s.release_chain(h, tg);
    hd.phase = HeadPhase::normal;
    hd.reserved_end = 0;
    s.persist_reserved(h);
    s.persist_head_word(h);
    s.dev_.flush();
    rep.cleanings_aborted++;
}

}  // namespace erda
