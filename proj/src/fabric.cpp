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

#include "erda/fabric.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace erda {

std::string_view to_string(VerbKind k) {
    switch (k) {
        case VerbKind::rdma_read: return "rdma_read";
        case VerbKind::rdma_write: return "rdma_write";
        case VerbKind::rdma_write_with_imm: return "rdma_write_with_imm";
        case VerbKind::send: return "send";
        case VerbKind::recv_completion: return "recv_completion";
        case VerbKind::ack: return "ack";
    }
    return "?";
}

Fabric::Fabric(Scheduler& sched, CostModel cost) : sched_(sched), cost_(cost) {}

Fabric::~Fabric() {
    // Pending events hold liveness tokens; make sure none of them calls back.
    for (auto& e : eps_) *e.alive = false;
}

Fabric::Endpoint& Fabric::ep(EndpointId id) {
    if (id >= eps_.size()) throw std::out_of_range("unknown endpoint");
    return eps_[id];
}

const Fabric::Endpoint& Fabric::ep(EndpointId id) const {
    if (id >= eps_.size()) throw std::out_of_range("unknown endpoint");
    return eps_[id];
}

EndpointId Fabric::add_endpoint(std::string name, NvmDevice* nvm) {
    Endpoint e;
    e.name = std::move(name);
    e.nvm = nvm;
    e.alive = std::make_shared<bool>(true);
    eps_.push_back(std::move(e));
    return static_cast<EndpointId>(eps_.size() - 1);
}

void Fabric::restart_endpoint(EndpointId id, NvmDevice* nvm) {
    auto& e = ep(id);
    *e.alive = false;
    Endpoint fresh;
    fresh.name = e.name;
    fresh.nvm = nvm;
    fresh.alive = std::make_shared<bool>(true);
    e = std::move(fresh);
}

void Fabric::set_message_handler(EndpointId id, MessageHandler h) { ep(id).handler = std::move(h); }

void Fabric::set_doorbell(EndpointId id, std::function<void()> doorbell) { ep(id).doorbell = std::move(doorbell); }

std::uint32_t Fabric::register_region(EndpointId id, std::uint64_t base, std::uint64_t len) {
    auto& e = ep(id);
    if (e.nvm && base + len > e.nvm->capacity()) throw ContractViolation("registered region exceeds device");
    const std::uint32_t rkey = next_rkey_++;
    e.regions.emplace(rkey, Region{base, len});
    return rkey;
}

void Fabric::unregister_region(EndpointId id, std::uint32_t rkey) { ep(id).regions.erase(rkey); }

void Fabric::connect(EndpointId a, EndpointId b) {
    ep(a).peers.insert(b);
    ep(b).peers.insert(a);
}

bool Fabric::connected(EndpointId a, EndpointId b) const {
    return alive(a) && alive(b) && ep(a).peers.contains(b);
}

bool Fabric::alive(EndpointId id) const { return *ep(id).alive; }

std::shared_ptr<bool> Fabric::liveness(EndpointId id) const { return ep(id).alive; }

const EndpointStats& Fabric::stats(EndpointId id) const { return ep(id).stats; }

void Fabric::reset_stats() {
    for (auto& e : eps_) e.stats = EndpointStats{};
}

const std::string& Fabric::name(EndpointId id) const { return ep(id).name; }

SimTime Fabric::leg(EndpointId from, EndpointId to, std::size_t bytes) {
    SimTime t = sched_.now() + cost_.half_rtt() + cost_.per_byte_ns * bytes + sched_.jitter(cost_.jitter_ns);
    auto& last = last_arrival_[{from, to}];
    t = std::max(t, last);
    last = t;
    return t;
}

void Fabric::record(VerbKind kind, EndpointId src, EndpointId dst, std::uint64_t addr, std::size_t len,
                    std::uint32_t imm) {
    if (!trace_on_ && !trace_sink_) return;
    TraceEvent ev{sched_.now(), kind, src, dst, addr, len, imm};
    if (trace_on_) trace_.push_back(ev);
    if (trace_sink_) {
        nlohmann::json j = {{"time", ev.time}, {"verb", std::string(to_string(kind))},
                            {"src", src},      {"dst", dst},
                            {"addr", addr},    {"len", len},
                            {"imm", imm}};
        *trace_sink_ << j.dump() << '\n';
    }
}

bool Fabric::region_ok(const Endpoint& e, std::uint32_t rkey, std::uint64_t addr, std::size_t len) const {
    auto it = e.regions.find(rkey);
    if (it == e.regions.end()) return false;
    return addr >= it->second.base && addr + len <= it->second.base + it->second.len;
}

Future<ReadResult> Fabric::read(EndpointId src, EndpointId dst, std::uint32_t rkey, std::uint64_t addr,
                                std::size_t len) {
    if (!connected(src, dst)) return Future<ReadResult>::ready({Status::disconnected, {}});
    Future<ReadResult> fut;
    auto done = fut.resolver();
    ep(src).stats.reads_posted++;
    record(VerbKind::rdma_read, src, dst, addr, len, 0);
    auto src_alive = ep(src).alive;
    auto dst_alive = ep(dst).alive;
    sched_.at(leg(src, dst, 0), [=, this] {
        if (!*src_alive) return;
        if (!*dst_alive) {
            done({Status::disconnected, {}});
            return;
        }
        auto& target = ep(dst);
        if (!target.nvm || !region_ok(target, rkey, addr, len)) {
            sched_.at(leg(dst, src, 0), [=] {
                if (*src_alive) done({Status::remote_access_error, {}});
            });
            return;
        }
        // Earlier writes on this connection are pushed to NVM before the read
        // is served, so a read after a write doubles as a persistence barrier.
        bool forced = false;
        for (std::size_t i = 0; i < target.nic_cache.size();) {
            if (target.nic_cache[i].src == src) {
                drain_entry(dst, target.nic_cache[i].id);
                forced = true;
            } else {
                ++i;
            }
        }
        SimTime extra = 0;
        if (forced) {
            target.nvm->flush();
            extra = cost_.nvm_write_extra_ns;
        }
        Bytes data = target.nvm->read(addr, len);
        sched_.at(leg(dst, src, len) + extra, [=, data = std::move(data)]() mutable {
            if (*src_alive) done({Status::ok, std::move(data)});
        });
    });
    return fut;
}

Future<WriteAck> Fabric::write(EndpointId src, EndpointId dst, std::uint32_t rkey, std::uint64_t addr,
                               Bytes payload, std::size_t paper_bytes, std::optional<std::uint32_t> imm) {
    if (!connected(src, dst)) return Future<WriteAck>::ready({Status::disconnected});
    Future<WriteAck> fut;
    auto done = fut.resolver();
    auto& s = ep(src);
    if (imm)
        s.stats.writes_imm_posted++;
    else
        s.stats.writes_posted++;
    s.stats.bytes_posted += payload.size();
    record(imm ? VerbKind::rdma_write_with_imm : VerbKind::rdma_write, src, dst, addr, payload.size(),
           imm.value_or(0));

    const std::uint64_t id = next_write_id_++;
    inflight_writes_[id] = InflightWrite{src, dst, addr, payload.size(), false, {}};
    auto src_alive = s.alive;
    auto dst_alive = ep(dst).alive;
    const SimTime arrival = leg(src, dst, payload.size());
    sched_.at(arrival, [=, this, payload = std::move(payload)]() mutable {
        auto node = inflight_writes_.extract(id);
        if (!*dst_alive) {
            if (*src_alive) done({Status::disconnected});
            return;
        }
        auto& target = ep(dst);
        if (node && node.mapped().partial) {
            // The source died mid-transfer; only the pieces that made it land.
            for (auto& piece : node.mapped().pieces) {
                Bytes part(payload.begin() + static_cast<std::ptrdiff_t>(piece.offset),
                           payload.begin() + static_cast<std::ptrdiff_t>(piece.offset + piece.len));
                land_write(dst, NicEntry{next_write_id_++, src, addr + piece.offset, std::move(part), 0,
                                         std::nullopt});
            }
            return;
        }
        if (!target.nvm || !region_ok(target, rkey, addr, payload.size())) {
            sched_.at(leg(dst, src, 0), [=] {
                if (*src_alive) done({Status::remote_access_error});
            });
            return;
        }
        land_write(dst, NicEntry{id, src, addr, std::move(payload), paper_bytes, imm});
        record(VerbKind::ack, dst, src, addr, 0, 0);
        sched_.at(leg(dst, src, 0), [=] {
            if (*src_alive) done({Status::ok});
        });
    });
    return fut;
}

Future<WriteAck> Fabric::write_imm(EndpointId src, EndpointId dst, Bytes payload, std::uint32_t imm) {
    if (!connected(src, dst)) return Future<WriteAck>::ready({Status::disconnected});
    Future<WriteAck> fut;
    auto done = fut.resolver();
    auto& s = ep(src);
    s.stats.writes_imm_posted++;
    s.stats.bytes_posted += payload.size();
    record(VerbKind::rdma_write_with_imm, src, dst, 0, payload.size(), imm);
    auto src_alive = s.alive;
    auto dst_alive = ep(dst).alive;
    const SimTime arrival = leg(src, dst, payload.size());
    sched_.at(arrival, [=, this, payload = std::move(payload)]() mutable {
        if (!*src_alive || !*dst_alive) return;
        deliver(dst, Message{src, VerbKind::rdma_write_with_imm, std::move(payload), imm});
        sched_.at(leg(dst, src, 0), [=] {
            if (*src_alive) done({Status::ok});
        });
    });
    return fut;
}

Status Fabric::send(EndpointId src, EndpointId dst, Bytes payload) {
    if (!connected(src, dst)) return Status::disconnected;
    auto& s = ep(src);
    s.stats.sends_posted++;
    s.stats.bytes_posted += payload.size();
    record(VerbKind::send, src, dst, 0, payload.size(), 0);
    auto src_alive = s.alive;
    auto dst_alive = ep(dst).alive;
    const SimTime arrival = leg(src, dst, payload.size());
    sched_.at(arrival, [=, this, payload = std::move(payload)]() mutable {
        if (!*dst_alive || !*src_alive) return;
        deliver(dst, Message{src, VerbKind::send, std::move(payload), 0});
    });
    return Status::ok;
}

void Fabric::deliver(EndpointId dst, Message m) {
    auto& target = ep(dst);
    if (target.handler) {
        auto alive = target.alive;
        sched_.after(cost_.two_sided_overhead_ns, [this, dst, alive, m = std::move(m)]() mutable {
            if (*alive) ep(dst).handler(std::move(m));
        });
        return;
    }
    target.cq.push_back(std::move(m));
    if (target.doorbell) target.doorbell();
}

std::vector<Message> Fabric::poll(EndpointId id) {
    auto& e = ep(id);
    std::vector<Message> out;
    out.swap(e.cq);
    e.stats.server_cpu_events += out.size();
    for (const auto& m : out) record(VerbKind::recv_completion, m.src, id, 0, m.payload.size(), m.imm);
    return out;
}

Future<bool> Fabric::sleep(EndpointId id, SimTime dt) {
    Future<bool> fut;
    auto done = fut.resolver();
    auto alive = ep(id).alive;
    sched_.after(dt, [=] {
        if (*alive) done(true);
    });
    return fut;
}

void Fabric::land_write(EndpointId dst, NicEntry entry) {
    auto& target = ep(dst);
    const auto id = entry.id;
    target.nic_cache.push_back(std::move(entry));
    if (target.drain_paused) return;
    auto alive = target.alive;
    sched_.after(cost_.nic_drain_ns, [this, dst, id, alive] {
        if (*alive) drain_entry(dst, id);
    });
}

void Fabric::drain_entry(EndpointId dst, std::uint64_t id) {
    auto& target = ep(dst);
    auto it = std::find_if(target.nic_cache.begin(), target.nic_cache.end(),
                           [id](const NicEntry& n) { return n.id == id; });
    if (it == target.nic_cache.end()) return;
    NicEntry entry = std::move(*it);
    target.nic_cache.erase(it);
    target.nvm->store(entry.addr, entry.data, false, entry.paper_bytes);
    schedule_persist(dst);
    if (entry.imm) deliver(dst, Message{entry.src, VerbKind::rdma_write_with_imm, {}, *entry.imm});
}

void Fabric::schedule_persist(EndpointId dst) {
    auto alive = ep(dst).alive;
    sched_.after(cost_.nvm_write_extra_ns, [this, dst, alive] {
        if (*alive && ep(dst).nvm) ep(dst).nvm->flush();
    });
}

void Fabric::set_drain_paused(EndpointId id, bool paused) {
    auto& e = ep(id);
    e.drain_paused = paused;
    if (!paused) {
        auto alive = e.alive;
        for (const auto& n : e.nic_cache) {
            sched_.after(cost_.nic_drain_ns, [this, id, alive, nid = n.id] {
                if (*alive) drain_entry(id, nid);
            });
        }
    }
}

void Fabric::drain_now(EndpointId id) {
    auto& e = ep(id);
    while (!e.nic_cache.empty()) drain_entry(id, e.nic_cache.front().id);
    if (e.nvm) e.nvm->flush();
}

std::size_t Fabric::nic_cache_size(EndpointId id) const { return ep(id).nic_cache.size(); }

std::size_t Fabric::inflight_write_bytes(EndpointId src) const {
    std::size_t n = 0;
    for (const auto& [id, w] : inflight_writes_)
        if (w.src == src && !w.partial) n += w.len;
    return n;
}

std::size_t Fabric::inflight_write_units(EndpointId src, std::size_t unit) const {
    std::size_t n = 0;
    for (const auto& [id, w] : inflight_writes_)
        if (w.src == src && !w.partial) n += persistence_units(w.len, false, unit);
    return n;
}

void Fabric::crash_endpoint(EndpointId id, const CrashModel& model) {
    auto& e = ep(id);
    if (!*e.alive) return;

    // Writes this endpoint still has on the wire arrive torn: the model picks
    // which bytes of the in-flight stream made it out of the NIC.
    std::mt19937_64 rng(model.seed);
    std::size_t total = inflight_write_bytes(id);
    std::size_t cut = 0;
    if (model.mode == CrashMode::prefix)
        cut = model.cut ? *model.cut : static_cast<std::size_t>(rng() % (total + 1));
    std::size_t pos = 0;
    std::size_t unit_index = 0;
    for (auto& [wid, w] : inflight_writes_) {
        if (w.src != id || w.partial) continue;
        // The bytes live in the arrival closure; pieces only name surviving ranges.
        w.partial = true;
        if (model.mode == CrashMode::prefix) {
            if (cut > pos) w.pieces.push_back(Piece{0, std::min(w.len, cut - pos)});
        } else {
            const std::size_t units = persistence_units(w.len, false, model.unit);
            for (std::size_t u = 0; u < units; ++u, ++unit_index) {
                bool keep = model.units ? (unit_index < model.units->size() && (*model.units)[unit_index])
                                        : (rng() & 1) != 0;
                if (keep) {
                    const std::size_t from = u * model.unit;
                    const std::size_t to = std::min(w.len, from + model.unit);
                    w.pieces.push_back(Piece{from, to - from});
                }
            }
        }
        pos += w.len;
    }

    e.nic_cache.clear();
    if (e.nvm) e.nvm->crash(model);
    e.cq.clear();
    *e.alive = false;
    for (auto& other : eps_) other.peers.erase(id);
    e.peers.clear();
}

}  // namespace erda
