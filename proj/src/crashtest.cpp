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
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "erda/harness.hpp"

namespace erda {

std::string_view to_string(CrashScenario s) {
    switch (s) {
        case CrashScenario::client_crash_mid_put: return "client-crash-mid-put";
        case CrashScenario::server_crash_restart: return "server-crash-restart";
        case CrashScenario::crash_during_cleaning: return "crash-during-cleaning-finish";
    }
    return "?";
}

std::optional<CrashScenario> parse_crash_scenario(std::string_view s) {
    for (auto c : {CrashScenario::client_crash_mid_put, CrashScenario::server_crash_restart,
                   CrashScenario::crash_during_cleaning})
        if (s == to_string(c)) return c;
    return std::nullopt;
}

namespace {

using Value = std::optional<Bytes>;

struct HistOp {
    Bytes key;
    Value value;  ///< nullopt deletes
};

/// Writes issued by one client, one at a time, with what the client observed.
struct WriterLog {
    std::vector<HistOp> ops;
    std::vector<char> started;
    std::vector<char> acked;

    explicit WriterLog(std::vector<HistOp> o) : ops(std::move(o)), started(ops.size(), 0), acked(ops.size(), 0) {}
};

Task<void> writer(KvClient& c, WriterLog& log) {
    for (std::size_t i = 0; i < log.ops.size(); ++i) {
        log.started[i] = 1;
        const auto& op = log.ops[i];
        const WriteStatus st = op.value ? co_await c.put(op.key, *op.value) : co_await c.remove(op.key);
        if (st != WriteStatus::ok && st != WriteStatus::not_found) co_return;
        log.acked[i] = 1;
    }
}

Bytes filler(const std::string& tag, std::size_t n) {
    std::string s = tag;
    while (s.size() < n) s += static_cast<char>('a' + s.size() % 26);
    s.resize(std::max(n, tag.size()));
    return to_bytes(s);
}

/// Values a key may read after a crash: the last acknowledged version, the
/// version of a write still in flight, and (when the server lost power and
/// acknowledgments precede durability) the version before the last
/// acknowledged one.
std::vector<Value> acceptable(const Bytes& key, const Value& initial, const WriterLog& log, bool lose_acked) {
    std::vector<Value> vals{initial};
    std::size_t acked = 0;
    std::size_t started = 0;
    for (std::size_t i = 0; i < log.ops.size(); ++i) {
        if (log.ops[i].key != key) continue;
        vals.push_back(log.ops[i].value);
        if (log.acked[i]) acked = vals.size() - 1;
        if (log.started[i]) started = vals.size() - 1;
    }
    std::vector<Value> out{vals[acked]};
    if (started > acked) out.push_back(vals[started]);
    if (lose_acked && acked > 0) out.push_back(vals[acked - 1]);
    return out;
}

std::string show(const Value& v) {
    if (!v) return "<absent>";
    std::string s = to_string(*v);
    if (s.size() > 24) s = s.substr(0, 24) + "...";
    return s;
}

ErdaConfig crash_geometry(std::uint32_t heads) {
    ErdaConfig c;
    c.table_slots = 64;
    c.heads = heads;
    c.region_size = 8 << 10;
    c.segment_size = 2 << 10;
    c.region_count = heads * 2 + 6;
    c.max_chain = 4;
    c.max_object_size = 1024;
    c.auto_clean = false;
    c.clean_batch = 2;
    return c;
}

BaselineConfig baseline_geometry() {
    BaselineConfig c;
    c.table_slots = 64;
    c.ring_slots = 4;
    c.max_object_size = 1024;
    c.heap_size = 64 << 10;
    return c;
}

ClusterConfig crash_cluster(const CrashTestOptions& o, std::uint32_t heads, std::uint32_t clients) {
    ClusterConfig c;
    c.scheme = o.scheme;
    c.erda = crash_geometry(heads);
    c.baseline = baseline_geometry();
    c.clients = clients;
    c.seed = o.seed;
    c.erda_client.unsafe_skip_crc = o.unsafe_skip_crc;
    return c;
}

/// Three keys, twelve writes: creates, updates of growing and shrinking
/// size, and deletes followed by re-creates.
std::vector<HistOp> scripted_history() {
    const Bytes a = to_bytes("key-a"), b = to_bytes("key-b"), c = to_bytes("key-c");
    return {
        {a, filler("a1:", 40)},  {b, filler("b1:", 100)}, {c, filler("c1:", 150)}, {a, filler("a2:", 130)},
        {b, std::nullopt},       {c, filler("c2:", 20)},  {b, filler("b2:", 90)},  {a, filler("a3:", 60)},
        {c, std::nullopt},       {a, filler("a4:", 200)}, {c, filler("c3:", 70)},  {b, filler("b3:", 45)},
    };
}

/// A live scenario instance: cluster, setup applied, writer started.
struct Instance {
    std::unique_ptr<Cluster> cl;
    WriterLog log;
    Task<void> task;
    std::map<Bytes, Value> initial;
    std::vector<Bytes> keys;
    std::uint64_t steps = 0;

    explicit Instance(std::vector<HistOp> ops) : log(std::move(ops)) {}
};

std::unique_ptr<Instance> build(const CrashTestOptions& o) {
    auto history = scripted_history();
    std::vector<Bytes> keys{to_bytes("key-a"), to_bytes("key-b"), to_bytes("key-c")};
    std::vector<HistOp> setup;
    if (o.scenario == CrashScenario::crash_during_cleaning) {
        // Enough versions that the cleaner has stale and deleted records to
        // drop, then the scripted writes race the cleaning.
        for (int round = 0; round < 4; ++round)
            for (const auto& k : keys) setup.push_back({k, filler(to_string(k) + std::to_string(round) + ":", 80 + 30 * round)});
        setup.push_back({keys[1], std::nullopt});
    }
    auto inst = std::make_unique<Instance>(std::move(history));
    inst->keys = keys;
    const std::uint32_t heads = o.scenario == CrashScenario::crash_during_cleaning ? 1 : 2;
    inst->cl = std::make_unique<Cluster>(crash_cluster(o, heads, 2));
    for (const auto& k : keys) inst->initial[k] = std::nullopt;
    for (const auto& op : setup) {
        auto st = op.value ? drive(inst->cl->sched(), inst->cl->client(0).put(op.key, *op.value))
                           : drive(inst->cl->sched(), inst->cl->client(0).remove(op.key));
        if (st != WriteStatus::ok) throw std::runtime_error("crash test setup write failed");
        inst->initial[op.key] = op.value;
    }
    inst->cl->quiesce();
    if (o.scenario == CrashScenario::crash_during_cleaning) {
        if (!inst->cl->erda()) throw std::runtime_error("cleaning scenario needs the erda scheme");
        if (!inst->cl->erda()->force_clean(0)) throw std::runtime_error("cleaning did not start");
    }
    inst->task = writer(inst->cl->client(0), inst->log);
    inst->task.start();
    return inst;
}

bool advance(Instance& inst, std::uint64_t steps) {
    while (inst.steps < steps) {
        if (!inst.cl->sched().step()) return false;
        ++inst.steps;
    }
    return true;
}

std::vector<CrashModel> variants(std::size_t bytes, std::size_t units, const CrashTestOptions& o, bool byte_cuts) {
    std::vector<CrashModel> out;
    if (byte_cuts) {
        for (std::size_t c = 0; c <= bytes; ++c) out.push_back(CrashModel::prefix_cut(c));
    } else {
        for (std::size_t u = 0; u <= units; ++u) out.push_back(CrashModel::prefix_cut(std::min(bytes, u * o.unit)));
    }
    if (units > 0 && units <= o.max_subset_units) {
        for (std::uint64_t mask = 0; mask < (1ull << units); ++mask) {
            std::vector<bool> keep(units);
            for (std::size_t u = 0; u < units; ++u) keep[u] = (mask >> u) & 1;
            out.push_back(CrashModel::subset(std::move(keep), o.unit));
        }
    } else if (units > o.max_subset_units) {
        for (std::uint64_t s = 0; s < 32; ++s) out.push_back(CrashModel::seeded(o.seed * 7919 + s, o.unit));
    }
    return out;
}

std::string describe(const CrashModel& m) {
    std::ostringstream s;
    if (m.mode == CrashMode::prefix) {
        s << "prefix cut " << (m.cut ? *m.cut : 0) << " bytes";
    } else if (m.units) {
        s << "unit subset ";
        for (bool b : *m.units) s << (b ? '1' : '0');
    } else {
        s << "seeded subset " << m.seed;
    }
    return s.str();
}

/// Reads every key through a live client and compares with the oracle.
/// Empty string on success.
std::string verify(Cluster& cl, std::size_t reader, const Instance& inst, bool lose_acked,
                   std::uint64_t* recovered_reads, bool write_back = true) {
    for (int pass = 0; pass < 2; ++pass) {
        for (const auto& key : inst.keys) {
            auto ok = acceptable(key, inst.initial.at(key), inst.log, lose_acked);
            auto g = drive(cl.sched(), cl.client(reader).get(key));
            if (g.status == GetStatus::data_loss || g.status == GetStatus::disconnected)
                return to_string(key) + ": get returned " + std::string(to_string(g.status));
            if (g.status == GetStatus::recovered && recovered_reads) ++*recovered_reads;
            Value got = g.has_value() ? Value(g.value) : std::nullopt;
            if (std::find(ok.begin(), ok.end(), got) == ok.end()) {
                std::string allowed;
                for (const auto& v : ok) allowed += " " + show(v);
                return to_string(key) + ": read " + show(got) + ", allowed" + allowed;
            }
        }
        // Second pass after any repairs the first one triggered.
        cl.quiesce();
    }
    if (!write_back) return {};
    // The store must stay writable.
    for (const auto& key : inst.keys) {
        const Bytes v = filler("after:" + to_string(key), 33);
        if (drive(cl.sched(), cl.client(reader).put(key, v)) != WriteStatus::ok) return to_string(key) + ": put after crash failed";
        auto g = drive(cl.sched(), cl.client(reader).get(key));
        if (!g.has_value() || g.value != v) return to_string(key) + ": read-back after crash failed";
    }
    return {};
}

NvmDevice through_image(NvmDevice& dev, const std::optional<std::filesystem::path>& dir, const std::string& name) {
    if (!dir) return NvmDevice::deserialize(dev.serialize());
    std::filesystem::create_directories(*dir);
    const auto path = *dir / name;
    dev.dump(path);
    NvmDevice loaded = NvmDevice::load(path);
    std::filesystem::remove(path);
    return loaded;
}

}  // namespace

CrashTestReport run_crashtest(const CrashTestOptions& o) {
    CrashTestReport rep;
    const bool client_crash = o.scenario == CrashScenario::client_crash_mid_put;
    const bool lose_acked = !client_crash && o.scheme == Scheme::erda;
    for (std::uint64_t step = 0;; ++step) {
        auto probe = build(o);
        const bool reached = advance(*probe, step);
        bool finished = probe->task.done();
        if (o.scenario == CrashScenario::crash_during_cleaning)
            finished = finished && !probe->cl->erda()->cleaning_active();
        if (!reached) break;
        rep.steps = step;
        std::size_t bytes = 0;
        std::size_t units = 0;
        if (client_crash) {
            const auto ep = probe->cl->client(0).endpoint();
            bytes = probe->cl->fab().inflight_write_bytes(ep);
            units = probe->cl->fab().inflight_write_units(ep, o.unit);
        } else {
            bytes = probe->cl->nvm().inflight_bytes();
            units = probe->cl->nvm().inflight_units(o.unit);
        }
        probe.reset();
        const bool byte_cuts = o.scenario != CrashScenario::crash_during_cleaning;
        for (const auto& model : variants(bytes, units, o, byte_cuts)) {
            auto inst = build(o);
            advance(*inst, step);
            std::string err;
            try {
                if (client_crash) {
                    inst->cl->crash_client(0, model);
                    inst->cl->quiesce();
                    err = verify(*inst->cl, 1, *inst, false, &rep.recovered_reads);
                } else {
                    inst->cl->crash_server(model);
                    inst->cl->restart_server(through_image(inst->cl->nvm(), o.image_dir, "crash.img"));
                    inst->cl->quiesce();
                    if (auto* s = inst->cl->erda())
                        for (std::uint32_t h = 0; h < s->layout().config().heads; ++h)
                            if (s->phase(h) != HeadPhase::normal) err = "head not normal after recovery";
                    const bool cleaning = o.scenario == CrashScenario::crash_during_cleaning;
                    if (err.empty()) err = verify(*inst->cl, 0, *inst, lose_acked, &rep.recovered_reads, !cleaning);
                    if (err.empty() && cleaning) {
                        if (!inst->cl->erda()->force_clean(0)) err = "cleaning after recovery did not start";
                        inst->cl->quiesce();
                        if (err.empty()) err = verify(*inst->cl, 0, *inst, lose_acked, nullptr);
                    }
                }
            } catch (const std::exception& e) {
                err = std::string("exception: ") + e.what();
            }
            rep.cases++;
            if (!err.empty()) {
                rep.failures++;
                if (rep.first_failure.empty()) {
                    std::ostringstream s;
                    s << to_string(o.scenario) << " step " << step << ", " << describe(model) << ": " << err;
                    rep.first_failure = s.str();
                }
            }
        }
        if (finished) break;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Seeded recovery cases

namespace {

/// Keys whose newest record is torn, read straight from a device image with
/// the table and head layouts.
std::set<Bytes> torn_entries(const NvmDevice& image) {
    NvmDevice dev = NvmDevice::deserialize(image.serialize());
    const ErdaLayout layout(ErdaLayout::read_superblock(dev));
    const auto& cfg = layout.config();
    HopscotchIndex(dev, layout.table()).recover();
    dev.flush();
    std::set<Bytes> out;
    const TableGeometry geo = layout.table();
    for (std::uint64_t slot = 0; slot < geo.physical_slots(); ++slot) {
        ByteView e = dev.view(geo.slot_addr(slot), kEntrySize);
        if (e[kEntryOccupancy] == 0) continue;
        const std::size_t klen = e[kEntryKeyLen];
        const Bytes key(e.begin() + kEntryKey, e.begin() + kEntryKey + klen);
        const std::uint32_t h = e[kEntryHead];
        const std::uint64_t word = load_le<std::uint64_t>(e.data() + kEntryWord);
        // new tag in bit 63, slot A in bits 32..62, slot B in bits 1..31
        const std::uint32_t a = static_cast<std::uint32_t>((word >> 32) & 0x7FFFFFFF);
        const std::uint32_t b = static_cast<std::uint32_t>((word >> 1) & 0x7FFFFFFF);
        const std::uint32_t off = (word >> 63) ? a : b;
        const std::uint32_t chain = off >> 30;
        const std::uint64_t pos = off & ((1u << 30) - 1);
        const std::uint64_t desc = layout.chain_addr(h, chain);
        const std::uint64_t count = dev.read_u64(desc);
        const std::uint64_t idx = pos / cfg.region_size;
        bool intact = false;
        if (idx < count) {
            const std::uint16_t region = load_le<std::uint16_t>(dev.view(desc + 8 + 2 * idx, 2).data());
            const std::uint64_t addr = layout.region_addr(region) + pos % cfg.region_size;
            const std::uint64_t room = cfg.segment_size - pos % cfg.segment_size;
            auto rec = verify_object(dev.view(addr, room));
            intact = rec && rec->key == key;
        }
        if (!intact) out.insert(key);
    }
    return out;
}

}  // namespace

RecoveryCase run_recovery_case(std::uint64_t seed, const std::filesystem::path& image_dir) {
    RecoveryCase rc;
    std::mt19937_64 rng(seed);
    ClusterConfig cc;
    cc.scheme = Scheme::erda;
    cc.erda = crash_geometry(2);
    cc.erda.region_count = 16;
    cc.clients = 3;
    cc.seed = seed;
    cc.cost.jitter_ns = 500;
    Cluster cl(cc);

    // Writes are partitioned by key so each key has one sequential writer.
    std::vector<std::unique_ptr<WriterLog>> logs;
    std::map<Bytes, Value> initial;
    std::vector<Bytes> keys;
    for (std::uint32_t c = 0; c < cc.clients; ++c) {
        std::vector<HistOp> ops;
        for (int i = 0; i < 14; ++i) {
            Bytes key = to_bytes("c" + std::to_string(c) + "k" + std::to_string(rng() % 3));
            if (rng() % 6 == 0)
                ops.push_back({key, std::nullopt});
            else
                ops.push_back({key, filler("s" + std::to_string(seed) + "c" + std::to_string(c) + "i" + std::to_string(i) + ":",
                                           1 + rng() % 300)});
        }
        for (int k = 0; k < 3; ++k) {
            keys.push_back(to_bytes("c" + std::to_string(c) + "k" + std::to_string(k)));
            initial[keys.back()] = std::nullopt;
        }
        logs.push_back(std::make_unique<WriterLog>(std::move(ops)));
    }
    std::vector<Task<void>> tasks;
    for (std::uint32_t c = 0; c < cc.clients; ++c) tasks.push_back(writer(cl.client(c), *logs[c]));
    for (auto& t : tasks) t.start();
    const std::uint64_t crash_at = 1 + rng() % 600;
    for (std::uint64_t s = 0; s < crash_at && cl.sched().step(); ++s) {
    }
    cl.crash_server(CrashModel::seeded(seed, 64));
    NvmDevice image = through_image(cl.nvm(), image_dir, "recovery-" + std::to_string(seed) + ".img");
    const std::set<Bytes> torn = torn_entries(image);
    rc.torn_entries = torn.size();
    cl.restart_server(std::move(image));

    const auto& rep = cl.erda()->recovery_report();
    std::set<Bytes> touched;
    for (const auto* v : {&rep.repaired_keys, &rep.removed_keys, &rep.lost_keys}) touched.insert(v->begin(), v->end());
    std::ostringstream err;
    if (touched != torn) {
        err << "recovery touched " << touched.size() << " entries, oracle expects " << torn.size() << "; ";
    }
    for (const auto& key : keys) {
        const WriterLog& log = *logs[key[1] - '0'];
        auto ok = acceptable(key, initial[key], log, true);
        auto g = drive(cl.sched(), cl.client(0).get(key));
        Value got = g.has_value() ? Value(g.value) : std::nullopt;
        if (g.status == GetStatus::data_loss || g.status == GetStatus::disconnected ||
            std::find(ok.begin(), ok.end(), got) == ok.end())
            err << to_string(key) << " read " << show(got) << " (" << to_string(g.status) << "); ";
    }
    rc.detail = err.str();
    rc.ok = rc.detail.empty();
    return rc;
}

}  // namespace erda
