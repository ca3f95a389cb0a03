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
#include <sstream>

#include "erda/harness.hpp"

namespace erda {

std::uint64_t walk_chain_bytes(ErdaServer& s, std::uint32_t h, const NvmDevice& dev) {
    const auto heads = s.head_array();
    const auto& info = heads.at(h);
    const auto& cfg = s.layout().config();
    std::uint64_t total = 0;
    for (const auto& region : info.chains[info.active]) {
        for (std::uint64_t seg = 0; seg < cfg.region_size; seg += cfg.segment_size) {
            std::uint64_t pos = 0;
            while (pos + kObjectHeaderSize <= cfg.segment_size) {
                auto rec = verify_object(dev.view(region.base + seg + pos, cfg.segment_size - pos));
                if (!rec) {
                    ++pos;  // hole left by a skipped replica
                    continue;
                }
                total += rec->encoded_size();
                pos += rec->encoded_size();
            }
        }
    }
    return total;
}

namespace {

using Value = std::optional<Bytes>;

struct WriteRec {
    SimTime start;
    SimTime end;
    Value value;
};

struct ReadRec {
    Bytes key;
    SimTime start;
    SimTime end;
    Value value;
};

struct Shared {
    std::map<Bytes, std::vector<WriteRec>> writes;  ///< per key, in issue order
    std::vector<ReadRec> reads;
    std::vector<std::pair<SimTime, bool>> latencies;  ///< latency, overlapped cleaning
    std::string failure;
};

Task<void> worker(Cluster& cl, std::size_t id, const CleanTestOptions& o, const std::vector<Bytes>& keys,
                  Shared& sh) {
    std::mt19937_64 rng(o.seed * 1000003 + id);
    KvClient& c = cl.client(id);
    ErdaServer& s = *cl.erda();
    std::vector<Bytes> mine;
    for (std::size_t k = id; k < keys.size(); k += o.clients) mine.push_back(keys[k]);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::uint32_t i = 0; i < o.ops_per_client && sh.failure.empty(); ++i) {
        const SimTime t0 = cl.sched().now();
        const bool cleaning_before = s.cleaning_active();
        const double p = u(rng);
        if (p < o.read_fraction) {
            const Bytes& key = keys[rng() % keys.size()];
            auto g = co_await c.get(key);
            if (g.status == GetStatus::data_loss || g.status == GetStatus::disconnected) {
                sh.failure = to_string(key) + ": get returned " + std::string(to_string(g.status));
                co_return;
            }
            sh.reads.push_back(ReadRec{key, t0, cl.sched().now(), g.has_value() ? Value(g.value) : std::nullopt});
        } else {
            const Bytes& key = mine[rng() % mine.size()];
            Value v;
            if (p >= o.read_fraction + o.delete_fraction) {
                std::string text = "c" + std::to_string(id) + "#" + std::to_string(i) + ":";
                text.resize(text.size() + 20 + rng() % 180, static_cast<char>('a' + id));
                v = to_bytes(text);
            }
            auto& hist = sh.writes[key];
            hist.push_back(WriteRec{t0, 0, v});
            const std::size_t at = hist.size() - 1;
            const WriteStatus st = v ? co_await c.put(key, *v) : co_await c.remove(key);
            if (st == WriteStatus::not_found) {
                hist.erase(hist.begin() + static_cast<std::ptrdiff_t>(at));  // deleting an absent key changes nothing
            } else if (st != WriteStatus::ok) {
                sh.failure = to_string(key) + ": write returned " + std::string(to_string(st));
                co_return;
            } else {
                hist[at].end = cl.sched().now();
            }
        }
        const SimTime lat = cl.sched().now() - t0;
        sh.latencies.emplace_back(lat, cleaning_before || s.cleaning_active());
    }
}

/// A read may return the version of any write between the last one that
/// completed before the read started and the last one that started before
/// it ended. Writes of a key are sequential, so this is an index range.
std::string check_reads(const Shared& sh) {
    for (const auto& r : sh.reads) {
        auto it = sh.writes.find(r.key);
        static const std::vector<WriteRec> none;
        const auto& w = it == sh.writes.end() ? none : it->second;
        long lo = -1;
        long hi = -1;
        for (long j = 0; j < static_cast<long>(w.size()); ++j) {
            if (w[j].end != 0 && w[j].end <= r.start) lo = j;
            if (w[j].start <= r.end) hi = j;
        }
        bool ok = false;
        for (long j = lo; j <= hi && !ok; ++j) ok = (j < 0 ? Value{} : w[j].value) == r.value;
        if (!ok) {
            std::ostringstream s;
            s << to_string(r.key) << ": read at [" << r.start << "," << r.end << "] returned "
              << (r.value ? to_string(*r.value).substr(0, 12) : std::string("<absent>")) << ", not linearizable";
            for (long j = std::max(0L, lo - 1); j < static_cast<long>(w.size()) && j <= hi + 1; ++j)
                s << "; w" << j << " [" << w[j].start << "," << w[j].end << "] "
                  << (w[j].value ? to_string(*w[j].value).substr(0, 12) : std::string("<absent>"));
            return s.str();
        }
    }
    return {};
}

}  // namespace

CleanTestReport run_cleantest(const CleanTestOptions& o) {
    CleanTestReport rep;
    ClusterConfig cc;
    cc.scheme = Scheme::erda;
    cc.erda.table_slots = 256;
    cc.erda.heads = 2;
    cc.erda.region_size = 8 << 10;
    cc.erda.segment_size = 2 << 10;
    cc.erda.region_count = 20;
    cc.erda.max_chain = 6;
    cc.erda.max_object_size = 512;
    cc.erda.clean_threshold = 0.5;
    cc.erda.clean_batch = 4;
    cc.cost.jitter_ns = o.jitter_ns;
    cc.clients = o.clients;
    cc.seed = o.seed;
    Cluster cl(cc);
    ErdaServer& s = *cl.erda();

    std::vector<Bytes> keys;
    for (std::uint32_t k = 0; k < o.keys; ++k) keys.push_back(to_bytes("key" + std::to_string(k)));

    Shared sh;
    std::vector<Task<void>> tasks;
    for (std::size_t i = 0; i < o.clients; ++i) tasks.push_back(worker(cl, i, o, keys, sh));
    for (auto& t : tasks) t.start();
    cl.sched().run_while([&] {
        for (auto& t : tasks)
            if (!t.done()) return true;
        return false;
    });
    for (auto& t : tasks) {
        if (!t.done()) {
            rep.failure = "workers stalled";
            return rep;
        }
        t.rethrow_if_failed();
    }
    cl.quiesce();
    rep.cleanings_under_load = s.counters().cleanings_completed;
    if (!sh.failure.empty()) {
        rep.failure = sh.failure;
        return rep;
    }
    if (auto err = check_reads(sh); !err.empty()) {
        rep.failure = err;
        return rep;
    }
    std::uint64_t clean_lat = 0;
    std::uint64_t normal_lat = 0;
    for (auto [lat, cleaning] : sh.latencies) {
        rep.ops++;
        if (cleaning) {
            rep.ops_during_cleaning++;
            clean_lat += lat;
        } else {
            normal_lat += lat;
        }
    }
    if (rep.ops_during_cleaning) rep.mean_latency_cleaning_ns = static_cast<double>(clean_lat) / rep.ops_during_cleaning;
    if (rep.ops > rep.ops_during_cleaning)
        rep.mean_latency_normal_ns = static_cast<double>(normal_lat) / (rep.ops - rep.ops_during_cleaning);

    // Every acknowledged write is still there.
    std::map<Bytes, Value> final;
    for (const auto& k : keys) {
        auto it = sh.writes.find(k);
        final[k] = it == sh.writes.end() || it->second.empty() ? Value{} : it->second.back().value;
        auto g = drive(cl.sched(), cl.client(0).get(k));
        Value got = g.has_value() ? Value(g.value) : std::nullopt;
        if (got != final[k]) {
            rep.failure = to_string(k) + ": final read disagrees with the last acknowledged write";
            return rep;
        }
    }

    // Quiescent cleaning of each head: reclaimed space must equal what the
    // oracle says is stale or deleted.
    cl.quiesce();
    for (std::uint32_t h = 0; h < cc.erda.heads; ++h) {
        const std::uint64_t total = walk_chain_bytes(s, h, cl.nvm());
        std::uint64_t live = 0;
        for (const auto& [k, v] : final)
            if (v && head_of(k, cc.erda.heads) == h) live += encoded_object_size(k.size(), v->size());
        if (!s.force_clean(h)) {
            rep.failure = "quiescent cleaning did not start";
            return rep;
        }
        cl.quiesce();
        const auto& st = s.clean_history().at(h);
        rep.reclaimed += st.reclaimed();
        rep.expected_reclaimed += total - live;
        if (st.reclaimed() != total - live) {
            std::ostringstream e;
            e << "head " << h << ": reclaimed " << st.reclaimed() << " bytes, oracle " << (total - live);
            rep.failure = e.str();
            return rep;
        }
    }

    // Reads are back on the one-sided path.
    cl.quiesce();
    KvClient& c = cl.client(0);
    for (const auto& [k, v] : final) {
        const auto two_sided = c.counters().two_sided_ops;
        auto g = drive(cl.sched(), c.get(k));
        Value got = g.has_value() ? Value(g.value) : std::nullopt;
        if (got != v) {
            rep.failure = to_string(k) + ": read after cleaning disagrees";
            return rep;
        }
        if (v && (c.counters().last_get_reads != 2 || c.counters().two_sided_ops != two_sided)) {
            rep.failure = to_string(k) + ": read after cleaning did not use two one-sided reads";
            return rep;
        }
    }
    rep.ok = true;
    return rep;
}

}  // namespace erda
