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

#include <map>
#include <random>

#include <gtest/gtest.h>

#include "erda/cleaner.hpp"
#include "erda/harness.hpp"

namespace erda {
namespace {

ClusterConfig small_cluster() {
    ClusterConfig cc;
    cc.erda.table_slots = 256;
    cc.erda.heads = 1;
    cc.erda.region_size = 8 << 10;
    cc.erda.segment_size = 2 << 10;
    cc.erda.region_count = 12;
    cc.erda.max_chain = 4;
    cc.erda.max_object_size = 512;
    cc.erda.auto_clean = false;
    return cc;
}

using Model = std::map<std::string, std::string>;

Model fill(Cluster& cl) {
    Model m;
    for (int round = 0; round < 5; ++round) {
        for (int i = 0; i < 12; ++i) {
            const std::string k = "k" + std::to_string(i);
            const std::string v = std::string(40 + 13 * round, static_cast<char>('a' + round)) + k;
            EXPECT_EQ(drive(cl.sched(), cl.client(0).put(to_bytes(k), to_bytes(v))), WriteStatus::ok);
            m[k] = v;
        }
    }
    EXPECT_EQ(drive(cl.sched(), cl.client(0).remove(to_bytes("k5"))), WriteStatus::ok);
    m.erase("k5");
    cl.quiesce();
    return m;
}

void expect_model(Cluster& cl, const Model& m) {
    for (int i = 0; i < 12; ++i) {
        const std::string k = "k" + std::to_string(i);
        auto g = drive(cl.sched(), cl.client(0).get(to_bytes(k)));
        auto it = m.find(k);
        if (it == m.end()) {
            EXPECT_EQ(g.status, GetStatus::not_found) << k;
        } else {
            ASSERT_EQ(g.status, GetStatus::ok) << k;
            EXPECT_EQ(to_string(g.value), it->second);
        }
    }
}

TEST(Cleaner, PhasesAdvanceInOrder) {
    Cluster cl(small_cluster());
    auto m = fill(cl);
    ErdaServer& s = *cl.erda();
    const auto free_before = s.free_regions();
    ASSERT_TRUE(s.force_clean(0));
    EXPECT_FALSE(s.force_clean(0));  // already running
    std::vector<HeadPhase> seen{s.phase(0)};
    while (cl.sched().step())
        if (s.phase(0) != seen.back()) seen.push_back(s.phase(0));
    ASSERT_GE(seen.size(), 3u);
    EXPECT_EQ(seen.front(), HeadPhase::merging);
    EXPECT_EQ(seen.back(), HeadPhase::normal);
    for (std::size_t i = 1; i + 1 < seen.size(); ++i)
        EXPECT_LT(static_cast<int>(seen[i - 1]), static_cast<int>(seen[i]));
    EXPECT_FALSE(s.cleaning_active());
    EXPECT_GE(s.free_regions(), free_before);
    const auto& st = s.clean_history().at(0);
    EXPECT_GT(st.region1_record_bytes, st.region2_live_bytes);
    EXPECT_GT(st.finished_at, st.started_at);
    expect_model(cl, m);
}

TEST(Cleaner, ReclaimedMatchesIndependentWalk) {
    Cluster cl(small_cluster());
    auto m = fill(cl);
    ErdaServer& s = *cl.erda();
    const auto total = walk_chain_bytes(s, 0, cl.nvm());
    std::uint64_t live = 0;
    for (const auto& [k, v] : m) live += encoded_object_size(k.size(), v.size());
    ASSERT_TRUE(s.force_clean(0));
    cl.quiesce();
    EXPECT_EQ(s.clean_history().at(0).reclaimed(), total - live);
    EXPECT_EQ(walk_chain_bytes(s, 0, cl.nvm()), live);
}

// Crash the server at every step of a cleaning pass. Recovery either drops
// Region 2 or finishes the switch; every value survives either way.
TEST(Cleaner, CrashAtEveryStepAbortsOrCompletes) {
    std::uint64_t total_steps = 0;
    {
        Cluster cl(small_cluster());
        fill(cl);
        ASSERT_TRUE(cl.erda()->force_clean(0));
        while (cl.sched().step()) ++total_steps;
    }
    ASSERT_GT(total_steps, 5u);
    std::size_t aborted = 0;
    std::size_t completed = 0;
    for (std::uint64_t k = 0; k <= total_steps; k += std::max<std::uint64_t>(1, total_steps / 40)) {
        Cluster cl(small_cluster());
        auto m = fill(cl);
        ASSERT_TRUE(cl.erda()->force_clean(0));
        cl.sched().run_steps(k);
        const bool mid = cl.erda()->cleaning_active();
        cl.crash_server(CrashModel::seeded(k + 1, 64));
        cl.restart_server();
        const auto& rep = cl.erda()->recovery_report();
        EXPECT_TRUE(rep.lost_keys.empty()) << "step " << k;
        aborted += rep.cleanings_aborted;
        completed += rep.cleanings_completed;
        if (mid) {
            EXPECT_EQ(rep.cleanings_aborted + rep.cleanings_completed, 1u) << "step " << k;
        }
        EXPECT_EQ(cl.erda()->phase(0), HeadPhase::normal);
        expect_model(cl, m);
        // The head can be cleaned again after recovery.
        ASSERT_TRUE(cl.erda()->force_clean(0)) << "step " << k;
        cl.quiesce();
        expect_model(cl, m);
    }
    EXPECT_GT(aborted, 0u);
}

TEST(ScanRecords, ResynchronisesAfterGarbage) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        Bytes buf;
        std::vector<ScannedRecord> expect;
        for (int i = 0; i < 6; ++i) {
            if (rng() % 3 == 0) {
                // Zero-filled hole: never parses as a record.
                buf.resize(buf.size() + 1 + rng() % 40, 0);
            }
            auto rec = encode_object(to_bytes("key" + std::to_string(i)), ByteView(Bytes(rng() % 50, 'v')));
            expect.push_back({buf.size() + 100, rec.size()});
            append(buf, rec);
        }
        buf.resize(buf.size() + rng() % 20, 0);
        auto got = scan_records(buf, 100);
        ASSERT_EQ(got.size(), expect.size()) << trial;
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_EQ(got[i].pos, expect[i].pos);
            EXPECT_EQ(got[i].size, expect[i].size);
        }
    }
}

}  // namespace
}  // namespace erda
