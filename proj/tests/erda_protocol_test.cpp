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
#include <string>

#include <gtest/gtest.h>

#include "erda/erda.hpp"
#include "sim_util.hpp"

namespace erda {
namespace {

using testing::run;

ErdaConfig small_config() {
    ErdaConfig c;
    c.table_slots = 256;
    c.heads = 2;
    c.region_size = 16 << 10;
    c.segment_size = 4 << 10;
    c.region_count = 12;
    c.max_chain = 4;
    c.max_object_size = 1024;
    c.auto_clean = false;
    return c;
}

struct ErdaRig {
    Scheduler sched{1};
    Fabric fab{sched, CostModel{}};
    ErdaConfig cfg = small_config();
    NvmDevice dev{ErdaLayout(cfg).capacity()};
    EndpointId server_ep = fab.add_endpoint("server", &dev);
    EndpointId client_ep = fab.add_endpoint("client");
    std::unique_ptr<ErdaServer> server;
    std::unique_ptr<ErdaClient> client;

    ErdaRig() {
        server = ErdaServer::format(fab, server_ep, dev, cfg);
        fab.connect(client_ep, server_ep);
        client = std::make_unique<ErdaClient>(fab, client_ep, server_ep);
        if (!run(sched, client->connect())) throw std::runtime_error("connect failed");
    }
};

TEST(ErdaProtocol, PutGetRoundTrip) {
    ErdaRig rig;
    EXPECT_EQ(run(rig.sched, rig.client->put(to_bytes("alpha"), to_bytes("one"))), WriteStatus::ok);
    auto g = run(rig.sched, rig.client->get(to_bytes("alpha")));
    ASSERT_EQ(g.status, GetStatus::ok);
    EXPECT_EQ(to_string(g.value), "one");
    EXPECT_EQ(rig.client->counters().last_get_reads, 2u);
    EXPECT_EQ(run(rig.sched, rig.client->put(to_bytes("alpha"), to_bytes("two"))), WriteStatus::ok);
    g = run(rig.sched, rig.client->get(to_bytes("alpha")));
    EXPECT_EQ(to_string(g.value), "two");
    EXPECT_EQ(run(rig.sched, rig.client->remove(to_bytes("alpha"))), WriteStatus::ok);
    EXPECT_EQ(run(rig.sched, rig.client->get(to_bytes("alpha"))).status, GetStatus::not_found);
    EXPECT_EQ(run(rig.sched, rig.client->get(to_bytes("missing"))).status, GetStatus::not_found);
}

}  // namespace
}  // namespace erda

namespace erda {
namespace {

using testing::run;

std::size_t settle(ErdaRig& rig) {
    rig.sched.run();
    rig.dev.flush();
    return rig.dev.write_bytes_paper();
}

TEST(ErdaProtocol, PaperBytesMatchClosedForm) {
    ErdaRig rig;
    const Bytes key = to_bytes("key00001");
    const Bytes v1(100, 'a');
    const Bytes v2(40, 'b');
    std::size_t before = settle(rig);
    ASSERT_EQ(run(rig.sched, rig.client->put(key, v1)), WriteStatus::ok);
    std::size_t after = settle(rig);
    // create: metadata (key + 5) plus object (5 + key + value)
    EXPECT_EQ(after - before, key.size() + 5 + 5 + key.size() + v1.size());
    before = after;
    ASSERT_EQ(run(rig.sched, rig.client->put(key, v2)), WriteStatus::ok);
    after = settle(rig);
    EXPECT_EQ(after - before, 4 + 5 + key.size() + v2.size());
    before = after;
    ASSERT_EQ(run(rig.sched, rig.client->remove(key)), WriteStatus::ok);
    after = settle(rig);
    EXPECT_EQ(after - before, 4 + 5 + key.size());
}

TEST(ErdaProtocol, GetsUseNoServerCpu) {
    ErdaRig rig;
    ASSERT_EQ(run(rig.sched, rig.client->put(to_bytes("k1"), to_bytes("v1"))), WriteStatus::ok);
    rig.sched.run();
    const auto before = rig.fab.stats(rig.server_ep).server_cpu_events;
    for (int i = 0; i < 10; ++i) {
        auto g = run(rig.sched, rig.client->get(to_bytes("k1")));
        ASSERT_EQ(g.status, GetStatus::ok);
        EXPECT_EQ(rig.client->counters().last_get_reads, 2u);
    }
    rig.sched.run();
    EXPECT_EQ(rig.fab.stats(rig.server_ep).server_cpu_events, before);
}

TEST(ErdaProtocol, RecoversAfterServerCrash) {
    ErdaRig rig;
    for (int i = 0; i < 20; ++i) {
        ASSERT_EQ(run(rig.sched, rig.client->put(to_bytes("k" + std::to_string(i)), to_bytes("v" + std::to_string(i)))),
                  WriteStatus::ok);
    }
    rig.sched.run();
    rig.client.reset();
    rig.fab.crash_endpoint(rig.server_ep);
    rig.server.reset();
    rig.fab.restart_endpoint(rig.server_ep, &rig.dev);
    rig.server = ErdaServer::recover(rig.fab, rig.server_ep, rig.dev);
    rig.fab.restart_endpoint(rig.client_ep, nullptr);
    rig.fab.connect(rig.client_ep, rig.server_ep);
    rig.client = std::make_unique<ErdaClient>(rig.fab, rig.client_ep, rig.server_ep);
    ASSERT_TRUE(run(rig.sched, rig.client->connect()));
    for (int i = 0; i < 20; ++i) {
        auto g = run(rig.sched, rig.client->get(to_bytes("k" + std::to_string(i))));
        ASSERT_EQ(g.status, GetStatus::ok) << i;
        EXPECT_EQ(to_string(g.value), "v" + std::to_string(i));
    }
}

TEST(ErdaProtocol, CleaningPreservesValuesAndReclaims) {
    ErdaRig rig;
    std::map<std::string, std::string> model;
    for (int round = 0; round < 6; ++round) {
        for (int i = 0; i < 16; ++i) {
            const std::string k = "k" + std::to_string(i);
            const std::string v = std::string(50 + round * 7, static_cast<char>('a' + round)) + k;
            ASSERT_EQ(run(rig.sched, rig.client->put(to_bytes(k), to_bytes(v))), WriteStatus::ok);
            model[k] = v;
        }
    }
    ASSERT_EQ(run(rig.sched, rig.client->remove(to_bytes("k3"))), WriteStatus::ok);
    model.erase("k3");
    rig.sched.run();
    for (std::uint32_t h = 0; h < rig.cfg.heads; ++h) {
        const auto before = rig.server->cursor(h);
        ASSERT_TRUE(rig.server->force_clean(h));
        rig.sched.run();
        EXPECT_EQ(rig.server->phase(h), HeadPhase::normal);
        EXPECT_LT(rig.server->cursor(h), before);
        ASSERT_TRUE(rig.server->clean_history().count(h));
        EXPECT_GT(rig.server->clean_history().at(h).reclaimed(), 0u);
    }
    for (int i = 0; i < 16; ++i) {
        const std::string k = "k" + std::to_string(i);
        auto g = run(rig.sched, rig.client->get(to_bytes(k)));
        if (model.count(k)) {
            ASSERT_EQ(g.status, GetStatus::ok) << k;
            EXPECT_EQ(to_string(g.value), model[k]);
        } else {
            EXPECT_EQ(g.status, GetStatus::not_found);
        }
    }
}

}  // namespace
}  // namespace erda
