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

#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "erda/fabric.hpp"

namespace erda {
namespace {

struct Rig {
    Scheduler sched{1};
    CostModel cost;
    Fabric fab{sched, cost};
    NvmDevice dev{4096};
    EndpointId server = fab.add_endpoint("server", &dev);
    EndpointId client = fab.add_endpoint("client");
    std::uint32_t rkey = 0;

    Rig() {
        rkey = fab.register_region(server, 0, 2048);
        fab.connect(client, server);
    }

    template <class T>
    T await(Future<T> f) {
        sched.run_while([&] { return !f.is_ready(); });
        EXPECT_TRUE(f.is_ready());
        return f.await_resume();
    }
};

TEST(Fabric, ReadLatencyIsRttPlusPayload) {
    Rig r;
    r.dev.store(100, to_bytes("abcdef"));
    r.dev.flush();
    auto res = r.await(r.fab.read(r.client, r.server, r.rkey, 100, 6));
    EXPECT_EQ(res.status, Status::ok);
    EXPECT_EQ(to_string(res.data), "abcdef");
    EXPECT_EQ(r.sched.now(), r.cost.rtt_ns + 6 * r.cost.per_byte_ns);
    EXPECT_EQ(r.fab.stats(r.client).reads_posted, 1u);
    EXPECT_EQ(r.fab.stats(r.server).server_cpu_events, 0u);
}

TEST(Fabric, WriteAckLatency) {
    Rig r;
    auto ack = r.await(r.fab.write(r.client, r.server, r.rkey, 0, Bytes(100, 7), 100));
    EXPECT_EQ(ack.status, Status::ok);
    EXPECT_EQ(r.sched.now(), r.cost.rtt_ns + 100 * r.cost.per_byte_ns);
    r.sched.run();
    EXPECT_EQ(r.dev.durable_image()[50], 7);
    EXPECT_EQ(r.dev.write_bytes_paper(), 100u);
}

TEST(Fabric, RegionChecks) {
    Rig r;
    EXPECT_EQ(r.await(r.fab.read(r.client, r.server, r.rkey, 2040, 16)).status, Status::remote_access_error);
    EXPECT_EQ(r.await(r.fab.write(r.client, r.server, r.rkey + 77, 0, Bytes(4, 1))).status,
              Status::remote_access_error);
    r.fab.unregister_region(r.server, r.rkey);
    EXPECT_EQ(r.await(r.fab.read(r.client, r.server, r.rkey, 0, 8)).status, Status::remote_access_error);
}

TEST(Fabric, PerConnectionFifo) {
    Rig r;
    // A large write followed by a small one: the small one still lands second.
    auto big = r.fab.write(r.client, r.server, r.rkey, 0, Bytes(1000, 1));
    auto small = r.fab.write(r.client, r.server, r.rkey, 0, Bytes(4, 2));
    r.sched.run();
    EXPECT_TRUE(big.is_ready() && small.is_ready());
    EXPECT_EQ(r.dev.read(0, 5), (Bytes{2, 2, 2, 2, 1}));
}

TEST(Fabric, AckPrecedesDurability) {
    Rig r;
    r.fab.set_drain_paused(r.server, true);
    auto ack = r.await(r.fab.write(r.client, r.server, r.rkey, 0, to_bytes("data")));
    EXPECT_EQ(ack.status, Status::ok);
    r.sched.run();
    EXPECT_EQ(r.fab.nic_cache_size(r.server), 1u);
    EXPECT_EQ(r.dev.durable_image()[0], 0);
    // A server crash now loses the acknowledged write.
    NvmDevice after = r.dev.crashed(CrashModel::drop_all());
    r.fab.crash_endpoint(r.server);
    EXPECT_EQ(r.dev.read(0, 4), Bytes(4, 0));
    EXPECT_EQ(after.read(0, 4), Bytes(4, 0));
}

TEST(Fabric, ReadAfterWriteForcesPersistence) {
    Rig r;
    r.fab.set_drain_paused(r.server, true);
    r.await(r.fab.write(r.client, r.server, r.rkey, 0, to_bytes("data")));
    auto res = r.await(r.fab.read(r.client, r.server, r.rkey, 0, 4));
    EXPECT_EQ(to_string(res.data), "data");
    EXPECT_EQ(r.fab.nic_cache_size(r.server), 0u);
    EXPECT_EQ(to_string(ByteView(r.dev.durable_image()).first(4)), "data");
}

TEST(Fabric, WriteImmRaisesCompletionAfterDrain) {
    Rig r;
    int rings = 0;
    r.fab.set_doorbell(r.server, [&] { ++rings; });
    auto ack = r.await(r.fab.write(r.client, r.server, r.rkey, 8, to_bytes("x"), 0, 42u));
    EXPECT_EQ(ack.status, Status::ok);
    r.sched.run();
    EXPECT_EQ(rings, 1);
    auto msgs = r.fab.poll(r.server);
    ASSERT_EQ(msgs.size(), 1u);
    EXPECT_EQ(msgs[0].imm, 42u);
    EXPECT_EQ(r.dev.read(8, 1), to_bytes("x"));
    EXPECT_EQ(r.fab.stats(r.server).server_cpu_events, 1u);
    EXPECT_EQ(r.fab.stats(r.client).writes_imm_posted, 1u);
}

TEST(Fabric, SendToHandlerPaysReceiveOverhead) {
    Rig r;
    SimTime seen = 0;
    std::string got;
    r.fab.set_message_handler(r.client, [&](Message m) {
        seen = r.sched.now();
        got = to_string(m.payload);
    });
    EXPECT_EQ(r.fab.send(r.server, r.client, to_bytes("hi")), Status::ok);
    r.sched.run();
    EXPECT_EQ(got, "hi");
    EXPECT_EQ(seen, r.cost.half_rtt() + 2 * r.cost.per_byte_ns + r.cost.two_sided_overhead_ns);
}

TEST(Fabric, ClientCrashTearsInflightWrite) {
    for (std::size_t cut = 0; cut <= 200; cut += 40) {
        Rig r;
        Bytes payload(200);
        for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<std::uint8_t>(i + 1);
        auto ack = r.fab.write(r.client, r.server, r.rkey, 0, payload, 200);
        EXPECT_EQ(r.fab.inflight_write_bytes(r.client), 200u);
        r.fab.crash_endpoint(r.client, CrashModel::prefix_cut(cut));
        r.sched.run();
        EXPECT_FALSE(ack.is_ready());
        const auto img = r.dev.read(0, 200);
        for (std::size_t i = 0; i < 200; ++i) ASSERT_EQ(img[i], i < cut ? payload[i] : 0) << cut << " " << i;
        EXPECT_EQ(r.dev.write_bytes_paper(), 0u);  // torn pieces are not charged
    }
}

TEST(Fabric, ClientCrashSubsetOfUnits) {
    Rig r;
    auto ack = r.fab.write(r.client, r.server, r.rkey, 0, Bytes(192, 9));
    EXPECT_EQ(r.fab.inflight_write_units(r.client, 64), 3u);
    r.fab.crash_endpoint(r.client, CrashModel::subset({true, false, true}, 64));
    r.sched.run();
    const auto img = r.dev.read(0, 192);
    for (std::size_t i = 0; i < 192; ++i) ASSERT_EQ(img[i], (i / 64 == 1) ? 0 : 9) << i;
}

TEST(Fabric, DeadPeerDisconnects) {
    Rig r;
    r.fab.crash_endpoint(r.server);
    EXPECT_FALSE(r.fab.connected(r.client, r.server));
    EXPECT_EQ(r.await(r.fab.read(r.client, r.server, r.rkey, 0, 8)).status, Status::disconnected);
    EXPECT_EQ(r.fab.send(r.client, r.server, to_bytes("x")), Status::disconnected);
}

TEST(Fabric, TraceJsonLines) {
    Rig r;
    std::ostringstream out;
    r.fab.set_trace_sink(&out);
    r.fab.enable_trace(true);
    r.await(r.fab.write(r.client, r.server, r.rkey, 16, Bytes(8, 1)));
    r.await(r.fab.read(r.client, r.server, r.rkey, 16, 8));
    ASSERT_EQ(r.fab.trace().size(), 3u);
    EXPECT_EQ(r.fab.trace()[0].kind, VerbKind::rdma_write);
    EXPECT_EQ(r.fab.trace()[1].kind, VerbKind::ack);
    EXPECT_EQ(r.fab.trace()[2].kind, VerbKind::rdma_read);
    std::istringstream in(out.str());
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("time") && j.contains("verb") && j.contains("addr"));
        ++n;
    }
    EXPECT_EQ(n, 3);
}

TEST(Fabric, SleepCancelledByCrash) {
    Rig r;
    auto a = r.fab.sleep(r.client, 500);
    r.fab.crash_endpoint(r.client);
    r.sched.run();
    EXPECT_FALSE(a.is_ready());
    auto b = r.fab.sleep(r.server, 500);
    r.sched.run();
    EXPECT_TRUE(b.is_ready());
    EXPECT_EQ(r.sched.now(), 1000u);
}

}  // namespace
}  // namespace erda
