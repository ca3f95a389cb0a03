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

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "erda/harness.hpp"

namespace erda {
namespace {

WorkloadSpec small_spec(Mix mix, std::size_t value = 64) {
    WorkloadSpec s;
    s.mix = mix;
    s.key_count = 200;
    s.value_size = value;
    s.op_count = 1500;
    s.seed = 3;
    return s;
}

ClusterConfig cluster(Scheme scheme, std::uint32_t clients = 1) {
    ClusterConfig cc;
    cc.scheme = scheme;
    cc.clients = clients;
    return cc;
}

std::string csv_of(const RunReport& r) {
    std::ostringstream out;
    write_csv_header(out);
    write_csv(out, r);
    return out.str();
}

TEST(Harness, CsvIsByteIdenticalPerSeed) {
    for (auto scheme : {Scheme::erda, Scheme::redo, Scheme::raw}) {
        const auto a = csv_of(run_workload(cluster(scheme, 2), small_spec(Mix::ycsb_a)));
        const auto b = csv_of(run_workload(cluster(scheme, 2), small_spec(Mix::ycsb_a)));
        EXPECT_EQ(a, b) << to_string(scheme);
        auto other = small_spec(Mix::ycsb_a);
        other.seed = 4;
        EXPECT_NE(a, csv_of(run_workload(cluster(scheme, 2), other)));
    }
}

TEST(Harness, CsvShape) {
    const auto text = csv_of(run_workload(cluster(Scheme::erda), small_spec(Mix::ycsb_b)));
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> kinds;
    std::getline(in, line);
    const auto columns = std::count(line.begin(), line.end(), ',');
    while (std::getline(in, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), columns) << line;
        std::istringstream f(line);
        std::string field;
        for (int i = 0; i < 8; ++i) std::getline(f, field, ',');
        kinds.push_back(field);
    }
    EXPECT_EQ(kinds, (std::vector<std::string>{"load", "get", "put", "all"}));
}

TEST(Harness, ReadOnlyErdaUsesNoServerCpu) {
    auto r = run_workload(cluster(Scheme::erda, 2), small_spec(Mix::ycsb_c));
    EXPECT_EQ(r.ops, 1500u);
    EXPECT_EQ(r.server_cpu_events, 0u);
    EXPECT_EQ(r.gets_not_two_reads, 0u);
    EXPECT_EQ(r.one_sided_reads, 2 * r.ops);
    EXPECT_EQ(r.gets.failures, 0u);
    auto redo = run_workload(cluster(Scheme::redo, 2), small_spec(Mix::ycsb_c));
    EXPECT_EQ(redo.server_cpu_events, redo.ops);
}

TEST(Harness, PaperBytesOfUpdateOnlyMatchClosedForm) {
    for (auto scheme : {Scheme::erda, Scheme::redo, Scheme::raw}) {
        auto spec = small_spec(Mix::update_only, 100);
        auto r = run_workload(cluster(scheme), spec);
        const std::size_t n = spec.key_size + spec.value_size;
        EXPECT_EQ(r.paper_bytes, r.ops * paper_cost(scheme, OpKind::update, spec.key_size, n)) << to_string(scheme);
        EXPECT_EQ(r.load_paper_bytes, spec.key_count * paper_cost(scheme, OpKind::create, spec.key_size, n));
    }
}

TEST(Harness, AuditPasses) {
    RunOptions o;
    o.audit = true;
    for (auto scheme : {Scheme::erda, Scheme::redo, Scheme::raw}) {
        auto r = run_workload(cluster(scheme, 3), small_spec(Mix::ycsb_a), o);
        EXPECT_TRUE(r.audited);
        EXPECT_TRUE(r.audit_ok) << to_string(scheme) << ": " << r.audit_detail;
    }
}

TEST(Harness, NvmDumpLoadsBack) {
    RunOptions o;
    const auto path = std::filesystem::temp_directory_path() / "erda_harness_dump.img";
    o.nvm_dump = path;
    run_workload(cluster(Scheme::erda), small_spec(Mix::ycsb_a), o);
    auto dev = NvmDevice::load(path);
    std::filesystem::remove(path);
    Scheduler sched(1);
    Fabric fab(sched, CostModel{});
    auto ep = fab.add_endpoint("server", &dev);
    auto server = ErdaServer::recover(fab, ep, dev);
    EXPECT_TRUE(server->recovery_report().lost_keys.empty());
    EXPECT_EQ(server->index().live_count(), 200u);
}

TEST(Harness, SmallCrashTests) {
    for (auto scheme : {Scheme::erda, Scheme::redo, Scheme::raw}) {
        for (auto scenario : {CrashScenario::client_crash_mid_put, CrashScenario::server_crash_restart}) {
            CrashTestOptions o;
            o.scheme = scheme;
            o.scenario = scenario;
            o.max_subset_units = 4;
            auto r = run_crashtest(o);
            EXPECT_TRUE(r.passed()) << to_string(scheme) << " " << to_string(scenario) << ": " << r.first_failure;
        }
    }
}

TEST(Harness, SkippingCrcIsCaught) {
    CrashTestOptions o;
    o.max_subset_units = 4;
    o.unsafe_skip_crc = true;
    auto r = run_crashtest(o);
    EXPECT_GT(r.failures, 0u);
}

TEST(Harness, RecoveryCases) {
    const auto dir = std::filesystem::temp_directory_path() / "erda_harness_recovery";
    std::filesystem::create_directories(dir);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto c = run_recovery_case(seed, dir);
        EXPECT_TRUE(c.ok) << "seed " << seed << ": " << c.detail;
    }
    std::filesystem::remove_all(dir);
}

TEST(Harness, CleanTestSeeds) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        CleanTestOptions o;
        o.seed = seed;
        auto r = run_cleantest(o);
        EXPECT_TRUE(r.ok) << "seed " << seed << ": " << r.failure;
        EXPECT_GT(r.cleanings_under_load, 0u) << "seed " << seed;
        EXPECT_EQ(r.reclaimed, r.expected_reclaimed);
    }
}

TEST(Harness, UpdatesAreNotFasterDuringCleaning) {
    CleanTestOptions o;
    o.read_fraction = 0;
    o.delete_fraction = 0;
    o.jitter_ns = 0;
    o.seed = 5;
    auto r = run_cleantest(o);
    ASSERT_TRUE(r.ok) << r.failure;
    ASSERT_GT(r.ops_during_cleaning, 0u);
    EXPECT_GE(r.mean_latency_cleaning_ns, r.mean_latency_normal_ns);
}

TEST(Harness, MergeReports) {
    const auto dir = std::filesystem::temp_directory_path() / "erda_harness_merge";
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> files;
    for (auto scheme : {Scheme::erda, Scheme::redo}) {
        files.push_back(dir / (std::string(to_string(scheme)) + ".csv"));
        std::ofstream out(files.back());
        out << csv_of(run_workload(cluster(scheme), small_spec(Mix::ycsb_a)));
    }
    std::ostringstream merged;
    merge_reports(files, merged);
    std::istringstream in(merged.str());
    std::string header, row, extra;
    std::getline(in, header);
    std::getline(in, row);
    EXPECT_FALSE(std::getline(in, extra));
    EXPECT_EQ(header, "mix,value_size,clients,erda_get_ns,erda_put_ns,erda_paper_bytes,erda_ops_per_s,"
                      "redo_get_ns,redo_put_ns,redo_paper_bytes,redo_ops_per_s");
    EXPECT_EQ(row.rfind("ycsb_a,64,1,", 0), 0u) << row;
    EXPECT_THROW(merge_reports({dir / "missing.csv"}, merged), std::runtime_error);
    std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace erda
