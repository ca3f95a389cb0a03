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

// Experiment drivers: a simulated cluster of one server and N clients, the
// workload runner with its CSV report, crash-point enumeration and the
// cleaning stress test.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "erda/baseline.hpp"
#include "erda/erda.hpp"
#include "erda/workload.hpp"

namespace erda {

/// Drives the scheduler until `t` completes. Throws if the simulation runs
/// dry first.
template <class T>
T drive(Scheduler& sched, Task<T> t) {
    t.start();
    sched.run_while([&] { return !t.done(); });
    if (!t.done()) throw std::runtime_error("task stalled: simulation ran out of events");
    if constexpr (std::is_void_v<T>) {
        t.rethrow_if_failed();
    } else {
        return std::move(t.result());
    }
}

struct ClusterConfig {
    Scheme scheme = Scheme::erda;
    ErdaConfig erda;
    BaselineConfig baseline;
    CostModel cost;
    ErdaClientOptions erda_client;
    std::uint32_t clients = 1;
    std::uint64_t seed = 1;
};

class Cluster {
public:
    /// Formats a fresh device and connects every client.
    explicit Cluster(const ClusterConfig& cfg);
    ~Cluster();

    const ClusterConfig& config() const { return cfg_; }
    Scheduler& sched() { return sched_; }
    Fabric& fab() { return fab_; }
    NvmDevice& nvm() { return *dev_; }
    KvServer& server() { return *server_; }
    ErdaServer* erda() { return dynamic_cast<ErdaServer*>(server_.get()); }
    BaselineServer* baseline() { return dynamic_cast<BaselineServer*>(server_.get()); }
    EndpointId server_endpoint() const { return server_ep_; }
    std::size_t client_count() const { return clients_.size(); }
    KvClient& client(std::size_t i) { return *clients_.at(i); }

    /// Runs every pending event, including background apply and cleaning work.
    void quiesce();

    /// Power failure of the server: the model picks which in-flight NVM
    /// stores survive. The server object is dropped.
    void crash_server(const CrashModel& model);
    /// Recovers a crashed server from `image` (or from the crashed device),
    /// then reconnects every client.
    void restart_server(std::optional<NvmDevice> image = std::nullopt);
    /// Client failure: the model picks which bytes of its in-flight writes
    /// reach the server.
    void crash_client(std::size_t i, const CrashModel& model);
    /// Fresh incarnation of client `i`, connected.
    void restart_client(std::size_t i);

private:
    std::unique_ptr<KvClient> make_client(std::size_t i);

    ClusterConfig cfg_;
    Scheduler sched_;
    Fabric fab_;
    std::unique_ptr<NvmDevice> dev_;
    EndpointId server_ep_;
    std::vector<EndpointId> client_eps_;
    std::unique_ptr<KvServer> server_;
    std::vector<std::unique_ptr<KvClient>> clients_;
};

std::uint64_t device_capacity(const ClusterConfig& cfg);

// ---------------------------------------------------------------------------
// Workload runs

struct KindStats {
    std::uint64_t ops = 0;
    std::uint64_t failures = 0;
    double mean_latency_ns = 0;
};

struct RunReport {
    Scheme scheme = Scheme::erda;
    WorkloadSpec spec;
    std::uint32_t clients = 1;
    std::uint64_t seed = 1;

    std::uint64_t load_paper_bytes = 0;
    std::uint64_t load_actual_bytes = 0;
    std::uint64_t ops = 0;
    std::uint64_t paper_bytes = 0;
    std::uint64_t actual_bytes = 0;
    std::uint64_t server_cpu_events = 0;
    std::uint64_t round_trips = 0;
    KindStats gets;
    KindStats puts;
    double mean_latency_ns = 0;
    SimTime makespan_ns = 0;
    double throughput_ops = 0;  ///< ops per simulated second

    std::uint64_t one_sided_reads = 0;  ///< posted by clients
    std::uint64_t gets_not_two_reads = 0;
    std::uint64_t two_sided_ops = 0;
    std::uint64_t cleanings = 0;

    bool audited = false;
    bool audit_ok = false;
    std::string audit_detail;

    double round_trips_per_op() const { return ops ? static_cast<double>(round_trips) / ops : 0.0; }
    double cpu_events_per_op() const { return ops ? static_cast<double>(server_cpu_events) / ops : 0.0; }
};

struct RunOptions {
    bool audit = false;
    std::ostream* trace_sink = nullptr;
    std::optional<std::filesystem::path> nvm_dump;
};

/// Loads every key, replays the op stream round-robin across the clients and
/// reports counters of the measured phase only.
RunReport run_workload(const ClusterConfig& cluster, const WorkloadSpec& spec, const RunOptions& opts = {});

/// CSV with one row per op kind (load, get, put, all).
void write_csv_header(std::ostream& out);
void write_csv(std::ostream& out, const RunReport& r);
void write_table(std::ostream& out, const std::vector<RunReport>& reports);

/// Merges run CSVs into one comparison table keyed by mix, value size and
/// client count, one latency and byte column per scheme.
void merge_reports(const std::vector<std::filesystem::path>& inputs, std::ostream& out);

// ---------------------------------------------------------------------------
// Crash-point enumeration

enum class CrashScenario { client_crash_mid_put, server_crash_restart, crash_during_cleaning };

std::string_view to_string(CrashScenario s);
std::optional<CrashScenario> parse_crash_scenario(std::string_view s);

struct CrashTestOptions {
    Scheme scheme = Scheme::erda;
    CrashScenario scenario = CrashScenario::client_crash_mid_put;
    std::size_t unit = 64;
    /// Subsets are enumerated exhaustively up to this many persistence units.
    std::size_t max_subset_units = 10;
    /// Restart the server through an on-disk NVM image instead of in memory.
    std::optional<std::filesystem::path> image_dir;
    bool unsafe_skip_crc = false;
    std::uint64_t seed = 1;
};

struct CrashTestReport {
    std::uint64_t cases = 0;
    std::uint64_t failures = 0;
    std::uint64_t steps = 0;
    std::uint64_t recovered_reads = 0;  ///< reads answered from the older version
    std::string first_failure;

    bool passed() const { return cases > 0 && failures == 0; }
};

CrashTestReport run_crashtest(const CrashTestOptions& opts);

/// One server crash at a seeded point of a seeded concurrent history, restart
/// through dump/load, then the checks of the recovery criterion: recovery
/// touched exactly the entries whose newest record is torn, and every key
/// reads back as allowed by the oracle.
struct RecoveryCase {
    bool ok = false;
    std::uint64_t torn_entries = 0;
    std::string detail;
};
RecoveryCase run_recovery_case(std::uint64_t seed, const std::filesystem::path& image_dir);

// ---------------------------------------------------------------------------
// Cleaning stress

struct CleanTestOptions {
    std::uint64_t seed = 1;
    std::uint32_t clients = 3;
    std::uint32_t keys = 24;
    std::uint32_t ops_per_client = 300;
    double delete_fraction = 0.1;
    double read_fraction = 0.4;
    SimTime jitter_ns = 400;
};

struct CleanTestReport {
    bool ok = false;
    std::string failure;
    std::uint64_t ops = 0;
    std::uint64_t cleanings_under_load = 0;
    std::uint64_t reclaimed = 0;
    std::uint64_t expected_reclaimed = 0;
    double mean_latency_cleaning_ns = 0;
    double mean_latency_normal_ns = 0;
    std::uint64_t ops_during_cleaning = 0;
};

CleanTestReport run_cleantest(const CleanTestOptions& opts);

/// Independent walk of one chain of `h`: total bytes of intact records, found
/// by parsing each segment from its start and stepping over holes.
std::uint64_t walk_chain_bytes(ErdaServer& s, std::uint32_t h, const NvmDevice& dev);

}  // namespace erda
