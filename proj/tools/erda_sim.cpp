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

// erda_sim: run workloads, crash-point enumeration and cleaning stress tests
// against the simulated cluster.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

#include "erda/harness.hpp"

using namespace erda;

namespace {

template <class E>
E parse_or_throw(const std::string& text, std::optional<E> (*parse)(std::string_view), const char* what) {
    auto v = parse(text);
    if (!v) throw std::runtime_error(std::string("unknown ") + what + " '" + text + "'");
    return *v;
}

void add_cost_options(CLI::App* app, CostModel& c) {
    app->add_option("--rtt", c.rtt_ns, "network round trip (ns)")->group("Cost model");
    app->add_option("--per-byte", c.per_byte_ns, "wire time per payload byte (ns)")->group("Cost model");
    app->add_option("--cpu-op", c.server_cpu_op_ns, "server CPU time per request (ns)")->group("Cost model");
    app->add_option("--two-sided-overhead", c.two_sided_overhead_ns, "receive path of a two-sided message (ns)")
        ->group("Cost model");
    app->add_option("--client-op-overhead", c.client_op_overhead_ns, "client software path per operation (ns)")
        ->group("Cost model");
    app->add_option("--nvm-write-extra", c.nvm_write_extra_ns, "extra NVM write latency (ns)")->group("Cost model");
    app->add_option("--jitter", c.jitter_ns, "uniform per-leg delay bound (ns)")->group("Cost model");
}

void add_geometry_options(CLI::App* app, ErdaConfig& e, BaselineConfig& b) {
    app->add_option("--table-slots", e.table_slots, "hash table slots")->group("Geometry");
    app->add_option("--heads", e.heads, "log heads (erda)")->group("Geometry");
    app->add_option("--region-size", e.region_size, "log region bytes (erda)")->group("Geometry");
    app->add_option("--segment-size", e.segment_size, "log segment bytes (erda)")->group("Geometry");
    app->add_option("--regions", e.region_count, "log regions on the device (erda)")->group("Geometry");
    app->add_option("--max-chain", e.max_chain, "regions per chain (erda)")->group("Geometry");
    app->add_option("--max-object", e.max_object_size, "largest encoded object")->group("Geometry");
    app->add_option("--clean-threshold", e.clean_threshold, "chain occupancy that triggers cleaning")
        ->group("Geometry");
    app->add_option("--ring-slots", b.ring_slots, "log ring slots (baselines)")->group("Geometry");
    app->add_option("--heap-size", b.heap_size, "destination heap bytes (baselines)")->group("Geometry");
}

std::filesystem::path with_suffix(const std::filesystem::path& p, const std::string& tag) {
    auto out = p;
    out.replace_filename(p.stem().string() + "-" + tag + p.extension().string());
    return out;
}

int cmd_run(const ClusterConfig& base, std::vector<Scheme> schemes, WorkloadSpec spec,
            std::vector<std::uint32_t> clients, std::uint64_t seed, const std::string& csv_path,
            const std::string& trace_path, const std::string& dump_path, bool audit) {
    spec.seed = seed;
    spec.validate();
    std::ofstream trace;
    if (!trace_path.empty()) {
        trace.open(trace_path);
        if (!trace) throw std::runtime_error("cannot open " + trace_path);
    }
    std::vector<RunReport> reports;
    bool audit_ok = true;
    const bool many = schemes.size() * clients.size() > 1;
    for (Scheme s : schemes) {
        for (std::uint32_t n : clients) {
            ClusterConfig cc = base;
            cc.scheme = s;
            cc.clients = n;
            cc.seed = seed;
            RunOptions ro;
            ro.audit = audit;
            if (trace.is_open()) ro.trace_sink = &trace;
            if (!dump_path.empty())
                ro.nvm_dump = many ? with_suffix(dump_path, std::string(to_string(s)) + "-c" + std::to_string(n))
                                   : std::filesystem::path(dump_path);
            reports.push_back(run_workload(cc, spec, ro));
            if (audit && !reports.back().audit_ok) {
                audit_ok = false;
                std::cerr << "trace audit failed for " << to_string(s) << " with " << n
                          << " clients: " << reports.back().audit_detail << "\n";
            }
        }
    }
    write_table(std::cout, reports);
    std::ofstream csv_file;
    std::ostream* csv = &std::cout;
    if (!csv_path.empty()) {
        csv_file.open(csv_path);
        if (!csv_file) throw std::runtime_error("cannot open " + csv_path);
        csv = &csv_file;
    } else {
        std::cout << "\n";
    }
    write_csv_header(*csv);
    for (const auto& r : reports) write_csv(*csv, r);
    return audit_ok ? 0 : 1;
}

int cmd_crashtest(const CrashTestOptions& o) {
    const auto r = run_crashtest(o);
    std::cout << "crashtest " << to_string(o.scheme) << " " << to_string(o.scenario) << ": " << r.cases
              << " crash points over " << r.steps + 1 << " scheduler steps, " << r.failures << " failures, "
              << r.recovered_reads << " reads served from the older version\n";
    if (!r.first_failure.empty()) std::cout << "first failure: " << r.first_failure << "\n";
    std::cout << (r.passed() ? "PASS" : "FAIL") << "\n";
    return r.passed() ? 0 : 1;
}

int cmd_cleantest(CleanTestOptions o, std::uint32_t seeds) {
    std::uint32_t failed = 0;
    std::uint64_t ops = 0;
    std::uint64_t during = 0;
    double lat_clean = 0;
    double lat_normal = 0;
    std::uint64_t cleanings = 0;
    const std::uint64_t first = o.seed;
    for (std::uint32_t i = 0; i < seeds; ++i) {
        o.seed = first + i;
        const auto r = run_cleantest(o);
        if (!r.ok) {
            ++failed;
            std::cout << "seed " << o.seed << ": FAIL " << r.failure << "\n";
            continue;
        }
        ops += r.ops;
        during += r.ops_during_cleaning;
        cleanings += r.cleanings_under_load;
        lat_clean += r.mean_latency_cleaning_ns * static_cast<double>(r.ops_during_cleaning);
        lat_normal += r.mean_latency_normal_ns * static_cast<double>(r.ops - r.ops_during_cleaning);
        std::cout << "seed " << o.seed << ": ok, " << r.cleanings_under_load << " cleanings under load, reclaimed "
                  << r.reclaimed << " bytes (oracle " << r.expected_reclaimed << ")\n";
    }
    std::cout << "ops " << ops << ", cleanings " << cleanings << ", mean latency during cleaning "
              << (during ? lat_clean / static_cast<double>(during) : 0.0) << " ns, outside cleaning "
              << (ops > during ? lat_normal / static_cast<double>(ops - during) : 0.0)
              << " ns (simulated, cost-model output)\n";
    std::cout << (failed == 0 ? "PASS" : "FAIL") << "\n";
    return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Erda simulator: workloads, crash-point enumeration and cleaning stress tests"};
    app.set_config("--config", "", "key=value config file; command-line flags override it");
    app.require_subcommand(1);
    std::uint64_t seed = 1;
    app.add_option("--seed", seed, "seed for every random choice")->capture_default_str();

    // run
    ClusterConfig cluster;
    WorkloadSpec spec;
    std::vector<std::string> scheme_names{"erda"};
    std::string mix_name = "ycsb_a";
    std::vector<std::uint32_t> clients{1};
    std::string csv_path, trace_path, dump_path;
    bool audit = false;
    auto* run = app.add_subcommand("run", "load keys and replay a YCSB-style op stream");
    run->add_option("--scheme", scheme_names, "erda, redo, raw (comma separated)")
        ->delimiter(',')
        ->check(CLI::IsMember({"erda", "redo", "raw"}));
    run->add_option("--mix", mix_name, "ycsb_a, ycsb_b, ycsb_c, update_only")
        ->check(CLI::IsMember({"ycsb_a", "ycsb_b", "ycsb_c", "update_only"}))
        ->capture_default_str();
    run->add_option("--keys", spec.key_count, "distinct keys")->capture_default_str();
    run->add_option("--key-size", spec.key_size, "key bytes")->capture_default_str();
    run->add_option("--value-size", spec.value_size, "value bytes")->capture_default_str();
    run->add_option("--ops", spec.op_count, "measured operations")->capture_default_str();
    run->add_option("--zipf", spec.zipf_theta, "Zipfian skew")->capture_default_str();
    run->add_option("--clients", clients, "client counts (comma separated)")->delimiter(',');
    run->add_option("--csv", csv_path, "write the CSV here instead of stdout");
    run->add_option("--trace", trace_path, "write every fabric verb as JSON lines");
    run->add_option("--nvm-dump", dump_path, "dump the server NVM image after the run");
    run->add_flag("--audit", audit, "recompute fabric counters from the trace and compare");
    add_cost_options(run, cluster.cost);
    add_geometry_options(run, cluster.erda, cluster.baseline);

    // crashtest
    CrashTestOptions crash;
    std::string image_dir;
    auto* ct = app.add_subcommand("crashtest", "enumerate crash points of a scripted history");
    std::string crash_scheme = "erda";
    std::string scenario = "client-crash-mid-put";
    ct->add_option("--scheme", crash_scheme, "erda, redo, raw")
        ->check(CLI::IsMember({"erda", "redo", "raw"}))
        ->capture_default_str();
    ct->add_option("--scenario", scenario, "client-crash-mid-put, server-crash-restart, crash-during-cleaning-finish")
        ->check(CLI::IsMember({"client-crash-mid-put", "server-crash-restart", "crash-during-cleaning-finish"}))
        ->capture_default_str();
    ct->add_option("--unit", crash.unit, "persistence unit (bytes)")->capture_default_str();
    ct->add_option("--max-subset-units", crash.max_subset_units, "enumerate all unit subsets up to this many units")
        ->capture_default_str();
    ct->add_option("--nvm-dump", image_dir, "restart through NVM images written to this directory");
    ct->add_flag("--unsafe-skip-crc", crash.unsafe_skip_crc)->group("");

    // cleantest
    CleanTestOptions clean;
    std::uint32_t seeds = 1;
    auto* cl = app.add_subcommand("cleantest", "concurrent traffic across log cleaning");
    cl->add_option("--seeds", seeds, "number of consecutive seeds")->capture_default_str();
    cl->add_option("--clients", clean.clients, "clients")->capture_default_str();
    cl->add_option("--keys", clean.keys, "keys")->capture_default_str();
    cl->add_option("--ops", clean.ops_per_client, "operations per client")->capture_default_str();
    cl->add_option("--read-fraction", clean.read_fraction, "share of gets")->capture_default_str();
    cl->add_option("--delete-fraction", clean.delete_fraction, "share of deletes")->capture_default_str();
    cl->add_option("--jitter", clean.jitter_ns, "uniform per-leg delay bound (ns)")->capture_default_str();

    // report
    std::vector<std::filesystem::path> inputs;
    std::string report_out;
    auto* rep = app.add_subcommand("report", "merge run CSVs into a comparison table");
    rep->add_option("inputs", inputs, "CSV files from run")->required()->check(CLI::ExistingFile);
    rep->add_option("-o,--out", report_out, "write the table here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            cluster.erda.validate();
            cluster.baseline.validate();
            spec.mix = parse_or_throw<Mix>(mix_name, parse_mix, "mix");
            std::vector<Scheme> schemes;
            for (const auto& n : scheme_names) schemes.push_back(parse_or_throw<Scheme>(n, parse_scheme, "scheme"));
            return cmd_run(cluster, schemes, spec, clients, seed, csv_path, trace_path, dump_path, audit);
        }
        if (*ct) {
            crash.seed = seed;
            crash.scheme = parse_or_throw<Scheme>(crash_scheme, parse_scheme, "scheme");
            crash.scenario = parse_or_throw<CrashScenario>(scenario, parse_crash_scenario, "scenario");
            if (!image_dir.empty()) crash.image_dir = image_dir;
            return cmd_crashtest(crash);
        }
        if (*cl) {
            clean.seed = seed;
            return cmd_cleantest(clean, seeds);
        }
        if (*rep) {
            if (report_out.empty()) {
                merge_reports(inputs, std::cout);
            } else {
                std::ofstream out(report_out);
                if (!out) throw std::runtime_error("cannot open " + report_out);
                merge_reports(inputs, out);
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
