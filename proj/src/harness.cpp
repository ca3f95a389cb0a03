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

#include "erda/harness.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <tuple>

namespace erda {

std::uint64_t device_capacity(const ClusterConfig& cfg) {
    if (cfg.scheme == Scheme::erda) return ErdaLayout(cfg.erda).capacity();
    return BaselineLayout(cfg.scheme, cfg.baseline).capacity();
}

Cluster::Cluster(const ClusterConfig& cfg)
    : cfg_(cfg), sched_(cfg.seed), fab_(sched_, cfg.cost), dev_(std::make_unique<NvmDevice>(device_capacity(cfg))) {
    dev_->set_extra_write_latency_ns(cfg.cost.nvm_write_extra_ns);
    server_ep_ = fab_.add_endpoint("server", dev_.get());
    for (std::uint32_t i = 0; i < cfg.clients; ++i) client_eps_.push_back(fab_.add_endpoint("client" + std::to_string(i)));
    if (cfg.scheme == Scheme::erda)
        server_ = ErdaServer::format(fab_, server_ep_, *dev_, cfg.erda);
    else
        server_ = BaselineServer::format(fab_, server_ep_, *dev_, cfg.scheme, cfg.baseline);
    clients_.resize(cfg.clients);
    for (std::size_t i = 0; i < clients_.size(); ++i) restart_client(i);
}

Cluster::~Cluster() {
    clients_.clear();
    server_.reset();
}

std::unique_ptr<KvClient> Cluster::make_client(std::size_t i) {
    if (cfg_.scheme == Scheme::erda)
        return std::make_unique<ErdaClient>(fab_, client_eps_[i], server_ep_, cfg_.erda_client);
    return std::make_unique<BaselineClient>(fab_, client_eps_[i], server_ep_, cfg_.scheme);
}

void Cluster::restart_client(std::size_t i) {
    clients_[i].reset();
    if (!fab_.alive(client_eps_[i]) || fab_.connected(client_eps_[i], server_ep_)) {
        fab_.restart_endpoint(client_eps_[i], nullptr);
    }
    fab_.connect(client_eps_[i], server_ep_);
    clients_[i] = make_client(i);
    if (!drive(sched_, clients_[i]->connect())) throw std::runtime_error("client failed to connect");
}

void Cluster::quiesce() { sched_.run(); }

void Cluster::crash_server(const CrashModel& model) {
    fab_.crash_endpoint(server_ep_, model);
    server_.reset();
}

void Cluster::restart_server(std::optional<NvmDevice> image) {
    for (auto& c : clients_) c.reset();
    server_.reset();
    for (auto ep : client_eps_) fab_.restart_endpoint(ep, nullptr);
    if (image) dev_ = std::make_unique<NvmDevice>(std::move(*image));
    if (fab_.alive(server_ep_)) fab_.crash_endpoint(server_ep_);
    fab_.restart_endpoint(server_ep_, dev_.get());
    // Stale events of the old incarnation die with its liveness token.
    if (cfg_.scheme == Scheme::erda)
        server_ = ErdaServer::recover(fab_, server_ep_, *dev_);
    else
        server_ = BaselineServer::recover(fab_, server_ep_, *dev_);
    for (std::size_t i = 0; i < clients_.size(); ++i) restart_client(i);
}

void Cluster::crash_client(std::size_t i, const CrashModel& model) {
    fab_.crash_endpoint(client_eps_[i], model);
    clients_[i].reset();
}

// ---------------------------------------------------------------------------
// Workload runs

namespace {

struct Sample {
    OpType type;
    SimTime latency;
    bool ok;
};

Task<void> client_loop(Fabric& fab, KvClient& c, const std::vector<Op>& ops, std::size_t first,
                       std::size_t stride, std::vector<Sample>* samples, std::uint64_t* not_two_reads) {
    Scheduler& sched = fab.scheduler();
    for (std::size_t i = first; i < ops.size(); i += stride) {
        const Op& op = ops[i];
        const SimTime t0 = sched.now();
        bool ok = false;
        if (const SimTime prep = fab.cost().client_op_overhead_ns; prep && !co_await fab.sleep(c.endpoint(), prep)) co_return;
        if (op.type == OpType::get) {
            auto g = co_await c.get(op.key);
            ok = g.has_value();
            if (not_two_reads && ok && c.counters().last_get_reads != 2) ++*not_two_reads;
        } else {
            ok = co_await c.put(op.key, op.value) == WriteStatus::ok;
        }
        if (samples) samples->push_back(Sample{op.type, sched.now() - t0, ok});
    }
}

void run_ops(Cluster& cl, const std::vector<Op>& ops, std::vector<Sample>* samples, std::uint64_t* not_two_reads) {
    std::vector<Task<void>> tasks;
    const std::size_t n = cl.client_count();
    std::vector<std::vector<Sample>> per(n);
    for (std::size_t i = 0; i < n; ++i)
        tasks.push_back(client_loop(cl.fab(), cl.client(i), ops, i, n, samples ? &per[i] : nullptr, not_two_reads));
    for (auto& t : tasks) t.start();
    cl.sched().run_while([&] {
        for (auto& t : tasks)
            if (!t.done()) return true;
        return false;
    });
    for (auto& t : tasks) {
        if (!t.done()) throw std::runtime_error("workload stalled");
        t.rethrow_if_failed();
    }
    if (samples)
        for (auto& v : per) samples->insert(samples->end(), v.begin(), v.end());
}

std::string audit_trace(Fabric& fab) {
    std::map<EndpointId, EndpointStats> re;
    for (const auto& ev : fab.trace()) {
        switch (ev.kind) {
            case VerbKind::rdma_read: re[ev.src].reads_posted++; break;
            case VerbKind::rdma_write: re[ev.src].writes_posted++; break;
            case VerbKind::rdma_write_with_imm: re[ev.src].writes_imm_posted++; break;
            case VerbKind::send: re[ev.src].sends_posted++; break;
            case VerbKind::recv_completion: re[ev.dst].server_cpu_events++; break;
            case VerbKind::ack: break;
        }
        if (ev.kind == VerbKind::rdma_write || ev.kind == VerbKind::rdma_write_with_imm || ev.kind == VerbKind::send)
            re[ev.src].bytes_posted += ev.len;
    }
    std::ostringstream bad;
    for (EndpointId id = 0; id < fab.endpoint_count(); ++id) {
        const auto& s = fab.stats(id);
        const auto& t = re[id];
        auto check = [&](const char* what, std::uint64_t counter, std::uint64_t traced) {
            if (counter != traced) bad << fab.name(id) << '.' << what << ": counter " << counter << " trace " << traced << "; ";
        };
        check("reads", s.reads_posted, t.reads_posted);
        check("writes", s.writes_posted, t.writes_posted);
        check("writes_imm", s.writes_imm_posted, t.writes_imm_posted);
        check("sends", s.sends_posted, t.sends_posted);
        check("bytes", s.bytes_posted, t.bytes_posted);
        check("cpu_events", s.server_cpu_events, t.server_cpu_events);
    }
    return bad.str();
}

}  // namespace

RunReport run_workload(const ClusterConfig& ccfg, const WorkloadSpec& spec, const RunOptions& opts) {
    spec.validate();
    Cluster cl(ccfg);
    RunReport r;
    r.scheme = ccfg.scheme;
    r.spec = spec;
    r.clients = ccfg.clients;
    r.seed = spec.seed;

    const auto load = load_phase(spec);
    run_ops(cl, load, nullptr, nullptr);
    cl.quiesce();
    cl.nvm().flush();
    r.load_paper_bytes = cl.nvm().write_bytes_paper();
    r.load_actual_bytes = cl.nvm().write_bytes_actual();
    const std::uint64_t cleanings_before = cl.erda() ? cl.erda()->counters().cleanings_completed : 0;
    cl.nvm().reset_counters();
    cl.fab().reset_stats();
    if (opts.audit) {
        cl.fab().clear_trace();
        cl.fab().enable_trace(true);
    }
    cl.fab().set_trace_sink(opts.trace_sink);

    const auto ops = generate(spec);
    std::vector<Sample> samples;
    const SimTime start = cl.sched().now();
    run_ops(cl, ops, &samples, &r.gets_not_two_reads);
    r.makespan_ns = cl.sched().now() - start;
    cl.quiesce();
    cl.nvm().flush();
    cl.fab().set_trace_sink(nullptr);

    r.ops = samples.size();
    r.paper_bytes = cl.nvm().write_bytes_paper();
    r.actual_bytes = cl.nvm().write_bytes_actual();
    r.server_cpu_events = cl.fab().stats(cl.server_endpoint()).server_cpu_events;
    SimTime total = 0;
    SimTime get_total = 0;
    SimTime put_total = 0;
    for (const auto& s : samples) {
        total += s.latency;
        auto& k = s.type == OpType::get ? r.gets : r.puts;
        (s.type == OpType::get ? get_total : put_total) += s.latency;
        k.ops++;
        if (!s.ok) k.failures++;
    }
    r.mean_latency_ns = r.ops ? static_cast<double>(total) / r.ops : 0;
    r.gets.mean_latency_ns = r.gets.ops ? static_cast<double>(get_total) / r.gets.ops : 0;
    r.puts.mean_latency_ns = r.puts.ops ? static_cast<double>(put_total) / r.puts.ops : 0;
    r.throughput_ops = r.makespan_ns ? static_cast<double>(r.ops) * 1e9 / static_cast<double>(r.makespan_ns) : 0;
    for (std::size_t i = 0; i < cl.client_count(); ++i) {
        const auto& st = cl.fab().stats(cl.client(i).endpoint());
        r.round_trips += st.round_trips();
        r.one_sided_reads += st.reads_posted;
        r.two_sided_ops += cl.client(i).counters().two_sided_ops;
    }
    if (cl.erda()) r.cleanings = cl.erda()->counters().cleanings_completed - cleanings_before;
    if (opts.audit) {
        r.audited = true;
        r.audit_detail = audit_trace(cl.fab());
        r.audit_ok = r.audit_detail.empty();
    }
    if (opts.nvm_dump) cl.nvm().dump(*opts.nvm_dump);
    return r;
}

// ---------------------------------------------------------------------------
// Reports

void write_csv_header(std::ostream& out) {
    out << "scheme,mix,value_size,key_size,key_count,clients,seed,op_kind,ops,failures,mean_latency_ns,"
           "paper_bytes,actual_bytes,server_cpu_events,round_trips_per_op,throughput_ops_per_s\n";
}

void write_csv(std::ostream& out, const RunReport& r) {
    auto row = [&](std::string_view kind, std::uint64_t ops, std::uint64_t failures, double lat,
                   std::optional<std::uint64_t> paper, std::optional<std::uint64_t> actual, bool run_level) {
        out << to_string(r.scheme) << ',' << to_string(r.spec.mix) << ',' << r.spec.value_size << ','
            << r.spec.key_size << ',' << r.spec.key_count << ',' << r.clients << ',' << r.seed << ',' << kind << ','
            << ops << ',' << failures << ',' << std::fixed << std::setprecision(1) << lat << ',';
        if (paper) out << *paper;
        out << ',';
        if (actual) out << *actual;
        out << ',';
        if (run_level)
            out << r.server_cpu_events << ',' << std::setprecision(3) << r.round_trips_per_op() << ','
                << std::setprecision(1) << r.throughput_ops;
        else
            out << ",,";
        out << '\n';
    };
    row("load", r.spec.key_count, 0, 0.0, r.load_paper_bytes, r.load_actual_bytes, false);
    row("get", r.gets.ops, r.gets.failures, r.gets.mean_latency_ns, std::nullopt, std::nullopt, false);
    row("put", r.puts.ops, r.puts.failures, r.puts.mean_latency_ns, std::nullopt, std::nullopt, false);
    row("all", r.ops, r.gets.failures + r.puts.failures, r.mean_latency_ns, r.paper_bytes, r.actual_bytes, true);
}

void write_table(std::ostream& out, const std::vector<RunReport>& reports) {
    out << std::left << std::setw(7) << "scheme" << std::setw(13) << "mix" << std::right << std::setw(7) << "value"
        << std::setw(8) << "clients" << std::setw(10) << "ops" << std::setw(13) << "get_lat_ns" << std::setw(13)
        << "put_lat_ns" << std::setw(14) << "paper_bytes" << std::setw(14) << "actual_bytes" << std::setw(11)
        << "cpu_events" << std::setw(9) << "rt/op" << std::setw(14) << "ops/s" << '\n';
    for (const auto& r : reports) {
        out << std::left << std::setw(7) << to_string(r.scheme) << std::setw(13) << to_string(r.spec.mix)
            << std::right << std::setw(7) << r.spec.value_size << std::setw(8) << r.clients << std::setw(10) << r.ops
            << std::fixed << std::setprecision(0) << std::setw(13) << r.gets.mean_latency_ns << std::setw(13)
            << r.puts.mean_latency_ns << std::setw(14) << r.paper_bytes << std::setw(14) << r.actual_bytes
            << std::setw(11) << r.server_cpu_events << std::setprecision(2) << std::setw(9) << r.round_trips_per_op()
            << std::setprecision(0) << std::setw(14) << r.throughput_ops << '\n';
    }
    out << "(latency and throughput are simulated-time outputs of the cost model)\n";
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

void merge_reports(const std::vector<std::filesystem::path>& inputs, std::ostream& out) {
    // (mix, value, clients) -> scheme -> {get latency, put latency, paper bytes, throughput}
    struct Cell {
        std::string get_lat, put_lat, paper, tput;
    };
    std::map<std::tuple<std::string, long, long>, std::map<std::string, Cell>> rows;
    std::vector<std::string> schemes;
    for (const auto& path : inputs) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path.string());
        std::string line;
        std::getline(in, line);
        const auto header = split_csv(line);
        auto col = [&](std::string_view name) {
            for (std::size_t i = 0; i < header.size(); ++i)
                if (header[i] == name) return i;
            throw std::runtime_error(path.string() + ": missing column " + std::string(name));
        };
        const auto c_scheme = col("scheme"), c_mix = col("mix"), c_value = col("value_size"),
                   c_clients = col("clients"), c_kind = col("op_kind"), c_lat = col("mean_latency_ns"),
                   c_paper = col("paper_bytes"), c_tput = col("throughput_ops_per_s");
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_csv(line);
            if (f.size() < header.size()) throw std::runtime_error(path.string() + ": short row");
            auto& cell = rows[{f[c_mix], std::stol(f[c_value]), std::stol(f[c_clients])}][f[c_scheme]];
            if (std::find(schemes.begin(), schemes.end(), f[c_scheme]) == schemes.end()) schemes.push_back(f[c_scheme]);
            if (f[c_kind] == "get") cell.get_lat = f[c_lat];
            if (f[c_kind] == "put") cell.put_lat = f[c_lat];
            if (f[c_kind] == "all") {
                cell.paper = f[c_paper];
                cell.tput = f[c_tput];
            }
        }
    }
    out << "mix,value_size,clients";
    for (const auto& s : schemes) out << ',' << s << "_get_ns," << s << "_put_ns," << s << "_paper_bytes," << s << "_ops_per_s";
    out << '\n';
    for (const auto& [key, by_scheme] : rows) {
        out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key);
        for (const auto& s : schemes) {
            auto it = by_scheme.find(s);
            if (it == by_scheme.end()) {
                out << ",,,,";
                continue;
            }
            out << ',' << it->second.get_lat << ',' << it->second.put_lat << ',' << it->second.paper << ','
                << it->second.tput;
        }
        out << '\n';
    }
}

}  // namespace erda
