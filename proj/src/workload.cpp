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

#include "erda/workload.hpp"

#include <cmath>

#include "erda/index.hpp"
#include "erda/nvm.hpp"

namespace erda {

std::string_view to_string(Mix m) {
    switch (m) {
        case Mix::ycsb_a: return "ycsb_a";
        case Mix::ycsb_b: return "ycsb_b";
        case Mix::ycsb_c: return "ycsb_c";
        case Mix::update_only: return "update_only";
    }
    return "?";
}

std::optional<Mix> parse_mix(std::string_view s) {
    for (Mix m : {Mix::ycsb_a, Mix::ycsb_b, Mix::ycsb_c, Mix::update_only})
        if (s == to_string(m)) return m;
    return std::nullopt;
}

double write_fraction(Mix m) {
    switch (m) {
        case Mix::ycsb_a: return 0.5;
        case Mix::ycsb_b: return 0.05;
        case Mix::ycsb_c: return 0.0;
        case Mix::update_only: return 1.0;
    }
    return 0.0;
}

void WorkloadSpec::validate() const {
    if (key_count == 0) throw ContractViolation("key_count must be positive");
    if (key_size < 2 || key_size > kMaxInlineKey) throw ContractViolation("key_size must be 2..16");
    std::uint64_t room = 1;
    for (std::size_t i = 1; i < key_size && room < key_count; ++i) room *= 10;
    if (room < key_count) throw ContractViolation("key_size too small for key_count");
    if (!(zipf_theta > 0.0 && zipf_theta < 1.0)) throw ContractViolation("zipf_theta must be in (0,1)");
}

Zipfian::Zipfian(std::uint64_t n, double theta) : n_(n), theta_(theta) {
    if (n == 0) throw ContractViolation("zipfian over an empty range");
    alpha_ = 1.0 / (1.0 - theta);
    zetan_ = 0.0;
    for (std::uint64_t i = 1; i <= n; ++i) zetan_ += 1.0 / std::pow(static_cast<double>(i), theta);
    const double zeta2 = 1.0 + 1.0 / std::pow(2.0, theta);
    eta_ = (1.0 - std::pow(2.0 / static_cast<double>(n), 1.0 - theta)) / (1.0 - zeta2 / zetan_);
    half_pow_theta_ = std::pow(0.5, theta);
}

std::uint64_t Zipfian::next(std::mt19937_64& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double uz = u * zetan_;
    if (uz < 1.0) return 0;
    if (uz < 1.0 + half_pow_theta_) return n_ > 1 ? 1 : 0;
    const auto r = static_cast<std::uint64_t>(static_cast<double>(n_) * std::pow(eta_ * u - eta_ + 1.0, alpha_));
    return std::min(r, n_ - 1);
}

Bytes make_key(std::uint64_t i, std::size_t key_size) {
    std::string digits = std::to_string(i);
    if (digits.size() < key_size - 1) digits.insert(0, key_size - 1 - digits.size(), '0');
    return to_bytes("k" + digits);
}

namespace {

Bytes random_value(std::mt19937_64& rng, std::size_t n) {
    Bytes v(n);
    for (std::size_t i = 0; i < n; i += 8) {
        const std::uint64_t r = rng();
        for (std::size_t j = 0; j < 8 && i + j < n; ++j) v[i + j] = static_cast<std::uint8_t>(r >> (8 * j));
    }
    return v;
}

}  // namespace

std::vector<Op> load_phase(const WorkloadSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed ^ 0x6c6f6164ull);
    std::vector<Op> ops;
    ops.reserve(spec.key_count);
    for (std::uint64_t i = 0; i < spec.key_count; ++i)
        ops.push_back(Op{OpType::put, make_key(i, spec.key_size), random_value(rng, spec.value_size)});
    return ops;
}

std::vector<Op> generate(const WorkloadSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const Zipfian zipf(spec.key_count, spec.zipf_theta);
    std::bernoulli_distribution is_write(write_fraction(spec.mix));
    std::vector<Op> ops;
    ops.reserve(spec.op_count);
    for (std::uint64_t i = 0; i < spec.op_count; ++i) {
        Bytes key = make_key(zipf.next(rng), spec.key_size);
        if (is_write(rng))
            ops.push_back(Op{OpType::put, std::move(key), random_value(rng, spec.value_size)});
        else
            ops.push_back(Op{OpType::get, std::move(key), {}});
    }
    return ops;
}

}  // namespace erda
