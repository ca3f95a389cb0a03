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

// YCSB-style op streams with Zipfian key popularity.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "erda/bytes.hpp"

namespace erda {

enum class Mix { ycsb_a, ycsb_b, ycsb_c, update_only };

std::string_view to_string(Mix m);
std::optional<Mix> parse_mix(std::string_view s);
/// Fraction of operations that are writes.
double write_fraction(Mix m);

struct WorkloadSpec {
    Mix mix = Mix::ycsb_b;
    std::uint64_t key_count = 10000;
    std::size_t key_size = 8;
    std::size_t value_size = 1024;
    std::uint64_t op_count = 10000;
    double zipf_theta = 0.99;
    std::uint64_t seed = 1;

    /// Throws ContractViolation on an unusable spec.
    void validate() const;
};

/// Zipfian ranks over [0, n) with P(r) proportional to 1/(r+1)^theta, drawn
/// with the constant-time YCSB construction.
class Zipfian {
public:
    Zipfian(std::uint64_t n, double theta);

    std::uint64_t next(std::mt19937_64& rng) const;
    std::uint64_t n() const { return n_; }
    double zeta_n() const { return zetan_; }

private:
    std::uint64_t n_;
    double theta_;
    double alpha_;
    double zetan_;
    double eta_;
    double half_pow_theta_;
};

enum class OpType { get, put };

struct Op {
    OpType type;
    Bytes key;
    Bytes value;  ///< empty for gets
};

/// "k" followed by the zero-padded key number, `key_size` bytes in total.
Bytes make_key(std::uint64_t i, std::size_t key_size);

/// One create per key, in key order.
std::vector<Op> load_phase(const WorkloadSpec& spec);
/// The measured op stream; a pure function of the spec.
std::vector<Op> generate(const WorkloadSpec& spec);

}  // namespace erda
