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

#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "erda/nvm.hpp"
#include "erda/workload.hpp"

namespace erda {
namespace {

double harmonic(std::uint64_t n, double theta) {
    double z = 0;
    for (std::uint64_t i = n; i >= 1; --i) z += std::pow(static_cast<double>(i), -theta);
    return z;
}

TEST(Zipfian, NormalizerIsGeneralizedHarmonicSum) {
    for (auto [n, theta] : {std::pair{10ull, 0.5}, {1000ull, 0.99}, {100000ull, 0.9}}) {
        Zipfian z(n, theta);
        EXPECT_NEAR(z.zeta_n(), harmonic(n, theta), 1e-9 * harmonic(n, theta));
    }
}

TEST(Zipfian, FrequenciesMatchOracle) {
    const std::uint64_t n = 1000;
    const double theta = 0.99;
    const double zeta = harmonic(n, theta);
    Zipfian z(n, theta);
    std::mt19937_64 rng(3);
    const int draws = 1000000;
    std::vector<std::uint64_t> hist(n, 0);
    for (int i = 0; i < draws; ++i) {
        const auto r = z.next(rng);
        ASSERT_LT(r, n);
        hist[r]++;
    }
    // The two hottest ranks are drawn exactly; within 1% of 1/((r+1)^theta zeta).
    for (std::uint64_t r = 0; r < 2; ++r) {
        const double expect = std::pow(static_cast<double>(r + 1), -theta) / zeta;
        EXPECT_NEAR(static_cast<double>(hist[r]) / draws, expect, 0.01 * expect) << r;
    }
    // Beyond them the draw is an approximation; mass over rank bands stays
    // within 10% of the harmonic oracle (it overweights ranks 3-10 by about 8%).
    for (auto [lo, hi] : {std::pair{2ull, 10ull}, {10ull, 100ull}, {100ull, 1000ull}}) {
        double expect = 0;
        std::uint64_t got = 0;
        for (auto r = lo; r < hi; ++r) {
            expect += std::pow(static_cast<double>(r + 1), -theta) / zeta;
            got += hist[r];
        }
        EXPECT_NEAR(static_cast<double>(got) / draws, expect, 0.10 * expect) << lo << ".." << hi;
    }
}

TEST(Zipfian, SingleKey) {
    Zipfian z(1, 0.99);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(z.next(rng), 0u);
}

TEST(Workload, KeyFormat) {
    EXPECT_EQ(to_string(make_key(42, 8)), "k0000042");
    EXPECT_EQ(to_string(make_key(0, 2)), "k0");
    EXPECT_EQ(make_key(123, 16).size(), 16u);
}

TEST(Workload, Deterministic) {
    WorkloadSpec s;
    s.key_count = 500;
    s.op_count = 3000;
    s.value_size = 64;
    s.seed = 17;
    auto a = generate(s);
    auto b = generate(s);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        ASSERT_EQ(a[i].type, b[i].type);
        ASSERT_EQ(a[i].key, b[i].key);
        ASSERT_EQ(a[i].value, b[i].value);
    }
    s.seed = 18;
    auto c = generate(s);
    bool differs = false;
    for (std::size_t i = 0; i < a.size() && !differs; ++i) differs = a[i].key != c[i].key;
    EXPECT_TRUE(differs);
}

TEST(Workload, MixProportions) {
    for (auto [mix, frac] : {std::pair{Mix::ycsb_a, 0.5}, {Mix::ycsb_b, 0.05}, {Mix::ycsb_c, 0.0},
                             {Mix::update_only, 1.0}}) {
        WorkloadSpec s;
        s.mix = mix;
        s.key_count = 1000;
        s.op_count = 40000;
        s.value_size = 16;
        std::uint64_t puts = 0;
        for (const auto& op : generate(s)) {
            if (op.type == OpType::put) {
                ++puts;
                ASSERT_EQ(op.value.size(), 16u);
            } else {
                ASSERT_TRUE(op.value.empty());
            }
            ASSERT_EQ(op.key.size(), s.key_size);
        }
        const double got = static_cast<double>(puts) / s.op_count;
        const double sd = std::sqrt(frac * (1 - frac) / s.op_count);
        EXPECT_NEAR(got, frac, 5 * sd + 1e-12) << to_string(mix);
    }
}

TEST(Workload, LoadPhaseCoversEveryKeyOnce) {
    WorkloadSpec s;
    s.key_count = 300;
    s.value_size = 32;
    auto ops = load_phase(s);
    ASSERT_EQ(ops.size(), 300u);
    for (std::uint64_t i = 0; i < 300; ++i) {
        EXPECT_EQ(ops[i].key, make_key(i, 8));
        EXPECT_EQ(ops[i].type, OpType::put);
        EXPECT_EQ(ops[i].value.size(), 32u);
    }
}

TEST(Workload, Validation) {
    WorkloadSpec s;
    s.key_count = 0;
    EXPECT_THROW(s.validate(), ContractViolation);
    s = {};
    s.key_size = 3;
    s.key_count = 1000;
    EXPECT_THROW(s.validate(), ContractViolation);
    s = {};
    s.zipf_theta = 1.0;
    EXPECT_THROW(s.validate(), ContractViolation);
    for (Mix m : {Mix::ycsb_a, Mix::ycsb_b, Mix::ycsb_c, Mix::update_only}) EXPECT_EQ(parse_mix(to_string(m)), m);
    EXPECT_FALSE(parse_mix("ycsb_z"));
}

}  // namespace
}  // namespace erda
