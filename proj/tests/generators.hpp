// Copyright 2026 The simhijack Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Hand-rolled random generators for property tests.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "simhijack/distribution_spec.hpp"
#include "simhijack/tensor.hpp"
#include "simhijack/wire.hpp"

namespace simhijack::testing {

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    std::uint64_t u64() { return rng_(); }

    std::uint32_t below(std::uint32_t n) { return static_cast<std::uint32_t>(rng_() % n); }

    double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

    double real(double lo, double hi) { return lo + (hi - lo) * unit(); }

    /// Finite doubles across many magnitudes, including signed zero.
    double any_finite() {
        switch (below(5)) {
        case 0: return 0.0;
        case 1: return -0.0;
        case 2: return real(-1.0, 1.0);
        case 3: return real(-1e6, 1e6);
        default: {
            double v;
            do {
                auto bits = rng_();
                std::memcpy(&v, &bits, sizeof v);
            } while (!std::isfinite(v));
            return v;
        }
        }
    }

    /// UTF-8 text mixing ASCII with 2-, 3- and 4-byte code points.
    std::string utf8(std::size_t max_len, bool non_empty = false) {
        static const char* pieces[] = {"a", "Z", "0", " ", ";", "]", "[", "_", ":", "+", "é", "Ω", "€", "中", "𝄞", "(", ")"};
        std::size_t n = below(static_cast<std::uint32_t>(max_len + 1));
        if (non_empty && n == 0) n = 1;
        std::string s;
        for (std::size_t i = 0; i < n; ++i) s += pieces[below(std::size(pieces))];
        return s;
    }

    Tensor tensor() {
        Tensor t;
        const auto rank = below(4);
        t.dims.resize(rank);
        for (auto& d : t.dims) d = below(4);
        t.values.resize(t.element_count());
        for (auto& v : t.values) v = any_finite();
        return t;
    }

    DistributionSpec spec() {
        switch (below(6)) {
        case 0: return dist::Normal{real(-10, 10), real(0.01, 10)};
        case 1: {
            double lo = real(-10, 10);
            return dist::Uniform{lo, lo + real(0.01, 10)};
        }
        case 2: return dist::Bernoulli{unit()};
        case 3: {
            std::vector<double> p(1 + below(6));
            double sum = 0.0;
            for (auto& x : p) sum += (x = unit());
            if (sum == 0.0) {
                p[0] = 1.0;
                sum = 1.0;
            }
            for (auto& x : p) x /= sum;
            return dist::Categorical{p};
        }
        case 4: return dist::Poisson{real(0.01, 30)};
        default: return dist::Exponential{real(0.01, 10)};
        }
    }

    Message message(std::size_t variant) {
        switch (variant) {
        case 0: return msg::Handshake{utf8(20), static_cast<std::uint32_t>(u64())};
        case 1: return msg::HandshakeResult{utf8(20), static_cast<std::uint32_t>(u64())};
        case 2: return msg::Run{u64()};
        case 3: return msg::Sample{utf8(60, true), spec(), below(2) == 1};
        case 4: return msg::SampleResult{tensor()};
        case 5: return msg::Observe{utf8(60, true), spec(), tensor()};
        case 6: return msg::ObserveResult{};
        case 7: return msg::RunResult{tensor()};
        case 8: return msg::Shutdown{};
        default: return msg::Error{utf8(40)};
        }
    }

    Message message() { return message(below(kMaxMessageTag)); }

private:
    std::mt19937_64 rng_;
};

} // namespace simhijack::testing
