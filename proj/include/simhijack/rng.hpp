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

#include <cstdint>
#include <random>
#include <string_view>

namespace simhijack {

/// Seedable generator with a standard-specified output sequence.
///
/// The engine is `std::mt19937_64`, whose 10000th output from the default seed
/// is fixed by the C++ standard, so a seed maps to the same value sequence on
/// every conforming platform. Real-valued conversions are done here rather
/// than with `<random>` distributions, which are implementation-defined.
class Rng {
public:
    static constexpr std::string_view algorithm = "mt19937_64";

    explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on the open interval (0, 1).
    double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

    /// Independent stream for one trace of a session: seed = master + trace_id.
    static Rng for_trace(std::uint64_t master_seed, std::uint64_t trace_id) {
        return Rng(master_seed + trace_id);
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
};

} // namespace simhijack
