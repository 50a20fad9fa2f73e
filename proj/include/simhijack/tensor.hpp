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
#include <functional>
#include <numeric>
#include <vector>

#include "simhijack/error.hpp"

namespace simhijack {

/// Dense row-major tensor of f64 values. The only value type exchanged on the
/// wire; integer-valued draws are carried as exact-integer doubles.
struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<double> values{0.0};

    static Tensor scalar(double v) { return Tensor{{}, {v}}; }

    static Tensor vector(std::vector<double> v) {
        const auto n = static_cast<std::uint32_t>(v.size());
        return Tensor{{n}, std::move(v)};
    }

    std::uint32_t rank() const noexcept { return static_cast<std::uint32_t>(dims.size()); }

    /// Product of dims; the empty product is 1.
    std::uint64_t element_count() const noexcept {
        return std::accumulate(dims.begin(), dims.end(), std::uint64_t{1},
                               std::multiplies<>{});
    }

    bool valid() const noexcept { return values.size() == element_count(); }

    bool holds_single_value() const noexcept { return values.size() == 1; }

    /// Value of a single-element tensor.
    double item() const {
        if (!holds_single_value())
            throw Error(ErrorCode::InvalidMessage, "tensor does not hold exactly one value");
        return values.front();
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

} // namespace simhijack
