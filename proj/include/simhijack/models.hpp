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

// Small models used for end-to-end checks and demos.

#include <string>
#include <string_view>
#include <vector>

#include "simhijack/client.hpp"
#include "simhijack/distribution_spec.hpp"
#include "simhijack/error.hpp"

namespace simhijack::models {

/// x ~ Normal(0, 1); returns x.
inline Tensor normal(ClientContext& ctx) { return ctx.sample(dist::Normal{0.0, 1.0}, "x"); }

/// x ~ Normal(0, 1), y = 1 observed under Normal(x, 1); returns x.
/// Posterior of x is Normal(0.5, 0.5).
inline Tensor conjugate(ClientContext& ctx) {
    const double x = ctx.sample_value(dist::Normal{0.0, 1.0}, "x");
    ctx.observe(dist::Normal{x, 1.0}, 1.0, "y");
    return Tensor::scalar(x);
}

/// No random calls at all.
inline Tensor constant(ClientContext&) { return Tensor::scalar(7.0); }

inline const std::vector<std::string>& names() {
    static const std::vector<std::string> n = {"normal", "conjugate", "constant"};
    return n;
}

inline ForwardFn by_name(std::string_view name) {
    if (name == "normal") return normal;
    if (name == "conjugate") return conjugate;
    if (name == "constant") return constant;
    throw Error(ErrorCode::UsageError, "unknown model '" + std::string(name) + "'");
}

} // namespace simhijack::models
