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

#include <cmath>
#include <limits>
#include <numbers>

#include "simhijack/codec.hpp"
#include "simhijack/distribution_spec.hpp"
#include "simhijack/error.hpp"
#include "simhijack/rng.hpp"
#include "simhijack/tensor.hpp"

namespace simhijack {

/// Poisson draws use exact inversion, which is only offered up to this rate.
inline constexpr double kMaxPoissonSampleRate = 30.0;

namespace detail {

inline bool is_integer(double x) { return std::isfinite(x) && std::floor(x) == x; }

inline double sample_scalar(const dist::Normal& d, Rng& rng) {
    // Box-Muller, cosine branch only; each draw consumes exactly two words.
    const double u1 = rng.uniform_open();
    const double u2 = rng.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return d.mean + d.stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

inline double sample_scalar(const dist::Uniform& d, Rng& rng) {
    double x = d.low + (d.high - d.low) * rng.uniform();
    return x < d.high ? x : d.low;
}

inline double sample_scalar(const dist::Bernoulli& d, Rng& rng) {
    return rng.uniform() < d.p ? 1.0 : 0.0;
}

inline double sample_scalar(const dist::Categorical& d, Rng& rng) {
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < d.probs.size(); ++k) {
        if (d.probs[k] <= 0.0) continue;
        cumulative += d.probs[k];
        last_positive = k;
        if (u < cumulative) return static_cast<double>(k);
    }
    // u landed in the rounding gap above the final cumulative sum
    return static_cast<double>(last_positive);
}

inline double sample_scalar(const dist::Poisson& d, Rng& rng) {
    if (d.rate > kMaxPoissonSampleRate)
        throw Error(ErrorCode::InvalidSpec, "Poisson sampling supports rate <= 30");
    const double u = rng.uniform();
    double pmf = std::exp(-d.rate);
    double cdf = pmf;
    int k = 0;
    while (u >= cdf && k < 1000) {
        ++k;
        pmf *= d.rate / k;
        cdf += pmf;
    }
    return static_cast<double>(k);
}

inline double sample_scalar(const dist::Exponential& d, Rng& rng) {
    return -std::log(rng.uniform_open()) / d.rate;
}

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_prob_scalar(const dist::Normal& d, double x) {
    const double z = (x - d.mean) / d.stddev;
    return -0.5 * z * z - std::log(d.stddev) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double log_prob_scalar(const dist::Uniform& d, double x) {
    if (!(x >= d.low && x <= d.high)) return kNegInf;
    return -std::log(d.high - d.low);
}

inline double log_prob_scalar(const dist::Bernoulli& d, double x) {
    if (x == 1.0) return std::log(d.p);
    if (x == 0.0) return std::log1p(-d.p);
    return kNegInf;
}

inline double log_prob_scalar(const dist::Categorical& d, double x) {
    if (!is_integer(x) || x < 0.0 || x >= static_cast<double>(d.probs.size())) return kNegInf;
    return std::log(d.probs[static_cast<std::size_t>(x)]);
}

inline double log_prob_scalar(const dist::Poisson& d, double x) {
    if (!is_integer(x) || x < 0.0) return kNegInf;
    return x * std::log(d.rate) - d.rate - std::lgamma(x + 1.0);
}

inline double log_prob_scalar(const dist::Exponential& d, double x) {
    if (!(x >= 0.0) || std::isinf(x)) return kNegInf;
    return std::log(d.rate) - d.rate * x;
}

} // namespace detail

/// Draws one value from `d`, returned as a rank-0 tensor. Categorical yields
/// the category index.
inline Tensor sample(const DistributionSpec& d, Rng& rng) {
    validate(d);
    return Tensor::scalar(std::visit([&rng](const auto& s) { return detail::sample_scalar(s, rng); }, d));
}

/// Log density (continuous) or log mass (discrete) of `x`; -inf outside the
/// support or when `x` does not hold exactly one value.
inline double log_prob(const DistributionSpec& d, const Tensor& x) {
    validate(d);
    if (!x.holds_single_value() || !x.valid()) return detail::kNegInf;
    const double v = x.values.front();
    if (std::isnan(v)) return detail::kNegInf;
    return std::visit([v](const auto& s) { return detail::log_prob_scalar(s, v); }, d);
}

inline double log_prob(const DistributionSpec& d, double x) { return log_prob(d, Tensor::scalar(x)); }

/// Analytic mean and variance of a scalar distribution.
struct Moments {
    double mean;
    double variance;
};

inline Moments moments(const DistributionSpec& d) {
    struct Visitor {
        Moments operator()(const dist::Normal& n) const { return {n.mean, n.stddev * n.stddev}; }
        Moments operator()(const dist::Uniform& u) const {
            const double w = u.high - u.low;
            return {0.5 * (u.low + u.high), w * w / 12.0};
        }
        Moments operator()(const dist::Bernoulli& b) const { return {b.p, b.p * (1.0 - b.p)}; }
        Moments operator()(const dist::Categorical& c) const {
            double m = 0.0, m2 = 0.0;
            for (std::size_t k = 0; k < c.probs.size(); ++k) {
                m += static_cast<double>(k) * c.probs[k];
                m2 += static_cast<double>(k * k) * c.probs[k];
            }
            return {m, m2 - m * m};
        }
        Moments operator()(const dist::Poisson& p) const { return {p.rate, p.rate}; }
        Moments operator()(const dist::Exponential& e) const {
            return {1.0 / e.rate, 1.0 / (e.rate * e.rate)};
        }
    };
    validate(d);
    return std::visit(Visitor{}, d);
}

/// Wire-encodes then decodes `d`; used to check spec codec symmetry.
inline DistributionSpec spec_roundtrip(const DistributionSpec& d) {
    validate(d);
    codec::Bytes bytes;
    codec::Writer(bytes).spec(d);
    codec::Reader reader(bytes);
    return reader.spec();
}

} // namespace simhijack
