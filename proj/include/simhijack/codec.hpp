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

// Little-endian primitive encodings shared by the wire protocol and the trace
// log: string = u32 length + UTF-8, Tensor = u32 rank + dims + f64 values,
// DistributionSpec = u8 kind + parameters.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "simhijack/distribution_spec.hpp"
#include "simhijack/error.hpp"
#include "simhijack/tensor.hpp"

namespace simhijack::codec {

using Bytes = std::vector<std::uint8_t>;

inline bool is_valid_utf8(std::string_view s) {
    const auto* p = reinterpret_cast<const unsigned char*>(s.data());
    const auto* end = p + s.size();
    while (p < end) {
        unsigned char c = *p;
        std::size_t extra;
        std::uint32_t cp;
        if (c < 0x80) {
            ++p;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            extra = 1;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            extra = 2;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            extra = 3;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (static_cast<std::size_t>(end - p) <= extra) return false;
        for (std::size_t i = 1; i <= extra; ++i) {
            if ((p[i] & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (p[i] & 0x3F);
        }
        // overlong forms, surrogates, out of range
        static constexpr std::uint32_t min_cp[] = {0, 0x80, 0x800, 0x10000};
        if (cp < min_cp[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
        p += extra + 1;
    }
    return true;
}

class Writer {
public:
    explicit Writer(Bytes& out) : out_(out) {}

    void u8(std::uint8_t v) { out_.push_back(v); }

    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
    void boolean(bool v) { u8(v ? 1 : 0); }

    void string(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }

    void tensor(const Tensor& t) {
        u32(t.rank());
        for (auto d : t.dims) u32(d);
        for (double v : t.values) f64(v);
    }

    void spec(const DistributionSpec& d) {
        u8(kind_tag(d));
        std::visit(
            [this](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, dist::Normal>) {
                    f64(s.mean);
                    f64(s.stddev);
                } else if constexpr (std::is_same_v<T, dist::Uniform>) {
                    f64(s.low);
                    f64(s.high);
                } else if constexpr (std::is_same_v<T, dist::Bernoulli>) {
                    f64(s.p);
                } else if constexpr (std::is_same_v<T, dist::Categorical>) {
                    tensor(Tensor::vector(s.probs));
                } else {
                    f64(s.rate);
                }
            },
            d);
    }

private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    Bytes& out_;
};

/// Bounds-checked cursor. Running past the end raises `overrun_code`.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in,
                    ErrorCode overrun_code = ErrorCode::MalformedField)
        : in_(in), overrun_(overrun_code) {}

    std::size_t remaining() const noexcept { return in_.size() - pos_; }
    bool at_end() const noexcept { return pos_ == in_.size(); }
    std::size_t position() const noexcept { return pos_; }

    std::uint8_t u8() {
        need(1);
        return in_[pos_++];
    }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    double f64() { return std::bit_cast<double>(get_le(8)); }

    bool boolean() {
        auto v = u8();
        if (v > 1) throw Error(ErrorCode::MalformedField, "bool byte must be 0 or 1");
        return v == 1;
    }

    std::string string() {
        auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        if (!is_valid_utf8(s)) throw Error(ErrorCode::MalformedField, "string is not valid UTF-8");
        return s;
    }

    Tensor tensor() {
        Tensor t;
        auto rank = u32();
        // every dim needs 4 bytes, reject before allocating
        if (rank > remaining() / 4) throw Error(ErrorCode::MalformedField, "tensor rank exceeds payload");
        t.dims.resize(rank);
        for (auto& d : t.dims) d = u32();
        // saturating product; a zero dim anywhere makes the tensor empty
        std::uint64_t count = 1;
        const std::uint64_t limit = remaining() / 8;
        if (std::find(t.dims.begin(), t.dims.end(), 0u) != t.dims.end()) {
            count = 0;
        } else {
            for (auto d : t.dims) {
                count *= d;
                if (count > limit) break;
            }
        }
        if (count > limit)
            throw Error(ErrorCode::MalformedField, "tensor length does not match its dims");
        t.values.resize(count);
        for (auto& v : t.values) v = f64();
        return t;
    }

    DistributionSpec spec() {
        auto tag = u8();
        DistributionSpec d;
        switch (tag) {
        case 1: {
            double m = f64();
            double s = f64();
            d = dist::Normal{m, s};
            break;
        }
        case 2: {
            double lo = f64();
            double hi = f64();
            d = dist::Uniform{lo, hi};
            break;
        }
        case 3: d = dist::Bernoulli{f64()}; break;
        case 4: {
            auto t = tensor();
            if (t.rank() != 1) throw Error(ErrorCode::MalformedField, "Categorical probs must be rank-1");
            d = dist::Categorical{std::move(t.values)};
            break;
        }
        case 5: d = dist::Poisson{f64()}; break;
        case 6: d = dist::Exponential{f64()}; break;
        default: throw Error(ErrorCode::MalformedField, "unknown distribution kind " + std::to_string(tag));
        }
        if (auto why = spec_violation(d); !why.empty()) throw Error(ErrorCode::MalformedField, why);
        return d;
    }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw Error(overrun_, "field runs past end of input");
    }

    std::uint64_t get_le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint64_t{in_[pos_ + i]} << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
    ErrorCode overrun_;
};

} // namespace simhijack::codec
