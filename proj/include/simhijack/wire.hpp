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
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "simhijack/codec.hpp"
#include "simhijack/distribution_spec.hpp"
#include "simhijack/error.hpp"
#include "simhijack/tensor.hpp"

namespace simhijack {

inline constexpr std::uint32_t kProtocolVersion = 1;

namespace msg {

struct Handshake {
    std::string system_name;
    std::uint32_t protocol_version = kProtocolVersion;
    friend bool operator==(const Handshake&, const Handshake&) = default;
};

struct HandshakeResult {
    std::string model_name;
    std::uint32_t protocol_version = kProtocolVersion;
    friend bool operator==(const HandshakeResult&, const HandshakeResult&) = default;
};

struct Run {
    std::uint64_t trace_id = 0;
    friend bool operator==(const Run&, const Run&) = default;
};

struct Sample {
    std::string address;
    DistributionSpec dist;
    bool control = true;
    friend bool operator==(const Sample&, const Sample&) = default;
};

struct SampleResult {
    Tensor value;
    friend bool operator==(const SampleResult&, const SampleResult&) = default;
};

struct Observe {
    std::string address;
    DistributionSpec dist;
    Tensor value;
    friend bool operator==(const Observe&, const Observe&) = default;
};

struct ObserveResult {
    friend bool operator==(const ObserveResult&, const ObserveResult&) = default;
};

struct RunResult {
    Tensor outcome;
    friend bool operator==(const RunResult&, const RunResult&) = default;
};

struct Shutdown {
    friend bool operator==(const Shutdown&, const Shutdown&) = default;
};

struct Error {
    std::string message;
    friend bool operator==(const Error&, const Error&) = default;
};

} // namespace msg

/// Protocol message. Wire tag = variant index + 1.
using Message = std::variant<msg::Handshake, msg::HandshakeResult, msg::Run, msg::Sample,
                             msg::SampleResult, msg::Observe, msg::ObserveResult,
                             msg::RunResult, msg::Shutdown, msg::Error>;

inline constexpr std::uint8_t kMaxMessageTag = std::variant_size_v<Message>;

/// Largest payload a peer may declare; anything bigger is treated as garbage.
inline constexpr std::uint32_t kMaxPayloadBytes = 1u << 30;

inline std::uint8_t message_tag(const Message& m) noexcept {
    return static_cast<std::uint8_t>(m.index() + 1);
}

inline std::string_view message_name(const Message& m) noexcept {
    constexpr std::string_view names[] = {"Handshake",   "HandshakeResult", "Run",
                                          "Sample",      "SampleResult",    "Observe",
                                          "ObserveResult", "RunResult",     "Shutdown",
                                          "Error"};
    return names[m.index()];
}

namespace detail {

inline void check_encodable(const Message& m) {
    auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidMessage, why); };
    auto check_tensor = [&](const Tensor& t) {
        if (!t.valid()) fail("tensor value count does not match its dims");
    };
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, msg::Sample>) {
                if (v.address.empty()) fail("empty address");
                if (auto why = spec_violation(v.dist); !why.empty()) fail(why);
            } else if constexpr (std::is_same_v<T, msg::Observe>) {
                if (v.address.empty()) fail("empty address");
                if (auto why = spec_violation(v.dist); !why.empty()) fail(why);
                check_tensor(v.value);
            } else if constexpr (std::is_same_v<T, msg::SampleResult>) {
                check_tensor(v.value);
            } else if constexpr (std::is_same_v<T, msg::RunResult>) {
                check_tensor(v.outcome);
            }
        },
        m);
    auto check_utf8 = [&](const std::string& s) {
        if (!codec::is_valid_utf8(s)) fail("string is not valid UTF-8");
    };
    if (auto* h = std::get_if<msg::Handshake>(&m)) check_utf8(h->system_name);
    if (auto* h = std::get_if<msg::HandshakeResult>(&m)) check_utf8(h->model_name);
    if (auto* s = std::get_if<msg::Sample>(&m)) check_utf8(s->address);
    if (auto* o = std::get_if<msg::Observe>(&m)) check_utf8(o->address);
    if (auto* e = std::get_if<msg::Error>(&m)) check_utf8(e->message);
}

inline void write_payload(codec::Writer& w, const Message& m) {
    w.u8(message_tag(m));
    std::visit(
        [&w](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, msg::Handshake>) {
                w.string(v.system_name);
                w.u32(v.protocol_version);
            } else if constexpr (std::is_same_v<T, msg::HandshakeResult>) {
                w.string(v.model_name);
                w.u32(v.protocol_version);
            } else if constexpr (std::is_same_v<T, msg::Run>) {
                w.u64(v.trace_id);
            } else if constexpr (std::is_same_v<T, msg::Sample>) {
                w.string(v.address);
                w.spec(v.dist);
                w.boolean(v.control);
            } else if constexpr (std::is_same_v<T, msg::SampleResult>) {
                w.tensor(v.value);
            } else if constexpr (std::is_same_v<T, msg::Observe>) {
                w.string(v.address);
                w.spec(v.dist);
                w.tensor(v.value);
            } else if constexpr (std::is_same_v<T, msg::RunResult>) {
                w.tensor(v.outcome);
            } else if constexpr (std::is_same_v<T, msg::Error>) {
                w.string(v.message);
            }
        },
        m);
}

inline std::string read_address(codec::Reader& r) {
    auto a = r.string();
    if (a.empty()) throw Error(ErrorCode::MalformedField, "empty address");
    return a;
}

} // namespace detail

/// Decodes one payload (tag byte + fields), without the length prefix.
inline Message decode_payload(std::span<const std::uint8_t> payload) {
    codec::Reader r(payload);
    if (payload.empty()) throw Error(ErrorCode::MalformedField, "empty payload");
    auto tag = r.u8();
    Message m;
    switch (tag) {
    case 1: {
        msg::Handshake h;
        h.system_name = r.string();
        h.protocol_version = r.u32();
        m = std::move(h);
        break;
    }
    case 2: {
        msg::HandshakeResult h;
        h.model_name = r.string();
        h.protocol_version = r.u32();
        m = std::move(h);
        break;
    }
    case 3: m = msg::Run{r.u64()}; break;
    case 4: {
        msg::Sample s;
        s.address = detail::read_address(r);
        s.dist = r.spec();
        s.control = r.boolean();
        m = std::move(s);
        break;
    }
    case 5: m = msg::SampleResult{r.tensor()}; break;
    case 6: {
        msg::Observe o;
        o.address = detail::read_address(r);
        o.dist = r.spec();
        o.value = r.tensor();
        m = std::move(o);
        break;
    }
    case 7: m = msg::ObserveResult{}; break;
    case 8: m = msg::RunResult{r.tensor()}; break;
    case 9: m = msg::Shutdown{}; break;
    case 10: m = msg::Error{r.string()}; break;
    default: throw Error(ErrorCode::UnknownTag, "message tag " + std::to_string(tag));
    }
    if (!r.at_end()) throw Error(ErrorCode::MalformedField, "trailing bytes after message fields");
    return m;
}

/// Appends the frame for `m` (u32 LE payload length, then payload) to `out`.
inline void encode_message_into(const Message& m, codec::Bytes& out) {
    detail::check_encodable(m);
    const auto start = out.size();
    codec::Writer w(out);
    w.u32(0);
    detail::write_payload(w, m);
    const auto len = static_cast<std::uint32_t>(out.size() - start - 4);
    for (int i = 0; i < 4; ++i) out[start + i] = static_cast<std::uint8_t>(len >> (8 * i));
}

inline codec::Bytes encode_message(const Message& m) {
    codec::Bytes out;
    encode_message_into(m, out);
    return out;
}

/// Attempts to decode one frame from the front of `bytes`. Returns the number
/// of bytes consumed, or 0 when the frame is not yet complete.
inline std::size_t try_decode_frame(std::span<const std::uint8_t> bytes, Message& out) {
    if (bytes.size() < 4) return 0;
    codec::Reader r(bytes.first(4));
    auto len = r.u32();
    if (len > kMaxPayloadBytes) throw Error(ErrorCode::MalformedField, "declared payload too large");
    if (bytes.size() - 4 < len) return 0;
    out = decode_payload(bytes.subspan(4, len));
    return 4 + static_cast<std::size_t>(len);
}

/// Decodes exactly one complete frame.
inline Message decode_message(std::span<const std::uint8_t> frame) {
    if (frame.size() < 4) throw Error(ErrorCode::Truncated, "frame shorter than its length prefix");
    Message m;
    auto used = try_decode_frame(frame, m);
    if (used == 0)
        throw Error(ErrorCode::Truncated, "declared length exceeds available bytes");
    if (used != frame.size()) throw Error(ErrorCode::MalformedField, "bytes after end of frame");
    return m;
}

/// Splits a concatenation of frames back into messages.
inline std::vector<Message> decode_frames(std::span<const std::uint8_t> bytes) {
    std::vector<Message> out;
    while (!bytes.empty()) {
        Message m;
        auto used = try_decode_frame(bytes, m);
        if (used == 0) throw Error(ErrorCode::Truncated, "incomplete trailing frame");
        out.push_back(std::move(m));
        bytes = bytes.subspan(used);
    }
    return out;
}

} // namespace simhijack
