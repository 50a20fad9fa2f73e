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

// Simulator-side SDK. A hijacked simulator replaces each RNG call with
// ClientContext::sample and its entry point with serve_forward; every draw is
// then answered by the remote controller.

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "simhijack/channel.hpp"
#include "simhijack/distribution_spec.hpp"
#include "simhijack/error.hpp"
#include "simhijack/tensor.hpp"
#include "simhijack/trace.hpp"
#include "simhijack/wire.hpp"

namespace simhijack {

class ClientContext;

using ForwardFn = std::function<Tensor(ClientContext&)>;

class ClientContext {
public:
    ClientContext(Channel& channel, std::string model_name)
        : channel_(&channel), model_name_(std::move(model_name)) {}

    ClientContext(const ClientContext&) = delete;
    ClientContext& operator=(const ClientContext&) = delete;

    const std::string& model_name() const noexcept { return model_name_; }
    bool in_forward() const noexcept { return in_forward_; }
    std::uint64_t trace_id() const noexcept { return trace_id_; }

    void push_frame(std::string frame) {
        if (!is_legal_frame(frame))
            throw Error(ErrorCode::IllegalFrameCharacter, "frame '" + frame + "' is empty or contains ';' or ']'");
        frames_.push_back(std::move(frame));
        rebuild_prefix();
    }

    void pop_frame() {
        if (frames_.empty()) throw Error(ErrorCode::UsageError, "pop_frame on an empty frame stack");
        frames_.pop_back();
        rebuild_prefix();
    }

    const std::vector<std::string>& frames() const noexcept { return frames_; }

    /// Pushes a call-site tag for the lifetime of the object.
    class ScopedFrame {
    public:
        ScopedFrame(ClientContext& ctx, std::string frame) : ctx_(ctx) { ctx_.push_frame(std::move(frame)); }
        ScopedFrame(const ScopedFrame&) = delete;
        ScopedFrame& operator=(const ScopedFrame&) = delete;
        ~ScopedFrame() { ctx_.pop_frame(); }

    private:
        ClientContext& ctx_;
    };

    /// Address for a draw at `tag` under the current frame stack.
    std::string address_for(const DistributionSpec& d, std::string_view tag) const {
        if (!is_legal_frame(tag))
            throw Error(ErrorCode::IllegalFrameCharacter, "tag '" + std::string(tag) + "' is empty or contains ';' or ']'");
        std::string out = prefix_;
        out += tag;
        out += "]__";
        out += kind_name(d);
        return out;
    }

    Tensor sample(const DistributionSpec& d, std::string_view tag, bool control = true) {
        require_forward("sample");
        validate(d);
        auto address = address_for(d, tag);
        ++occurrences_[address];
        channel_->send(msg::Sample{std::move(address), d, control});
        auto reply = channel_->recv();
        if (auto* r = std::get_if<msg::SampleResult>(&reply)) return std::move(r->value);
        fail_on(reply, "SampleResult");
    }

    /// Single-value convenience wrapper around sample().
    double sample_value(const DistributionSpec& d, std::string_view tag) { return sample(d, tag).item(); }

    void observe(const DistributionSpec& d, const Tensor& value, std::string_view tag) {
        require_forward("observe");
        validate(d);
        auto address = address_for(d, tag);
        ++occurrences_[address];
        channel_->send(msg::Observe{std::move(address), d, value});
        auto reply = channel_->recv();
        if (std::holds_alternative<msg::ObserveResult>(reply)) return;
        fail_on(reply, "ObserveResult");
    }

    void observe(const DistributionSpec& d, double value, std::string_view tag) {
        observe(d, Tensor::scalar(value), tag);
    }

    /// Draws made so far in this trace at `address`.
    std::uint64_t occurrences(const std::string& address) const {
        auto it = occurrences_.find(address);
        return it == occurrences_.end() ? 0 : it->second;
    }

    // Forward bracketing, driven by serve_session.
    void begin_forward(std::uint64_t trace_id) {
        frames_.clear();
        rebuild_prefix();
        occurrences_.clear();
        trace_id_ = trace_id;
        in_forward_ = true;
    }

    void end_forward() {
        in_forward_ = false;
        frames_.clear();
        rebuild_prefix();
    }

private:
    void require_forward(const char* what) const {
        if (!in_forward_) throw Error(ErrorCode::UsageError, std::string(what) + " called outside a forward");
    }

    [[noreturn]] void fail_on(const Message& reply, std::string_view expected) {
        if (auto* e = std::get_if<msg::Error>(&reply)) throw Error(ErrorCode::RemoteError, e->message);
        throw Error(ErrorCode::ProtocolViolation,
                    "expected " + std::string(expected) + ", got " + std::string(message_name(reply)));
    }

    void rebuild_prefix() {
        prefix_ = "[";
        for (const auto& f : frames_) {
            prefix_ += f;
            prefix_ += "; ";
        }
    }

    Channel* channel_;
    std::string model_name_;
    std::vector<std::string> frames_;
    std::string prefix_ = "[";
    std::unordered_map<std::string, std::uint64_t> occurrences_;
    std::uint64_t trace_id_ = 0;
    bool in_forward_ = false;
};

/// Serves one controller connection until it sends Shutdown.
inline void serve_session(Channel& channel, const std::string& model_name, const ForwardFn& forward) {
    auto reject = [&](ErrorCode code, const std::string& why) {
        try {
            channel.send(msg::Error{why});
        } catch (const Error&) {
        }
        throw Error(code, why);
    };

    auto first = channel.recv();
    auto* hello = std::get_if<msg::Handshake>(&first);
    if (!hello) reject(ErrorCode::ProtocolViolation, "expected Handshake, got " + std::string(message_name(first)));
    if (hello->protocol_version != kProtocolVersion)
        reject(ErrorCode::VersionMismatch, "protocol version " + std::to_string(hello->protocol_version) +
                                               " not supported (expected " + std::to_string(kProtocolVersion) + ")");
    channel.send(msg::HandshakeResult{model_name, kProtocolVersion});

    ClientContext ctx(channel, model_name);
    for (;;) {
        auto m = channel.recv();
        if (auto* run = std::get_if<msg::Run>(&m)) {
            ctx.begin_forward(run->trace_id);
            Tensor outcome;
            try {
                outcome = forward(ctx);
            } catch (const Error& e) {
                ctx.end_forward();
                if (e.code() == ErrorCode::ChannelClosed || e.code() == ErrorCode::RemoteError) throw;
                reject(e.code(), e.what());
            }
            ctx.end_forward();
            channel.send(msg::RunResult{std::move(outcome)});
        } else if (std::holds_alternative<msg::Shutdown>(m)) {
            return;
        } else if (auto* e = std::get_if<msg::Error>(&m)) {
            throw Error(ErrorCode::RemoteError, e->message);
        } else {
            reject(ErrorCode::ProtocolViolation, "unexpected " + std::string(message_name(m)) + " while idle");
        }
    }
}

struct ServeOptions {
    /// Keep accepting new controller sessions after each Shutdown.
    bool persist = false;
    /// Invoked once the listener is bound, with the bound endpoint.
    std::function<void(const Endpoint&)> on_listening;
};

/// Replacement entry point: listens on `endpoint` and runs `forward` once per
/// Run request. Returns after the controller sends Shutdown.
inline void serve_forward(const Endpoint& endpoint, const std::string& model_name, const ForwardFn& forward,
                          const ServeOptions& options = {}) {
    Listener listener(endpoint);
    if (options.on_listening) options.on_listening(listener.endpoint());
    do {
        auto channel = listener.accept();
        serve_session(channel, model_name, forward);
    } while (options.persist);
}

} // namespace simhijack
