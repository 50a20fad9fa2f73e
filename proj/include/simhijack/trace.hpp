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
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "simhijack/distribution_spec.hpp"
#include "simhijack/error.hpp"
#include "simhijack/tensor.hpp"

namespace simhijack {

/// Characters that would make a canonical address ambiguous.
inline bool is_legal_frame(std::string_view frame) {
    return !frame.empty() && frame.find_first_of(";]") == std::string_view::npos;
}

/// Canonical address string `[frame1; frame2; ...; frameN]__DistName`.
inline std::string format_address(std::span<const std::string> frames, std::string_view dist_name) {
    if (frames.empty()) throw Error(ErrorCode::IllegalFrameCharacter, "address needs at least one frame");
    std::string out = "[";
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (!is_legal_frame(frames[i]))
            throw Error(ErrorCode::IllegalFrameCharacter, "frame '" + frames[i] + "' is empty or contains ';' or ']'");
        if (i > 0) out += "; ";
        out += frames[i];
    }
    out += "]__";
    out += dist_name;
    return out;
}

inline std::string format_address(std::initializer_list<std::string> frames, std::string_view dist_name) {
    return format_address(std::span<const std::string>(frames.begin(), frames.size()), dist_name);
}

enum class EventKind : std::uint8_t { sample = 1, observe = 2 };

struct TraceEvent {
    EventKind kind = EventKind::sample;
    std::string address;
    DistributionSpec dist;
    Tensor value;
    double log_prob = 0.0;
    std::uint32_t index_in_trace = 0;
    /// Sample whose value was forced in condition mode; its log_prob also
    /// counts toward the trace weight. Not persisted in the trace log.
    bool conditioned = false;

    friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct Trace {
    std::uint64_t trace_id = 0;
    std::vector<TraceEvent> events;
    Tensor outcome;
    double log_joint = 0.0;
    double log_weight = 0.0;
    bool divergent = false;
};

/// Sum of sample-event log-probs, in event order.
inline double sum_sample_log_probs(std::span<const TraceEvent> events) {
    double total = 0.0;
    for (const auto& e : events)
        if (e.kind == EventKind::sample) total += e.log_prob;
    return total;
}

} // namespace simhijack
