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
#include <filesystem>
#include <memory>
#include <optional>

#include "simhijack/error.hpp"
#include "simhijack/trace.hpp"
#include "simhijack/trace_graph.hpp"
#include "simhijack/trace_log.hpp"

namespace simhijack {

struct TraceSummary {
    std::uint64_t trace_id = 0;
    std::uint64_t event_count = 0;
    Tensor outcome;
    double log_joint = 0.0;
    double log_weight = 0.0;
};

/// Streaming trace aggregator.
///
/// Events are folded into the graph and address table as they arrive and
/// appended to the on-disk log; nothing per-trace is retained after
/// finalize_trace, so resident state grows with unique addresses and edges
/// only. Single writer.
class TraceAggregator {
public:
    TraceAggregator() = default;

    /// Also writes every record to a trace log at `log_path`.
    explicit TraceAggregator(const std::filesystem::path& log_path)
        : log_(std::make_unique<TraceLogWriter>(log_path)) {}

    void begin_trace(std::uint64_t trace_id) {
        if (open_) throw Error(ErrorCode::OutOfOrder, "begin_trace while a trace is open");
        open_ = true;
        trace_id_ = trace_id;
        prev_ = kStartNode;
        event_count_ = 0;
        log_joint_ = 0.0;
        log_weight_ = 0.0;
        state_.graph.add_visit(kStartNode);
        if (log_) log_->trace_header(trace_id);
    }

    void ingest(const TraceEvent& e) {
        if (!open_) throw Error(ErrorCode::OutOfOrder, "event outside an open trace");
        auto [id, fresh] = state_.table.intern(e.address);
        if (fresh) {
            state_.graph.ensure_node(id);
            if (log_) log_->dict(id, e.address);
        }
        state_.graph.add_visit(id);
        state_.graph.add_edge(prev_, id);
        if (e.value.holds_single_value() && std::isfinite(e.value.values.front()))
            state_.graph.add_value(id, e.value.values.front());
        prev_ = id;
        ++event_count_;
        if (e.kind == EventKind::sample) {
            log_joint_ += e.log_prob;
            if (e.conditioned) log_weight_ += e.log_prob;
        } else {
            log_weight_ += e.log_prob;
        }
        if (log_) log_->event(e.kind, id, e.dist, e.value, e.log_prob);
    }

    TraceSummary finalize_trace(const Tensor& outcome) {
        if (!open_) throw Error(ErrorCode::NoOpenTrace, "finalize_trace without an open trace");
        state_.graph.add_edge(prev_, kEndNode);
        state_.graph.add_visit(kEndNode);
        state_.graph.add_traces(1);
        if (log_) log_->trailer(outcome, log_joint_, log_weight_);
        open_ = false;
        return TraceSummary{trace_id_, event_count_, outcome, log_joint_, log_weight_};
    }

    bool has_open_trace() const noexcept { return open_; }

    /// Pushes buffered log bytes to disk; the log stays a valid prefix even
    /// when a trace is left open by an aborted session.
    void flush() {
        if (log_) log_->flush();
    }

    const TraceGraph& graph() const noexcept { return state_.graph; }
    const AddressTable& table() const noexcept { return state_.table; }
    AddressTable& table() noexcept { return state_.table; }
    const AnnotatedGraph& state() const noexcept { return state_; }

    /// Graph and table, refusing while a trace is open.
    const AnnotatedGraph& finished_state() const {
        if (open_) throw Error(ErrorCode::OpenTrace, "a trace is still open");
        return state_;
    }

    /// Keys held in memory across the address dictionary and the graph.
    std::size_t resident_key_count() const noexcept {
        return state_.table.size() + state_.graph.key_count();
    }

    std::uint64_t log_bytes() const noexcept { return log_ ? log_->size_bytes() : 0; }

    /// Folds another session's results into this one.
    void merge(const AnnotatedGraph& other) {
        if (open_) throw Error(ErrorCode::OpenTrace, "cannot merge while a trace is open");
        merge_into(state_, other);
    }

private:
    AnnotatedGraph state_;
    std::unique_ptr<TraceLogWriter> log_;
    bool open_ = false;
    std::uint64_t trace_id_ = 0;
    NodeId prev_ = kStartNode;
    std::uint64_t event_count_ = 0;
    double log_joint_ = 0.0;
    double log_weight_ = 0.0;
};

} // namespace simhijack
