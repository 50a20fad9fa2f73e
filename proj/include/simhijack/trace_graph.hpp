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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "simhijack/error.hpp"

namespace simhijack {

/// Single-pass count/mean/M2/min/max (Welford).
struct RunningStats {
    std::uint64_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;
    double min = std::numeric_limits<double>::infinity();
    double max = -std::numeric_limits<double>::infinity();

    void push(double x) {
        ++count;
        const double delta = x - mean;
        mean += delta / static_cast<double>(count);
        m2 += delta * (x - mean);
        min = std::min(min, x);
        max = std::max(max, x);
    }

    /// Unbiased sample variance; 0 with fewer than two values.
    double variance() const { return count < 2 ? 0.0 : m2 / static_cast<double>(count - 1); }

    /// Chan et al. pairwise combination.
    void merge(const RunningStats& o) {
        if (o.count == 0) return;
        if (count == 0) {
            *this = o;
            return;
        }
        const double n_a = static_cast<double>(count);
        const double n_b = static_cast<double>(o.count);
        const double n = n_a + n_b;
        const double delta = o.mean - mean;
        mean += delta * n_b / n;
        m2 += o.m2 + delta * delta * n_a * n_b / n;
        count += o.count;
        min = std::min(min, o.min);
        max = std::max(max, o.max);
    }
};

using NodeId = std::uint32_t;

inline constexpr NodeId kStartNode = 0;
inline constexpr NodeId kEndNode = std::numeric_limits<NodeId>::max();

inline std::string node_label(NodeId id) {
    if (id == kStartNode) return "START";
    if (id == kEndNode) return "END";
    return "A" + std::to_string(id);
}

/// Inverse of node_label; throws UnknownId for anything else.
inline NodeId parse_node_label(std::string_view label) {
    if (label == "START") return kStartNode;
    if (label == "END") return kEndNode;
    if (label.size() < 2 || label[0] != 'A' || label[1] == '0')
        throw Error(ErrorCode::UnknownId, "bad node id '" + std::string(label) + "'");
    std::uint64_t v = 0;
    for (char c : label.substr(1)) {
        if (c < '0' || c > '9' || v > 0xFFFFFFF)
            throw Error(ErrorCode::UnknownId, "bad node id '" + std::string(label) + "'");
        v = v * 10 + static_cast<std::uint64_t>(c - '0');
    }
    return static_cast<NodeId>(v);
}

/// Full address string -> dense 1-based id in first-seen order.
class AddressTable {
public:
    /// Id for `address`, registering it if new. Second member is true when new.
    std::pair<NodeId, bool> intern(std::string_view address) {
        if (auto it = ids_.find(std::string(address)); it != ids_.end()) return {it->second, false};
        addresses_.emplace_back(address);
        interpretations_.emplace_back();
        auto id = static_cast<NodeId>(addresses_.size());
        ids_.emplace(addresses_.back(), id);
        return {id, true};
    }

    std::optional<NodeId> find(std::string_view address) const {
        if (auto it = ids_.find(std::string(address)); it != ids_.end()) return it->second;
        return std::nullopt;
    }

    bool contains(NodeId id) const noexcept { return id >= 1 && id <= addresses_.size(); }

    const std::string& address(NodeId id) const {
        check(id);
        return addresses_[id - 1];
    }

    const std::string& interpretation(NodeId id) const {
        check(id);
        return interpretations_[id - 1];
    }

    void set_interpretation(NodeId id, std::string text) {
        check(id);
        interpretations_[id - 1] = std::move(text);
    }

    std::size_t size() const noexcept { return addresses_.size(); }

    friend bool operator==(const AddressTable& a, const AddressTable& b) {
        return a.addresses_ == b.addresses_ && a.interpretations_ == b.interpretations_;
    }

private:
    void check(NodeId id) const {
        if (!contains(id)) throw Error(ErrorCode::UnknownId, node_label(id) + " not in address table");
    }

    std::vector<std::string> addresses_;
    std::vector<std::string> interpretations_;
    std::unordered_map<std::string, NodeId> ids_;
};

/// Directed graph over address ids plus virtual START/END, with visit and
/// transition counts and per-address value statistics.
class TraceGraph {
public:
    using Edge = std::pair<NodeId, NodeId>;

    std::uint64_t trace_count() const noexcept { return trace_count_; }

    std::uint64_t visits(NodeId id) const {
        if (id == kStartNode) return start_visits_;
        if (id == kEndNode) return end_visits_;
        return id <= node_visits_.size() ? node_visits_[id - 1] : 0;
    }

    std::uint64_t edge_count(NodeId from, NodeId to) const {
        auto it = edges_.find({from, to});
        return it == edges_.end() ? 0 : it->second;
    }

    const std::map<Edge, std::uint64_t>& edges() const noexcept { return edges_; }

    /// Largest address id with a node slot.
    NodeId max_node() const noexcept { return static_cast<NodeId>(node_visits_.size()); }

    const RunningStats& stats(NodeId id) const {
        static const RunningStats empty;
        return id >= 1 && id <= stats_.size() ? stats_[id - 1] : empty;
    }

    /// Sum of counts on edges leaving `from`.
    std::uint64_t out_total(NodeId from) const {
        std::uint64_t total = 0;
        for (auto it = edges_.lower_bound({from, 0}); it != edges_.end() && it->first.first == from; ++it)
            total += it->second;
        return total;
    }

    /// Empirical transition probability count(from,to) / out_total(from).
    double edge_probability(NodeId from, NodeId to) const {
        auto total = out_total(from);
        return total == 0 ? 0.0 : static_cast<double>(edge_count(from, to)) / static_cast<double>(total);
    }

    // Mutators used by the aggregator, the merge, and graph import.

    void ensure_node(NodeId id) {
        if (id == kStartNode || id == kEndNode) return;
        if (id > node_visits_.size()) {
            node_visits_.resize(id, 0);
            stats_.resize(id);
        }
    }

    void add_visit(NodeId id, std::uint64_t n = 1) {
        if (id == kStartNode) {
            start_visits_ += n;
        } else if (id == kEndNode) {
            end_visits_ += n;
        } else {
            ensure_node(id);
            node_visits_[id - 1] += n;
        }
    }

    void add_edge(NodeId from, NodeId to, std::uint64_t n = 1) { edges_[{from, to}] += n; }

    void add_value(NodeId id, double x) {
        ensure_node(id);
        stats_[id - 1].push(x);
    }

    void merge_stats(NodeId id, const RunningStats& s) {
        ensure_node(id);
        stats_[id - 1].merge(s);
    }

    void set_stats(NodeId id, const RunningStats& s) {
        ensure_node(id);
        stats_[id - 1] = s;
    }

    void add_traces(std::uint64_t n) { trace_count_ += n; }

    /// Number of keyed entries held in memory: node slots (visits and stats),
    /// edges, and the two virtual nodes.
    std::size_t key_count() const noexcept { return 2 * node_visits_.size() + edges_.size() + 2; }

    /// Exact counts, statistics within `tolerance` (relative to magnitude).
    bool approx_equal(const TraceGraph& o, double tolerance = 1e-12) const {
        if (trace_count_ != o.trace_count_ || start_visits_ != o.start_visits_ ||
            end_visits_ != o.end_visits_ || node_visits_ != o.node_visits_ || edges_ != o.edges_ ||
            stats_.size() != o.stats_.size())
            return false;
        auto close = [tolerance](double a, double b) {
            if (a == b) return true;
            return std::abs(a - b) <= tolerance * std::max({1.0, std::abs(a), std::abs(b)});
        };
        for (std::size_t i = 0; i < stats_.size(); ++i) {
            const auto& a = stats_[i];
            const auto& b = o.stats_[i];
            if (a.count != b.count) return false;
            if (a.count == 0) continue;
            if (!close(a.mean, b.mean) || !close(a.variance(), b.variance()) || a.min != b.min ||
                a.max != b.max)
                return false;
        }
        return true;
    }

private:
    std::uint64_t trace_count_ = 0;
    std::uint64_t start_visits_ = 0;
    std::uint64_t end_visits_ = 0;
    std::vector<std::uint64_t> node_visits_;
    std::vector<RunningStats> stats_;
    std::map<Edge, std::uint64_t> edges_;
};

/// A graph together with the table naming its nodes.
struct AnnotatedGraph {
    TraceGraph graph;
    AddressTable table;
};

/// Sum of log transition probabilities along START -> path... -> END.
/// -inf when any transition was never observed.
inline double path_log_probability(std::span<const NodeId> path, const TraceGraph& g) {
    double total = 0.0;
    NodeId prev = kStartNode;
    auto step = [&](NodeId next) {
        const auto count = g.edge_count(prev, next);
        if (count == 0) {
            total = -std::numeric_limits<double>::infinity();
            return false;
        }
        total += std::log(static_cast<double>(count) / static_cast<double>(g.out_total(prev)));
        prev = next;
        return true;
    };
    for (NodeId id : path)
        if (!step(id)) return total;
    step(kEndNode);
    return total;
}

/// Pointwise addition of counts and parallel Welford merge of statistics.
/// Nodes of `from` are matched to `into` by full address; unseen addresses
/// are appended to `into`'s table in `from`'s id order.
inline void merge_into(AnnotatedGraph& into, const AnnotatedGraph& from) {
    std::vector<NodeId> remap(from.table.size() + 1, kStartNode);
    for (NodeId id = 1; id <= from.table.size(); ++id) {
        remap[id] = into.table.intern(from.table.address(id)).first;
        if (into.table.interpretation(remap[id]).empty() && !from.table.interpretation(id).empty())
            into.table.set_interpretation(remap[id], from.table.interpretation(id));
        into.graph.ensure_node(remap[id]);
    }
    auto map_id = [&](NodeId id) { return id == kStartNode || id == kEndNode ? id : remap.at(id); };
    into.graph.add_traces(from.graph.trace_count());
    into.graph.add_visit(kStartNode, from.graph.visits(kStartNode));
    into.graph.add_visit(kEndNode, from.graph.visits(kEndNode));
    for (NodeId id = 1; id <= from.table.size(); ++id) {
        into.graph.add_visit(remap[id], from.graph.visits(id));
        into.graph.merge_stats(remap[id], from.graph.stats(id));
    }
    for (const auto& [edge, count] : from.graph.edges())
        into.graph.add_edge(map_id(edge.first), map_id(edge.second), count);
}

} // namespace simhijack
