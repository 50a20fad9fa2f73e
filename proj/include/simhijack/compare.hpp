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
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "simhijack/error.hpp"
#include "simhijack/trace_graph.hpp"

namespace simhijack {

/// Node of model A paired with the node of model B modelling the same process.
struct NodeMapping {
    NodeId a;
    NodeId b;
};

struct PairComparison {
    NodeId a;
    NodeId b;
    double visits_per_trace_a;
    double visits_per_trace_b;
    double visits_difference;
    /// Total variation between the two out-edge distributions, with targets
    /// translated through the mapping and unmapped targets lumped together.
    double tv_distance;
};

struct ComparisonReport {
    std::vector<PairComparison> pairs;
    std::vector<NodeId> unmapped_a;
    std::vector<NodeId> unmapped_b;
};

namespace detail {

// Out-edge distribution keyed by model-A id; END keeps its id, unmapped
// targets collapse onto kStartNode (which is never an edge target).
inline std::map<NodeId, double> out_distribution(const TraceGraph& g, NodeId from,
                                                 const std::map<NodeId, NodeId>& to_a_id) {
    std::map<NodeId, double> dist;
    const auto total = g.out_total(from);
    if (total == 0) return dist;
    for (auto it = g.edges().lower_bound({from, 0}); it != g.edges().end() && it->first.first == from; ++it) {
        const NodeId target = it->first.second;
        NodeId key = kStartNode;
        if (target == kEndNode) {
            key = kEndNode;
        } else if (auto m = to_a_id.find(target); m != to_a_id.end()) {
            key = m->second;
        }
        dist[key] += static_cast<double>(it->second) / static_cast<double>(total);
    }
    return dist;
}

} // namespace detail

inline double total_variation(const std::map<NodeId, double>& p, const std::map<NodeId, double>& q) {
    if (p.empty() || q.empty()) return p.empty() && q.empty() ? 0.0 : 1.0;
    std::set<NodeId> keys;
    for (const auto& [k, v] : p) keys.insert(k);
    for (const auto& [k, v] : q) keys.insert(k);
    double sum = 0.0;
    for (auto k : keys) {
        auto pi = p.find(k);
        auto qi = q.find(k);
        sum += std::abs((pi == p.end() ? 0.0 : pi->second) - (qi == q.end() ? 0.0 : qi->second));
    }
    return 0.5 * sum;
}

inline ComparisonReport compare_graphs(const AnnotatedGraph& a, const AnnotatedGraph& b,
                                       const std::vector<NodeMapping>& map) {
    std::map<NodeId, NodeId> a_to_b;
    std::map<NodeId, NodeId> b_to_a;
    std::map<NodeId, NodeId> a_identity;
    for (const auto& m : map) {
        if (!a.table.contains(m.a)) throw Error(ErrorCode::UnknownId, node_label(m.a) + " not in model A");
        if (!b.table.contains(m.b)) throw Error(ErrorCode::UnknownId, node_label(m.b) + " not in model B");
        if (!a_to_b.emplace(m.a, m.b).second)
            throw Error(ErrorCode::DuplicateMapping, node_label(m.a) + " mapped twice in model A");
        if (!b_to_a.emplace(m.b, m.a).second)
            throw Error(ErrorCode::DuplicateMapping, node_label(m.b) + " mapped twice in model B");
        a_identity.emplace(m.a, m.a);
    }

    auto per_trace = [](const TraceGraph& g, NodeId id) {
        return g.trace_count() == 0 ? 0.0
                                    : static_cast<double>(g.visits(id)) / static_cast<double>(g.trace_count());
    };

    ComparisonReport report;
    for (const auto& m : map) {
        PairComparison pc{};
        pc.a = m.a;
        pc.b = m.b;
        pc.visits_per_trace_a = per_trace(a.graph, m.a);
        pc.visits_per_trace_b = per_trace(b.graph, m.b);
        pc.visits_difference = pc.visits_per_trace_a - pc.visits_per_trace_b;
        pc.tv_distance = total_variation(detail::out_distribution(a.graph, m.a, a_identity),
                                         detail::out_distribution(b.graph, m.b, b_to_a));
        report.pairs.push_back(pc);
    }
    for (NodeId id = 1; id <= a.table.size(); ++id)
        if (!a_to_b.contains(id)) report.unmapped_a.push_back(id);
    for (NodeId id = 1; id <= b.table.size(); ++id)
        if (!b_to_a.contains(id)) report.unmapped_b.push_back(id);
    return report;
}

inline nlohmann::ordered_json report_to_json(const ComparisonReport& r, const AnnotatedGraph& a,
                                             const AnnotatedGraph& b) {
    using nlohmann::ordered_json;
    ordered_json j;
    ordered_json pairs = ordered_json::array();
    for (const auto& p : r.pairs) {
        pairs.push_back({{"a", node_label(p.a)},
                         {"b", node_label(p.b)},
                         {"visits_per_trace_a", p.visits_per_trace_a},
                         {"visits_per_trace_b", p.visits_per_trace_b},
                         {"visits_difference", p.visits_difference},
                         {"tv_distance", p.tv_distance}});
    }
    j["pairs"] = std::move(pairs);
    auto listing = [](const std::vector<NodeId>& ids, const AnnotatedGraph& g) {
        ordered_json arr = ordered_json::array();
        for (auto id : ids) arr.push_back({{"id", node_label(id)}, {"address", g.table.address(id)}});
        return arr;
    };
    j["unmapped_a"] = listing(r.unmapped_a, a);
    j["unmapped_b"] = listing(r.unmapped_b, b);
    return j;
}

/// Two-column `idA<TAB>idB` mapping; `#` starts a comment.
inline std::vector<NodeMapping> parse_node_map(std::string_view text) {
    std::vector<NodeMapping> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        std::string a, b, extra;
        if (!(fields >> a)) continue;
        if (!(fields >> b) || (fields >> extra))
            throw Error(ErrorCode::ParseError, "map line " + std::to_string(line_no) + ": expected two ids");
        try {
            out.push_back({parse_node_label(a), parse_node_label(b)});
        } catch (const Error& e) {
            throw Error(ErrorCode::ParseError, "map line " + std::to_string(line_no) + ": " + e.what());
        }
        if (out.back().a == kStartNode || out.back().a == kEndNode || out.back().b == kStartNode ||
            out.back().b == kEndNode)
            throw Error(ErrorCode::ParseError, "map line " + std::to_string(line_no) + ": START/END are implicit");
    }
    return out;
}

/// Maps every id present in both tables onto itself.
inline std::vector<NodeMapping> identity_map(const AnnotatedGraph& a, const AnnotatedGraph& b) {
    std::vector<NodeMapping> out;
    const auto n = std::min(a.table.size(), b.table.size());
    for (NodeId id = 1; id <= n; ++id) out.push_back({id, id});
    return out;
}

} // namespace simhijack
