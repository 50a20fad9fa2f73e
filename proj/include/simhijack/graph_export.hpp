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

#include <cstdio>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "simhijack/aggregator.hpp"
#include "simhijack/error.hpp"
#include "simhijack/trace_graph.hpp"

namespace simhijack {

enum class GraphFormat { dot, tsv, json };

namespace detail {

inline std::string fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

inline std::string general(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string dot_escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out;
}

inline std::string tsv_clean(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    return out;
}

} // namespace detail

/// Graphviz text. Nodes are `A<k>` (ascending), edges are labeled with their
/// transition probability and listed by (source, target) id.
inline std::string export_dot(const AnnotatedGraph& g) {
    std::ostringstream out;
    out << "digraph trace {\n";
    out << "  rankdir=TB;\n";
    out << "  START [shape=circle];\n";
    for (NodeId id = 1; id <= g.table.size(); ++id) {
        out << "  " << node_label(id) << " [label=\"" << node_label(id) << "\", tooltip=\""
            << detail::dot_escape(g.table.address(id)) << "\"];\n";
    }
    out << "  END [shape=doublecircle];\n";
    for (const auto& [edge, count] : g.graph.edges()) {
        out << "  " << node_label(edge.first) << " -> " << node_label(edge.second) << " [label=\""
            << detail::fixed3(g.graph.edge_probability(edge.first, edge.second)) << "\"];\n";
    }
    out << "}\n";
    return out.str();
}

/// Address table: id, full address, visits, mean, variance, interpretation.
inline std::string export_tsv(const AnnotatedGraph& g) {
    std::string out = "id\taddress\tvisits\tmean\tvariance\tinterpretation\n";
    for (NodeId id = 1; id <= g.table.size(); ++id) {
        const auto& s = g.graph.stats(id);
        out += node_label(id);
        out += '\t' + detail::tsv_clean(g.table.address(id));
        out += '\t' + std::to_string(g.graph.visits(id));
        out += '\t' + detail::general(s.mean);
        out += '\t' + detail::general(s.variance());
        out += '\t' + detail::tsv_clean(g.table.interpretation(id));
        out += '\n';
    }
    return out;
}

inline nlohmann::ordered_json graph_to_json(const AnnotatedGraph& g) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["trace_count"] = g.graph.trace_count();
    ordered_json nodes = ordered_json::array();
    for (NodeId id = 1; id <= g.table.size(); ++id) {
        const auto& s = g.graph.stats(id);
        ordered_json n;
        n["id"] = node_label(id);
        n["address"] = g.table.address(id);
        n["visits"] = g.graph.visits(id);
        n["mean"] = s.mean;
        n["var"] = s.variance();
        n["min"] = s.count ? ordered_json(s.min) : ordered_json(nullptr);
        n["max"] = s.count ? ordered_json(s.max) : ordered_json(nullptr);
        n["n"] = s.count;
        if (!g.table.interpretation(id).empty()) n["interpretation"] = g.table.interpretation(id);
        nodes.push_back(std::move(n));
    }
    j["nodes"] = std::move(nodes);
    ordered_json edges = ordered_json::array();
    for (const auto& [edge, count] : g.graph.edges()) {
        ordered_json e;
        e["src"] = node_label(edge.first);
        e["dst"] = node_label(edge.second);
        e["count"] = count;
        e["prob"] = g.graph.edge_probability(edge.first, edge.second);
        edges.push_back(std::move(e));
    }
    j["edges"] = std::move(edges);
    return j;
}

inline std::string export_json(const AnnotatedGraph& g) { return graph_to_json(g).dump(2) + "\n"; }

inline std::string export_graph(const AnnotatedGraph& g, GraphFormat format) {
    switch (format) {
    case GraphFormat::dot: return export_dot(g);
    case GraphFormat::tsv: return export_tsv(g);
    case GraphFormat::json: return export_json(g);
    }
    return {};
}

/// Refuses to export while the aggregator has an open trace.
inline std::string export_graph(const TraceAggregator& agg, GraphFormat format) {
    return export_graph(agg.finished_state(), format);
}

/// Rebuilds a graph from its json export. Statistics are restored from the
/// rounded variance, so they compare equal within floating tolerance only.
inline AnnotatedGraph import_graph_json(std::string_view text) {
    AnnotatedGraph g;
    try {
        auto j = nlohmann::json::parse(text);
        const auto trace_count = j.at("trace_count").get<std::uint64_t>();
        g.graph.add_traces(trace_count);
        NodeId expected = 1;
        for (const auto& n : j.at("nodes")) {
            const auto id = parse_node_label(n.at("id").get<std::string>());
            if (id != expected++) throw Error(ErrorCode::ParseError, "node ids must be dense A1..AN in order");
            g.table.intern(n.at("address").get<std::string>());
            if (n.contains("interpretation"))
                g.table.set_interpretation(id, n["interpretation"].get<std::string>());
            g.graph.ensure_node(id);
            g.graph.add_visit(id, n.at("visits").get<std::uint64_t>());
            RunningStats s;
            s.count = n.contains("n") ? n["n"].get<std::uint64_t>() : n.at("visits").get<std::uint64_t>();
            if (s.count > 0) {
                s.mean = n.at("mean").get<double>();
                s.m2 = n.at("var").get<double>() * static_cast<double>(s.count > 1 ? s.count - 1 : 0);
                s.min = n.at("min").get<double>();
                s.max = n.at("max").get<double>();
            }
            g.graph.set_stats(id, s);
        }
        std::uint64_t end_visits = 0;
        for (const auto& e : j.at("edges")) {
            const auto src = parse_node_label(e.at("src").get<std::string>());
            const auto dst = parse_node_label(e.at("dst").get<std::string>());
            for (auto id : {src, dst})
                if (id != kStartNode && id != kEndNode && !g.table.contains(id))
                    throw Error(ErrorCode::UnknownId, "edge references " + node_label(id));
            const auto count = e.at("count").get<std::uint64_t>();
            g.graph.add_edge(src, dst, count);
            if (dst == kEndNode) end_visits += count;
        }
        g.graph.add_visit(kStartNode, trace_count);
        g.graph.add_visit(kEndNode, end_visits);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("graph json: ") + e.what());
    }
    return g;
}

} // namespace simhijack
