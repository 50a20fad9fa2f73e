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

// Operator commands: serve, trace, graph, infer, replay, compare.
// Exit status: 0 success, 1 usage error, 2 runtime or protocol error.

#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "simhijack/aggregator.hpp"
#include "simhijack/channel.hpp"
#include "simhijack/client.hpp"
#include "simhijack/compare.hpp"
#include "simhijack/controller.hpp"
#include "simhijack/error.hpp"
#include "simhijack/graph_export.hpp"
#include "simhijack/malaria.hpp"
#include "simhijack/models.hpp"
#include "simhijack/trace_log.hpp"

namespace simhijack::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr std::string_view kTraceLogName = "traces.sjtl";
inline constexpr std::string_view kGraphJsonName = "graph.json";
inline constexpr std::string_view kAddressTsvName = "addresses.tsv";
inline constexpr std::string_view kGraphDotName = "graph.dot";
inline constexpr std::string_view kInferenceReportName = "inference.json";
inline constexpr std::string_view kReplayLogName = "replay.sjtl";

/// Thrown for bad flag combinations; maps to exit status 1.
struct UsageFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::IoError, "write failed on " + path.string());
}

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
    std::filesystem::path p(dir);
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (!std::filesystem::is_directory(p)) throw Error(ErrorCode::IoError, "cannot create output directory " + dir);
    return p;
}

inline Endpoint parse_endpoint(const std::string& uri) {
    try {
        return Endpoint::parse(uri);
    } catch (const Error& e) {
        throw UsageFailure(e.what());
    }
}

inline double parse_number(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw UsageFailure("bad number '" + text + "' in " + what);
    }
}

/// `addr=value[:intervene]` (also accepts an explicit `:condition`).
inline std::pair<std::string, ForcedValue> parse_force(const std::string& spec) {
    std::string body = spec;
    ForceMode mode = ForceMode::condition;
    for (auto [suffix, m] : {std::pair{std::string_view(":intervene"), ForceMode::intervene},
                             std::pair{std::string_view(":condition"), ForceMode::condition}}) {
        if (body.size() > suffix.size() && body.ends_with(suffix)) {
            body.resize(body.size() - suffix.size());
            mode = m;
            break;
        }
    }
    const auto eq = body.rfind('=');
    if (eq == std::string::npos || eq == 0) throw UsageFailure("--force expects addr=value[:intervene], got " + spec);
    const double value = parse_number(body.substr(eq + 1), "--force " + spec);
    return {body.substr(0, eq), ForcedValue{Tensor::scalar(value), mode}};
}

/// JSON object: base address -> number or list of numbers.
inline ObserveOverrides load_observe_overrides(const std::filesystem::path& path) {
    ObserveOverrides out;
    try {
        auto j = nlohmann::json::parse(malaria::read_text_file(path));
        if (!j.is_object()) throw Error(ErrorCode::ParseError, "observations file must map addresses to values");
        for (const auto& [address, value] : j.items()) {
            std::vector<Tensor> values;
            if (value.is_number()) {
                values.push_back(Tensor::scalar(value.get<double>()));
            } else if (value.is_array()) {
                for (const auto& v : value) {
                    if (!v.is_number()) throw Error(ErrorCode::ParseError, "observation values must be numbers");
                    values.push_back(Tensor::scalar(v.get<double>()));
                }
            } else {
                throw Error(ErrorCode::ParseError, "observation for " + address + " must be a number or list");
            }
            out.emplace(address, std::move(values));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
    return out;
}

/// `A<k><TAB>free text` lines; `#` comments.
inline void apply_interpretations(AddressTable& table, const std::filesystem::path& path) {
    std::istringstream in(malaria::read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw Error(ErrorCode::ParseError, "interpretation line needs id<TAB>text");
        const auto id = parse_node_label(line.substr(0, tab));
        if (table.contains(id)) table.set_interpretation(id, line.substr(tab + 1));
    }
}

inline void write_graph_artifacts(const AnnotatedGraph& g, const std::filesystem::path& dir) {
    write_file(dir / kGraphJsonName, export_json(g));
    write_file(dir / kAddressTsvName, export_tsv(g));
    write_file(dir / kGraphDotName, export_dot(g));
}

inline AnnotatedGraph load_graph(const std::string& path) { return import_graph_json(malaria::read_text_file(path)); }

inline nlohmann::ordered_json estimate_to_json(const PosteriorEstimate& e) {
    return {{"address", e.address}, {"mean", e.mean},       {"variance", e.variance},
            {"ess", e.ess},         {"num_traces", e.num_traces}};
}

/// Progress line every `every` traces: rate, resident keys, log size.
class ProgressReporter {
public:
    ProgressReporter(std::ostream& err, bool enabled, std::string label)
        : err_(err), enabled_(enabled), label_(std::move(label)), start_(std::chrono::steady_clock::now()) {}

    void on_trace(const TraceAggregator& agg) {
        ++done_;
        if (!enabled_ || done_ % kEvery != 0) return;
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::lock_guard lock(mutex());
        err_ << label_ << "traces=" << done_ << " traces_per_sec=" << (secs > 0 ? done_ / secs : 0.0)
             << " resident_keys=" << agg.resident_key_count() << " log_bytes=" << agg.log_bytes() << "\n";
        err_.flush();
    }

private:
    static std::mutex& mutex() {
        static std::mutex m;
        return m;
    }

    static constexpr std::uint64_t kEvery = 100;
    std::ostream& err_;
    bool enabled_;
    std::string label_;
    std::chrono::steady_clock::time_point start_;
    std::uint64_t done_ = 0;
};

} // namespace detail

struct Streams {
    std::ostream& out;
    std::ostream& err;
};

struct ServeArgs {
    std::string listen;
    std::string scenario;
    std::string observations;
    std::string model = "malaria";
    bool persist = false;
};

inline void add_serve_options(CLI::App& cmd, ServeArgs& a) {
    cmd.add_option("--listen", a.listen, "Endpoint to listen on (tcp://host:port or ipc:///path)")->required();
    cmd.add_option("--scenario", a.scenario, "Scenario JSON file (malaria model)");
    cmd.add_option("--observations", a.observations, "JSON list of reported monthly cases");
    cmd.add_option("--model", a.model, "malaria, normal, conjugate or constant")->capture_default_str();
    cmd.add_flag("--persist", a.persist, "Accept further controller sessions after Shutdown");
}

inline int run_serve(const ServeArgs& a, Streams io) {
    const auto endpoint = detail::parse_endpoint(a.listen);
    ForwardFn forward;
    std::string model_name = a.model;
    if (a.model == "malaria") {
        if (a.scenario.empty()) throw UsageFailure("serve --model malaria requires --scenario");
        auto cfg = malaria::load_scenario(a.scenario);
        std::optional<std::vector<double>> obs;
        if (!a.observations.empty()) obs = malaria::load_observations(a.observations, cfg);
        forward = malaria::make_forward(cfg, std::move(obs));
    } else {
        if (!a.observations.empty()) throw UsageFailure("--observations applies to the malaria model only");
        try {
            forward = models::by_name(a.model);
        } catch (const Error& e) {
            throw UsageFailure(e.what());
        }
    }
    ServeOptions opts;
    opts.persist = a.persist;
    opts.on_listening = [&io](const Endpoint& bound) {
        io.err << "listening on " << bound.to_string() << std::endl;
    };
    serve_forward(endpoint, model_name, forward, opts);
    return kExitOk;
}

struct TraceArgs {
    std::vector<std::string> connect;
    std::uint64_t num_traces = 0;
    std::uint64_t seed = 0;
    std::string out;
    bool progress = false;
    std::uint32_t parallel = 1;
    std::string interpretations;
};

inline int run_trace(const TraceArgs& a, Streams io) {
    if (a.num_traces < 1) throw UsageFailure("--num-traces must be >= 1");
    if (a.parallel < 1) throw UsageFailure("--parallel must be >= 1");
    if (a.connect.size() != a.parallel)
        throw UsageFailure("--parallel " + std::to_string(a.parallel) + " needs exactly that many --connect endpoints");
    if (a.num_traces < a.parallel) throw UsageFailure("--num-traces must be >= --parallel");
    std::vector<Endpoint> endpoints;
    for (const auto& c : a.connect) endpoints.push_back(detail::parse_endpoint(c));
    const auto dir = detail::prepare_out_dir(a.out);

    const std::uint32_t k = a.parallel;
    std::vector<SessionConfig> configs(k);
    for (std::uint32_t s = 0; s < k; ++s) {
        auto& c = configs[s];
        c.endpoint = endpoints[s];
        c.num_traces = a.num_traces / k + (s < a.num_traces % k ? 1 : 0);
        c.master_seed = a.seed + (std::uint64_t{s} << 32);
        c.trace_log_path = k == 1 ? dir / kTraceLogName : dir / ("traces." + std::to_string(s) + ".sjtl");
        c.run_options.retention = TraceRetention::none;
    }

    std::vector<std::optional<TraceAggregator>> results(k);
    std::vector<std::exception_ptr> failures(k);
    auto run_session = [&](std::uint32_t s) {
        try {
            detail::ProgressReporter progress(io.err, a.progress, k == 1 ? "" : "session=" + std::to_string(s) + " ");
            auto cfg = configs[s];
            cfg.on_trace = [&progress](const Trace&, const TraceAggregator& agg) { progress.on_trace(agg); };
            results[s].emplace(collect_traces(cfg));
        } catch (...) {
            failures[s] = std::current_exception();
        }
    };
    if (k == 1) {
        run_session(0);
    } else {
        std::vector<std::thread> threads;
        for (std::uint32_t s = 0; s < k; ++s) threads.emplace_back(run_session, s);
        for (auto& t : threads) t.join();
    }
    for (auto& f : failures)
        if (f) std::rethrow_exception(f);

    AnnotatedGraph merged = results[0]->state();
    for (std::uint32_t s = 1; s < k; ++s) merge_into(merged, results[s]->state());
    if (!a.interpretations.empty()) detail::apply_interpretations(merged.table, a.interpretations);
    detail::write_graph_artifacts(merged, dir);
    io.out << "traces=" << merged.graph.trace_count() << " addresses=" << merged.table.size()
           << " edges=" << merged.graph.edges().size() << " out=" << dir.string() << "\n";
    return kExitOk;
}

struct GraphArgs {
    std::string log;
    std::string out;
    std::string interpretations;
};

/// Rebuilds graph artifacts from an existing trace log.
inline int run_graph(const GraphArgs& a, Streams io) {
    const auto dir = detail::prepare_out_dir(a.out);
    TraceAggregator agg;
    LoggedTraceReader reader(a.log);
    while (auto t = reader.next()) {
        if (!t->complete) break;
        agg.begin_trace(t->trace.trace_id);
        for (const auto& e : t->trace.events) agg.ingest(e);
        agg.finalize_trace(t->trace.outcome);
    }
    AnnotatedGraph g = agg.finished_state();
    if (!a.interpretations.empty()) detail::apply_interpretations(g.table, a.interpretations);
    detail::write_graph_artifacts(g, dir);
    io.out << "traces=" << g.graph.trace_count() << " addresses=" << g.table.size() << " out=" << dir.string()
           << "\n";
    return kExitOk;
}

struct InferArgs {
    std::string connect;
    std::uint64_t num_traces = 0;
    std::uint64_t seed = 0;
    std::string out;
    std::vector<std::string> force;
    std::string observations;
    std::vector<std::string> query;
    bool trace_log = false;
};

inline int run_infer(const InferArgs& a, Streams io) {
    if (a.num_traces < 1) throw UsageFailure("--num-traces must be >= 1");
    const auto endpoint = detail::parse_endpoint(a.connect);
    policy::Forced forced;
    for (const auto& f : a.force) {
        auto [address, value] = detail::parse_force(f);
        forced.assignments[address] = value;
    }
    InferenceConfig cfg;
    cfg.num_traces = a.num_traces;
    cfg.master_seed = a.seed;
    if (!forced.assignments.empty()) cfg.policy = forced;
    if (!a.observations.empty()) cfg.run_options.observe_overrides = detail::load_observe_overrides(a.observations);
    const auto dir = detail::prepare_out_dir(a.out);

    std::optional<TraceAggregator> agg;
    if (a.trace_log) {
        agg.emplace(dir / kTraceLogName);
        cfg.aggregator = &*agg;
    }
    auto controller = Controller::connect(endpoint);
    InferenceResult result;
    try {
        result = likelihood_weighting(controller, cfg);
    } catch (const Error& e) {
        controller.abort(e.what());
        throw;
    }
    controller.shutdown();
    if (agg) agg->flush();

    auto queries = a.query.empty() ? sampled_addresses(result.traces) : a.query;
    nlohmann::ordered_json report;
    nlohmann::ordered_json estimates = nlohmann::ordered_json::array();
    for (const auto& q : queries) estimates.push_back(detail::estimate_to_json(posterior_query(result.traces, q)));
    report["estimates"] = std::move(estimates);
    report["log_marginal"] = result.log_marginal;
    report["ess"] = result.ess;
    report["num_traces"] = result.traces.size();
    report["divergent_count"] = result.divergent_count;
    detail::write_file(dir / kInferenceReportName, report.dump(2) + "\n");
    io.out << report.dump(2) << "\n";
    return kExitOk;
}

struct ReplayArgs {
    std::string connect;
    std::string log;
    std::uint64_t index = 0;
    std::string out;
    std::string on_divergence = "fallback";
};

inline int run_replay(const ReplayArgs& a, Streams io) {
    const auto endpoint = detail::parse_endpoint(a.connect);
    policy::Replay replay;
    if (a.on_divergence == "abort")
        replay.on_divergence = policy::OnDivergence::abort;
    else if (a.on_divergence != "fallback")
        throw UsageFailure("--on-divergence must be fallback or abort");
    replay.source = load_logged_trace(a.log, a.index);

    std::optional<TraceAggregator> agg;
    if (!a.out.empty()) agg.emplace(detail::prepare_out_dir(a.out) / kReplayLogName);

    auto controller = Controller::connect(endpoint);
    auto rng = Rng::for_trace(0, replay.source.trace_id);
    const auto trace = controller.run_forward(replay, replay.source.trace_id, rng, agg ? &*agg : nullptr);
    controller.shutdown();
    if (agg) agg->flush();

    std::uint64_t matched = 0;
    const auto& src = replay.source.events;
    for (std::size_t i = 0; i < trace.events.size() && i < src.size(); ++i)
        if (trace.events[i].address == src[i].address && trace.events[i].value == src[i].value) ++matched;
    const bool identical = matched == src.size() && trace.events.size() == src.size();
    nlohmann::ordered_json summary = {{"trace_id", trace.trace_id},
                                      {"events", trace.events.size()},
                                      {"source_events", src.size()},
                                      {"matched_events", matched},
                                      {"identical", identical},
                                      {"divergent", trace.divergent},
                                      {"log_joint", trace.log_joint},
                                      {"log_weight", trace.log_weight}};
    io.out << summary.dump(2) << "\n";
    return kExitOk;
}

struct CompareArgs {
    std::string a;
    std::string b;
    std::string map;
    std::string out;
};

inline int run_compare(const CompareArgs& args, Streams io) {
    const auto a = detail::load_graph(args.a);
    const auto b = detail::load_graph(args.b);
    const auto mapping = args.map.empty() ? identity_map(a, b) : parse_node_map(malaria::read_text_file(args.map));
    const auto report = compare_graphs(a, b, mapping);
    const auto text = report_to_json(report, a, b).dump(2) + "\n";
    if (args.out.empty()) {
        io.out << text;
    } else {
        detail::write_file(args.out, text);
    }
    return kExitOk;
}

/// Entry point shared by the tools and the tests.
inline int run_command(const std::vector<std::string>& argv, Streams io) {
    CLI::App app{"Hijack stochastic simulators: serve, trace, analyze and infer", "simhijack"};
    app.require_subcommand(1, 1);

    ServeArgs serve_args;
    add_serve_options(*app.add_subcommand("serve", "Serve a model for a controller to drive"), serve_args);

    TraceArgs trace_args;
    auto* trace = app.add_subcommand("trace", "Collect traces and build the trace graph");
    trace->add_option("--connect", trace_args.connect, "Simulator endpoint (repeat once per --parallel session)")
        ->required();
    trace->add_option("--num-traces", trace_args.num_traces, "Number of forward executions")->required();
    trace->add_option("--seed", trace_args.seed, "Master seed")->capture_default_str();
    trace->add_option("--out", trace_args.out, "Output directory")->required();
    trace->add_flag("--progress", trace_args.progress, "Report rate and resident key count every 100 traces");
    trace->add_option("--parallel", trace_args.parallel, "Concurrent sessions")->capture_default_str();
    trace->add_option("--interpretations", trace_args.interpretations, "TSV of id<TAB>interpretation");

    GraphArgs graph_args;
    auto* graph = app.add_subcommand("graph", "Rebuild graph artifacts from a trace log");
    graph->add_option("--log", graph_args.log, "Trace log (.sjtl)")->required();
    graph->add_option("--out", graph_args.out, "Output directory")->required();
    graph->add_option("--interpretations", graph_args.interpretations, "TSV of id<TAB>interpretation");

    InferArgs infer_args;
    auto* infer = app.add_subcommand("infer", "Likelihood weighting against a served model");
    infer->add_option("--connect", infer_args.connect, "Simulator endpoint")->required();
    infer->add_option("--num-traces", infer_args.num_traces, "Number of weighted traces")->required();
    infer->add_option("--seed", infer_args.seed, "Master seed")->capture_default_str();
    infer->add_option("--out", infer_args.out, "Output directory")->required();
    infer->add_option("--force", infer_args.force, "addr=value[:intervene]; repeatable");
    infer->add_option("--observations", infer_args.observations, "JSON object: address -> value or list");
    infer->add_option("--query", infer_args.query, "Address to estimate; repeatable (default: all sampled)");
    infer->add_flag("--trace-log", infer_args.trace_log, "Also write traces.sjtl");

    ReplayArgs replay_args;
    auto* replay = app.add_subcommand("replay", "Re-execute a logged trace");
    replay->add_option("--connect", replay_args.connect, "Simulator endpoint")->required();
    replay->add_option("--log", replay_args.log, "Trace log (.sjtl)")->required();
    replay->add_option("--index", replay_args.index, "Trace index within the log")->capture_default_str();
    replay->add_option("--out", replay_args.out, "Directory for replay.sjtl");
    replay->add_option("--on-divergence", replay_args.on_divergence, "fallback or abort")->capture_default_str();

    CompareArgs compare_args;
    auto* compare = app.add_subcommand("compare", "Compare two trace graphs");
    compare->add_option("--a", compare_args.a, "graph.json of model A")->required();
    compare->add_option("--b", compare_args.b, "graph.json of model B")->required();
    compare->add_option("--map", compare_args.map, "TSV idA<TAB>idB (default: identity)");
    compare->add_option("--out", compare_args.out, "Report path (default: stdout)");

    std::vector<std::string> args(argv.rbegin(), argv.rend());
    if (!args.empty()) args.pop_back();  // program name
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, io.out, io.err);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (app.got_subcommand("serve")) return run_serve(serve_args, io);
        if (app.got_subcommand("trace")) return run_trace(trace_args, io);
        if (app.got_subcommand("graph")) return run_graph(graph_args, io);
        if (app.got_subcommand("infer")) return run_infer(infer_args, io);
        if (app.got_subcommand("replay")) return run_replay(replay_args, io);
        if (app.got_subcommand("compare")) return run_compare(compare_args, io);
    } catch (const UsageFailure& e) {
        io.err << "usage error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    } catch (const Error& e) {
        io.err << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        io.err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

/// `simhijack-malaria serve ...`: the reference simulator on its own.
inline int run_malaria_command(const std::vector<std::string>& argv, Streams io) {
    CLI::App app{"Reference malaria simulator, hijacked", "simhijack-malaria"};
    app.require_subcommand(1, 1);
    ServeArgs serve_args;
    add_serve_options(*app.add_subcommand("serve", "Serve the scenario for a controller to drive"), serve_args);
    std::vector<std::string> args(argv.rbegin(), argv.rend());
    if (!args.empty()) args.pop_back();
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, io.out, io.err);
        return rc == 0 ? kExitOk : kExitUsage;
    }
    try {
        return run_serve(serve_args, io);
    } catch (const UsageFailure& e) {
        io.err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        io.err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

} // namespace simhijack::cli
