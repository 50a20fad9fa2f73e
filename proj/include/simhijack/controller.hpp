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

// Controller: the probabilistic-programming side of a hijacked simulator.
// It drives forward executions, answers every Sample under a policy, scores
// Observes, streams events into a TraceAggregator, and runs likelihood
// weighting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "simhijack/aggregator.hpp"
#include "simhijack/channel.hpp"
#include "simhijack/distributions.hpp"
#include "simhijack/error.hpp"
#include "simhijack/rng.hpp"
#include "simhijack/trace.hpp"
#include "simhijack/wire.hpp"

namespace simhijack {

enum class ForceMode { condition, intervene };

struct ForcedValue {
    Tensor value;
    ForceMode mode = ForceMode::condition;
};

namespace policy {

struct Prior {};

/// Keyed by base address. Only the first occurrence of an address in a
/// trace is forced; later occurrences are drawn from the prior. Draws the
/// simulator marks with control=false are never forced.
struct Forced {
    std::map<std::string, ForcedValue> assignments;
};

enum class OnDivergence { fallback_prior, abort };

/// Re-issues a recorded trace's sample values, matched positionally among
/// the draws sharing each base address.
struct Replay {
    Trace source;
    OnDivergence on_divergence = OnDivergence::fallback_prior;
};

} // namespace policy

using SamplingPolicy = std::variant<policy::Prior, policy::Forced, policy::Replay>;

/// Observed values substituted by base address. A single value applies to
/// every occurrence; a longer list is used positionally and the model's own
/// value is kept once it runs out.
using ObserveOverrides = std::map<std::string, std::vector<Tensor>>;

enum class TraceRetention {
    all,               ///< keep every event in the returned Trace
    first_occurrence,  ///< keep only the first event per address (enough for posterior queries)
    none,              ///< keep no events; sums and outcome only
};

struct RunOptions {
    ObserveOverrides observe_overrides;
    TraceRetention retention = TraceRetention::all;
};

inline constexpr std::string_view kControllerSystemName = "simhijack";

class Controller {
public:
    /// Performs the handshake over an already-connected channel.
    explicit Controller(Channel channel, std::string system_name = std::string(kControllerSystemName),
                        std::uint32_t protocol_version = kProtocolVersion)
        : channel_(std::move(channel)) {
        channel_.send(msg::Handshake{std::move(system_name), protocol_version});
        auto reply = channel_.recv();
        if (auto* e = std::get_if<msg::Error>(&reply)) throw Error(ErrorCode::RemoteError, e->message);
        auto* hr = std::get_if<msg::HandshakeResult>(&reply);
        if (!hr) violation(reply, "HandshakeResult");
        if (hr->protocol_version != protocol_version) {
            const auto why = "simulator speaks protocol version " + std::to_string(hr->protocol_version);
            try {
                channel_.send(msg::Error{why});
                channel_.send(msg::Shutdown{});
            } catch (const Error&) {
            }
            throw Error(ErrorCode::VersionMismatch, why);
        }
        model_name_ = hr->model_name;
    }

    static Controller connect(const Endpoint& endpoint, const ConnectOptions& opts = {}) {
        return Controller(simhijack::connect(endpoint, opts));
    }

    const std::string& model_name() const noexcept { return model_name_; }

    Channel& channel() noexcept { return channel_; }

    /// One remote forward execution. Events are streamed into `sink` when
    /// given; `rng` serves prior draws.
    Trace run_forward(const SamplingPolicy& pol, std::uint64_t trace_id, Rng& rng,
                      TraceAggregator* sink = nullptr, const RunOptions& options = {}) {
        if (shut_down_) throw Error(ErrorCode::ProtocolViolation, "run_forward after shutdown");
        if (sink) sink->begin_trace(trace_id);
        try {
            return run_forward_impl(pol, trace_id, rng, sink, options);
        } catch (...) {
            if (sink) sink->flush();
            throw;
        }
    }

    void shutdown() {
        if (shut_down_) return;
        shut_down_ = true;
        channel_.send(msg::Shutdown{});
    }

    /// Tells the simulator why the session is being abandoned.
    void abort(const std::string& why) noexcept {
        if (shut_down_) return;
        shut_down_ = true;
        try {
            channel_.send(msg::Error{why});
        } catch (...) {
        }
    }

private:
    [[noreturn]] void violation(const Message& got, std::string_view expected) {
        const auto why = "expected " + std::string(expected) + ", got " + std::string(message_name(got));
        abort(why);
        throw Error(ErrorCode::ProtocolViolation, why);
    }

    [[noreturn]] void fail(ErrorCode code, const std::string& why) {
        abort(why);
        throw Error(code, why);
    }

    struct ReplayIndex {
        std::unordered_map<std::string, std::vector<const TraceEvent*>> by_address;
    };

    Trace run_forward_impl(const SamplingPolicy& pol, std::uint64_t trace_id, Rng& rng, TraceAggregator* sink,
                           const RunOptions& options) {
        const auto* forced = std::get_if<policy::Forced>(&pol);
        const auto* replay = std::get_if<policy::Replay>(&pol);
        ReplayIndex replay_index;
        if (replay) {
            for (const auto& e : replay->source.events)
                if (e.kind == EventKind::sample) replay_index.by_address[e.address].push_back(&e);
        }

        Trace trace;
        trace.trace_id = trace_id;
        std::unordered_map<std::string, std::uint32_t> occurrence;
        std::uint32_t index = 0;

        auto record = [&](TraceEvent&& e, std::uint32_t occ) {
            if (sink) sink->ingest(e);
            if (options.retention == TraceRetention::all ||
                (options.retention == TraceRetention::first_occurrence && occ == 0))
                trace.events.push_back(std::move(e));
        };

        channel_.send(msg::Run{trace_id});
        for (;;) {
            auto m = channel_.recv();
            if (auto* s = std::get_if<msg::Sample>(&m)) {
                const auto occ = occurrence[s->address]++;
                TraceEvent e;
                e.kind = EventKind::sample;
                e.index_in_trace = index++;
                bool resolved = false;
                if (replay) {
                    auto it = replay_index.by_address.find(s->address);
                    if (it != replay_index.by_address.end() && occ < it->second.size()) {
                        e.value = it->second[occ]->value;
                        resolved = true;
                    } else if (replay->on_divergence == policy::OnDivergence::abort) {
                        fail(ErrorCode::Divergence, "replay diverged at " + s->address + " occurrence " +
                                                        std::to_string(occ));
                    } else {
                        trace.divergent = true;
                    }
                } else if (forced && s->control && occ == 0) {
                    if (auto it = forced->assignments.find(s->address); it != forced->assignments.end()) {
                        e.value = it->second.value;
                        e.conditioned = it->second.mode == ForceMode::condition;
                        resolved = true;
                    }
                }
                if (!resolved) e.value = sample(s->dist, rng);
                e.log_prob = log_prob(s->dist, e.value);
                if (e.conditioned) {
                    if (e.log_prob == -std::numeric_limits<double>::infinity())
                        fail(ErrorCode::SupportViolation, "conditioned value outside the support at " + s->address);
                    trace.log_weight += e.log_prob;
                }
                trace.log_joint += e.log_prob;
                channel_.send(msg::SampleResult{e.value});
                e.address = std::move(s->address);
                e.dist = std::move(s->dist);
                record(std::move(e), occ);
            } else if (auto* o = std::get_if<msg::Observe>(&m)) {
                const auto occ = occurrence[o->address]++;
                TraceEvent e;
                e.kind = EventKind::observe;
                e.index_in_trace = index++;
                e.value = std::move(o->value);
                if (auto it = options.observe_overrides.find(o->address); it != options.observe_overrides.end()) {
                    const auto& values = it->second;
                    if (values.size() == 1)
                        e.value = values.front();
                    else if (occ < values.size())
                        e.value = values[occ];
                }
                e.log_prob = log_prob(o->dist, e.value);
                trace.log_weight += e.log_prob;
                channel_.send(msg::ObserveResult{});
                e.address = std::move(o->address);
                e.dist = std::move(o->dist);
                record(std::move(e), occ);
            } else if (auto* r = std::get_if<msg::RunResult>(&m)) {
                trace.outcome = std::move(r->outcome);
                if (sink) {
                    const auto summary = sink->finalize_trace(trace.outcome);
                    // the aggregator sums the same values in the same order
                    trace.log_joint = summary.log_joint;
                    trace.log_weight = summary.log_weight;
                }
                return trace;
            } else if (auto* err = std::get_if<msg::Error>(&m)) {
                shut_down_ = true;
                throw Error(ErrorCode::RemoteError, err->message);
            } else {
                violation(m, "Sample, Observe or RunResult");
            }
        }
    }

    Channel channel_;
    std::string model_name_;
    bool shut_down_ = false;
};

struct SessionConfig {
    Endpoint endpoint;
    std::uint64_t num_traces = 1;
    std::uint64_t master_seed = 0;
    /// Empty path: no trace log is written.
    std::filesystem::path trace_log_path;
    SamplingPolicy policy = policy::Prior{};
    RunOptions run_options;
    ConnectOptions connect_options;
    /// Called after every finalized trace with the aggregator's state.
    std::function<void(const Trace&, const TraceAggregator&)> on_trace;

    void validate() const {
        if (num_traces < 1) throw Error(ErrorCode::ConfigError, "num_traces must be >= 1");
    }
};

/// Runs num_traces forwards (trace ids 0..N-1, per-trace seed master_seed +
/// trace_id) through `aggregator`, then sends Shutdown. On failure the log
/// is flushed and the error rethrown.
inline void collect_traces(Controller& controller, const SessionConfig& config, TraceAggregator& aggregator) {
    config.validate();
    try {
        for (std::uint64_t id = 0; id < config.num_traces; ++id) {
            auto rng = Rng::for_trace(config.master_seed, id);
            auto trace = controller.run_forward(config.policy, id, rng, &aggregator, config.run_options);
            if (config.on_trace) config.on_trace(trace, aggregator);
        }
        controller.shutdown();
    } catch (...) {
        aggregator.flush();
        throw;
    }
    aggregator.flush();
}

/// Connects to config.endpoint and collects; returns the session's aggregator.
inline TraceAggregator collect_traces(const SessionConfig& config) {
    config.validate();
    TraceAggregator aggregator = config.trace_log_path.empty() ? TraceAggregator()
                                                               : TraceAggregator(config.trace_log_path);
    auto controller = Controller::connect(config.endpoint, config.connect_options);
    collect_traces(controller, config, aggregator);
    return aggregator;
}

// ---------------------------------------------------------------------------
// Likelihood weighting

struct WeightedTrace {
    Trace trace;
    double log_weight = 0.0;
};

struct WeightStats {
    double log_marginal;  ///< log mean weight
    double ess;           ///< (sum w)^2 / sum w^2
};

/// Log-space weight summary with max-shift. Throws AllWeightsZero when every
/// log weight is -inf.
inline WeightStats summarize_log_weights(const std::vector<double>& log_weights) {
    if (log_weights.empty()) throw Error(ErrorCode::AllWeightsZero, "no weights");
    const double max = *std::max_element(log_weights.begin(), log_weights.end());
    if (max == -std::numeric_limits<double>::infinity() || std::isnan(max))
        throw Error(ErrorCode::AllWeightsZero, "every trace has zero weight");
    double sum = 0.0;
    double sum_sq = 0.0;
    for (double lw : log_weights) {
        const double w = std::exp(lw - max);
        sum += w;
        sum_sq += w * w;
    }
    const double n = static_cast<double>(log_weights.size());
    return {max + std::log(sum) - std::log(n), sum * sum / sum_sq};
}

struct InferenceResult {
    std::vector<WeightedTrace> traces;
    double log_marginal = 0.0;
    double ess = 0.0;
    std::uint64_t divergent_count = 0;
};

struct InferenceConfig {
    std::uint64_t num_traces = 1000;
    std::uint64_t master_seed = 0;
    SamplingPolicy policy = policy::Prior{};
    RunOptions run_options{{}, TraceRetention::first_occurrence};
    /// Optional sink, e.g. to keep a trace log of the inference run.
    TraceAggregator* aggregator = nullptr;
};

/// Importance sampling from the prior; weights come from observes and
/// condition-mode forced values. Does not shut the session down.
inline InferenceResult likelihood_weighting(Controller& controller, const InferenceConfig& config) {
    if (config.num_traces < 1) throw Error(ErrorCode::ConfigError, "num_traces must be >= 1");
    InferenceResult result;
    result.traces.reserve(config.num_traces);
    std::vector<double> log_weights;
    log_weights.reserve(config.num_traces);
    for (std::uint64_t id = 0; id < config.num_traces; ++id) {
        auto rng = Rng::for_trace(config.master_seed, id);
        auto trace = controller.run_forward(config.policy, id, rng, config.aggregator, config.run_options);
        if (trace.divergent) ++result.divergent_count;
        log_weights.push_back(trace.log_weight);
        const double lw = trace.log_weight;
        result.traces.push_back(WeightedTrace{std::move(trace), lw});
    }
    const auto stats = summarize_log_weights(log_weights);
    result.log_marginal = stats.log_marginal;
    result.ess = stats.ess;
    return result;
}

struct PosteriorEstimate {
    std::string address;
    double mean = 0.0;
    double variance = 0.0;
    double ess = 0.0;
    std::uint64_t num_traces = 0;
};

/// Self-normalized estimate of the value at `address` (first occurrence per
/// trace), over the traces that reach it.
inline PosteriorEstimate posterior_query(const std::vector<WeightedTrace>& traces, const std::string& address) {
    std::vector<double> log_weights;
    std::vector<double> values;
    for (const auto& wt : traces) {
        auto it = std::find_if(wt.trace.events.begin(), wt.trace.events.end(),
                               [&](const TraceEvent& e) { return e.address == address; });
        if (it == wt.trace.events.end() || !it->value.holds_single_value()) continue;
        log_weights.push_back(wt.log_weight);
        values.push_back(it->value.values.front());
    }
    if (values.empty()) throw Error(ErrorCode::AddressNeverSampled, address + " never sampled");
    const auto stats = summarize_log_weights(log_weights);
    const double max = *std::max_element(log_weights.begin(), log_weights.end());
    double sum_w = 0.0;
    double mean = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double w = std::exp(log_weights[i] - max);
        sum_w += w;
        mean += w * values[i];
    }
    mean /= sum_w;
    double var = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double w = std::exp(log_weights[i] - max);
        const double d = values[i] - mean;
        var += w * d * d;
    }
    var /= sum_w;
    return PosteriorEstimate{address, mean, var, stats.ess, static_cast<std::uint64_t>(values.size())};
}

/// Sample-event addresses of the weighted traces, in first-seen order.
inline std::vector<std::string> sampled_addresses(const std::vector<WeightedTrace>& traces) {
    std::vector<std::string> out;
    std::unordered_map<std::string, bool> seen;
    for (const auto& wt : traces)
        for (const auto& e : wt.trace.events)
            if (e.kind == EventKind::sample && seen.emplace(e.address, true).second) out.push_back(e.address);
    return out;
}

} // namespace simhijack
