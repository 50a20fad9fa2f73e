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

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <regex>
#include <set>

#include "generators.hpp"
#include "simhijack/client.hpp"
#include "simhijack/controller.hpp"
#include "simhijack/models.hpp"
#include "test_support.hpp"

namespace simhijack {
namespace {

using testing::ServerThread;
using testing::TempDir;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

ErrorCode server_code(const std::exception_ptr& p) {
    try {
        if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error";
    return ErrorCode::InvalidMessage;
}

template <class Fn>
ErrorCode code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error";
    return ErrorCode::InvalidMessage;
}

// One session: connect, run `body`, shut down, and check the server exited cleanly.
template <class Body>
void with_session(ForwardFn forward, Body&& body) {
    ServerThread server(std::move(forward));
    auto controller = Controller::connect(server.endpoint());
    body(controller);
    controller.shutdown();
    server.join();
}

TEST(Session, PriorMicroModel) {
    with_session(models::normal, [](Controller& c) {
        EXPECT_EQ(c.model_name(), "test-model");
        Rng rng(42);
        auto t = c.run_forward(policy::Prior{}, 0, rng);
        ASSERT_EQ(t.events.size(), 1u);
        const auto& e = t.events[0];
        EXPECT_EQ(e.address, "[x]__Normal");
        EXPECT_EQ(e.kind, EventKind::sample);
        EXPECT_EQ(t.outcome, e.value);
        EXPECT_EQ(e.log_prob, log_prob(dist::Normal{0, 1}, e.value));
        EXPECT_EQ(t.log_joint, e.log_prob);
        EXPECT_EQ(t.log_weight, 0.0);
        // The controller draws with the rng it was handed.
        Rng again(42);
        EXPECT_EQ(e.value, sample(dist::Normal{0, 1}, again));
    });
}

TEST(Session, ForcedConditionAndIntervene) {
    with_session(models::normal, [](Controller& c) {
        Rng rng(1);
        policy::Forced cond{{{"[x]__Normal", {Tensor::scalar(0.0), ForceMode::condition}}}};
        auto t = c.run_forward(cond, 0, rng);
        EXPECT_EQ(t.outcome, Tensor::scalar(0.0));
        EXPECT_NEAR(t.log_weight, -0.9189385, 1e-7);
        EXPECT_EQ(t.log_weight, -0.5 * std::log(2 * std::numbers::pi));
        EXPECT_EQ(t.log_joint, t.log_weight);

        policy::Forced iv{{{"[x]__Normal", {Tensor::scalar(0.0), ForceMode::intervene}}}};
        t = c.run_forward(iv, 1, rng);
        EXPECT_EQ(t.outcome, Tensor::scalar(0.0));
        EXPECT_EQ(t.log_weight, 0.0);
        EXPECT_NEAR(t.log_joint, -0.9189385, 1e-7);
    });
}

TEST(Session, ConstantModelHasEmptyTrace) {
    with_session(models::constant, [](Controller& c) {
        Rng rng(0);
        TraceAggregator agg;
        auto t = c.run_forward(policy::Prior{}, 0, rng, &agg);
        EXPECT_EQ(t.outcome, Tensor::scalar(7.0));
        EXPECT_TRUE(t.events.empty());
        EXPECT_EQ(t.log_joint, 0.0);
        EXPECT_EQ(agg.graph().edge_count(kStartNode, kEndNode), 1u);
    });
}

TEST(Session, ForcedOnlyFirstOccurrenceAndOnlyControlled) {
    ForwardFn model = [](ClientContext& ctx) {
        double a = ctx.sample_value(dist::Uniform{0, 10}, "u");
        double b = ctx.sample_value(dist::Uniform{0, 10}, "u");
        double c = ctx.sample(dist::Uniform{0, 10}, "free", false).item();
        return Tensor::vector({a, b, c});
    };
    with_session(model, [](Controller& c) {
        Rng rng(3);
        policy::Forced p{{{"[u]__Uniform", {Tensor::scalar(5.0), ForceMode::condition}},
                          {"[free]__Uniform", {Tensor::scalar(5.0), ForceMode::condition}}}};
        auto t = c.run_forward(p, 0, rng);
        EXPECT_EQ(t.outcome.values[0], 5.0);
        EXPECT_NE(t.outcome.values[1], 5.0);
        EXPECT_NE(t.outcome.values[2], 5.0);
        EXPECT_EQ(t.log_weight, -std::log(10.0));
        EXPECT_TRUE(t.events[0].conditioned);
        EXPECT_FALSE(t.events[1].conditioned);
    });
}

TEST(Session, ConditionOutsideSupportIsSupportViolation) {
    ServerThread server(models::normal);
    auto c = Controller::connect(server.endpoint());
    Rng rng(0);
    policy::Forced p{{{"[x]__Normal", {Tensor::vector({1, 2}), ForceMode::condition}}}};
    EXPECT_EQ(code_of([&] { c.run_forward(p, 0, rng); }), ErrorCode::SupportViolation);
    // The simulator is told why and stops.
    EXPECT_EQ(server_code(server.join_error()), ErrorCode::RemoteError);
}

TEST(Session, InterveneOutsideSupportIsAllowed) {
    ForwardFn model = [](ClientContext& ctx) { return ctx.sample(dist::Uniform{0, 1}, "u"); };
    with_session(model, [](Controller& c) {
        Rng rng(0);
        policy::Forced p{{{"[u]__Uniform", {Tensor::scalar(3.0), ForceMode::intervene}}}};
        auto t = c.run_forward(p, 0, rng);
        EXPECT_EQ(t.outcome, Tensor::scalar(3.0));
        EXPECT_EQ(t.log_joint, kNegInf);
        EXPECT_EQ(t.log_weight, 0.0);
    });
}

TEST(Client, AddressesFromFrameStack) {
    ForwardFn model = [](ClientContext& ctx) {
        EXPECT_EQ(ctx.address_for(dist::Normal{0, 1}, "gauss"), "[gauss]__Normal");
        ctx.sample(dist::Normal{0, 1}, "gauss");
        {
            ClientContext::ScopedFrame f1(ctx, "forward()");
            ClientContext::ScopedFrame f2(ctx, "infect_human()");
            ctx.sample(dist::Normal{0, 1}, "gauss");
            ctx.sample(dist::Normal{0, 1}, "gauss");
            EXPECT_EQ(ctx.occurrences("[forward(); infect_human(); gauss]__Normal"), 2u);
        }
        EXPECT_TRUE(ctx.frames().empty());
        EXPECT_EQ(code_of([&] { ctx.push_frame("a;b"); }), ErrorCode::IllegalFrameCharacter);
        EXPECT_EQ(code_of([&] { ctx.sample(dist::Normal{0, 1}, "bad]"); }), ErrorCode::IllegalFrameCharacter);
        ctx.push_frame("left_open");  // cleared before the next forward
        return Tensor::scalar(0);
    };
    with_session(model, [](Controller& c) {
        for (std::uint64_t id = 0; id < 2; ++id) {
            Rng rng(id);
            auto t = c.run_forward(policy::Prior{}, id, rng);
            ASSERT_EQ(t.events.size(), 3u);
            EXPECT_EQ(t.events[0].address, "[gauss]__Normal");
            EXPECT_EQ(t.events[1].address, "[forward(); infect_human(); gauss]__Normal");
            EXPECT_EQ(t.events[2].address, t.events[1].address);
            EXPECT_EQ(t.events[2].index_in_trace, 2u);
        }
    });
}

TEST(Client, AddressIsPureFunctionOfStackTagAndKind) {
    Listener l(Endpoint::parse(testing::unique_ipc_uri("pure")));
    auto a = connect(l.endpoint());
    auto b = l.accept();
    ClientContext ctx(a, "m");
    testing::Gen gen(4);
    for (int i = 0; i < 200; ++i) {
        std::vector<std::string> frames;
        for (auto n = gen.below(4); n > 0; --n) frames.push_back("f" + std::to_string(gen.below(100)));
        const auto d = gen.spec();
        for (const auto& f : frames) ctx.push_frame(f);
        std::vector<std::string> with_tag = frames;
        with_tag.push_back("tag");
        EXPECT_EQ(ctx.address_for(d, "tag"), format_address(with_tag, kind_name(d)));
        for (std::size_t k = 0; k < frames.size(); ++k) ctx.pop_frame();
    }
    EXPECT_EQ(code_of([&] { ctx.pop_frame(); }), ErrorCode::UsageError);
}

TEST(Client, SampleOutsideForwardIsUsageError) {
    Listener l(Endpoint::parse(testing::unique_ipc_uri("usage")));
    auto a = connect(l.endpoint());
    auto b = l.accept();
    ClientContext ctx(a, "m");
    EXPECT_EQ(code_of([&] { ctx.sample(dist::Normal{0, 1}, "x"); }), ErrorCode::UsageError);
    EXPECT_EQ(code_of([&] { ctx.observe(dist::Normal{0, 1}, 0.0, "y"); }), ErrorCode::UsageError);
}

TEST(Client, ObservesScoreAndMinusInfinityStillCompletes) {
    ForwardFn model = [](ClientContext& ctx) {
        const double x = ctx.sample_value(dist::Normal{0, 1}, "x");
        for (int i = 0; i < 5; ++i) ctx.observe(dist::Normal{x, 1}, 1.0, "y");
        ctx.observe(dist::Bernoulli{0.5}, 0.5, "impossible");
        return Tensor::scalar(x);
    };
    with_session(model, [](Controller& c) {
        Rng rng(9);
        auto t = c.run_forward(policy::Prior{}, 0, rng);
        ASSERT_EQ(t.events.size(), 7u);
        int observes = 0;
        for (const auto& e : t.events) observes += e.kind == EventKind::observe;
        EXPECT_EQ(observes, 6);
        EXPECT_EQ(t.events[1].log_prob, log_prob(dist::Normal{t.outcome.item(), 1}, 1.0));
        EXPECT_EQ(t.log_weight, kNegInf);
        EXPECT_EQ(t.log_joint, t.events[0].log_prob);
    });
}

TEST(Session, LogWeightDecomposition) {
    ForwardFn model = [](ClientContext& ctx) {
        const double a = ctx.sample_value(dist::Normal{0, 1}, "a");
        const double b = ctx.sample_value(dist::Exponential{1}, "b");
        ctx.observe(dist::Normal{a, 1}, 0.3, "y");
        ctx.observe(dist::Poisson{b + 1}, 2.0, "k");
        return Tensor::scalar(a + b);
    };
    with_session(model, [](Controller& c) {
        for (std::uint64_t id = 0; id < 20; ++id) {
            Rng rng(id);
            policy::Forced p{{{"[b]__Exponential", {Tensor::scalar(0.5), ForceMode::condition}}}};
            auto t = c.run_forward(p, id, rng);
            double observe_sum = 0.0, condition_sum = 0.0, sample_sum = 0.0;
            for (const auto& e : t.events) {
                if (e.kind == EventKind::observe) observe_sum += e.log_prob;
                else sample_sum += e.log_prob;
                if (e.conditioned) condition_sum += e.log_prob;
            }
            EXPECT_DOUBLE_EQ(t.log_weight, observe_sum + condition_sum);
            EXPECT_EQ(t.log_joint, sample_sum);
        }
    });
}

std::string tag_letter(const Message& m) {
    static const char* letters = "?HhRSsOoTXE";
    return std::string(1, letters[message_tag(m)]);
}

TEST(Session, TranscriptMatchesProtocolGrammar) {
    ForwardFn model = [](ClientContext& ctx) {
        const auto n = static_cast<int>(ctx.sample_value(dist::Poisson{2}, "n"));
        for (int i = 0; i < n; ++i) {
            ctx.sample(dist::Bernoulli{0.5}, "coin");
            ctx.observe(dist::Normal{0, 1}, 0.0, "obs");
        }
        return Tensor::scalar(n);
    };
    ServerThread server(model);
    std::string sent_and_received;
    auto channel = connect(server.endpoint());
    channel.set_observer([&](Channel::Direction, const Message& m) { sent_and_received += tag_letter(m); });
    Controller c(std::move(channel));
    SessionConfig cfg;
    cfg.num_traces = 25;
    cfg.master_seed = 5;
    TraceAggregator agg;
    collect_traces(c, cfg, agg);
    server.join();
    const std::regex grammar("Hh(R(Ss|Oo)*T){25}X");
    EXPECT_TRUE(std::regex_match(sent_and_received, grammar)) << sent_and_received;
}

TEST(Session, SimulatorOutOfOrderIsProtocolViolation) {
    Listener l(Endpoint::parse(testing::unique_ipc_uri("rogue")));
    std::thread rogue([&] {
        auto ch = l.accept();
        ch.recv();
        ch.send(msg::HandshakeResult{"rogue", kProtocolVersion});
        ch.recv();  // Run
        ch.send(msg::HandshakeResult{"again", kProtocolVersion});
        try {
            auto m = ch.recv();
            EXPECT_TRUE(std::holds_alternative<msg::Error>(m));
        } catch (const Error&) {
        }
    });
    auto c = Controller::connect(l.endpoint());
    Rng rng(0);
    EXPECT_EQ(code_of([&] { c.run_forward(policy::Prior{}, 0, rng); }), ErrorCode::ProtocolViolation);
    rogue.join();
}

TEST(Session, ControllerOutOfOrderIsProtocolViolation) {
    ServerThread server(models::normal);
    auto ch = connect(server.endpoint());
    ch.send(msg::Handshake{"raw", kProtocolVersion});
    EXPECT_TRUE(std::holds_alternative<msg::HandshakeResult>(ch.recv()));
    ch.send(msg::SampleResult{Tensor::scalar(1)});
    EXPECT_TRUE(std::holds_alternative<msg::Error>(ch.recv()));
    EXPECT_EQ(server_code(server.join_error()), ErrorCode::ProtocolViolation);
}

TEST(Session, VersionMismatch) {
    ServerThread server(models::normal);
    EXPECT_EQ(code_of([&] { Controller(connect(server.endpoint()), "old", 2); }), ErrorCode::RemoteError);
    EXPECT_EQ(server_code(server.join_error()), ErrorCode::VersionMismatch);
}

TEST(Session, RemoteModelFailureReachesController) {
    ForwardFn model = [](ClientContext& ctx) -> Tensor {
        ctx.sample(dist::Normal{0, 1}, "x");
        throw Error(ErrorCode::ValidationError, "model blew up");
    };
    ServerThread server(model);
    auto c = Controller::connect(server.endpoint());
    Rng rng(0);
    try {
        c.run_forward(policy::Prior{}, 0, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::RemoteError);
        EXPECT_NE(std::string(e.what()).find("model blew up"), std::string::npos);
    }
    EXPECT_EQ(server_code(server.join_error()), ErrorCode::ValidationError);
}

// Branchy model: a Poisson count decides how many draws happen at one address.
Tensor branchy(ClientContext& ctx) {
    const auto n = static_cast<int>(ctx.sample_value(dist::Poisson{3}, "n"));
    double sum = 0.0;
    ClientContext::ScopedFrame loop(ctx, "loop");
    for (int i = 0; i < n; ++i) sum += ctx.sample_value(dist::Normal{0, 1}, "z");
    if (sum > 0) ctx.sample(dist::Categorical{{0.2, 0.3, 0.5}}, "pick");
    return Tensor::scalar(sum);
}

TEST(Replay, ReproducesRecordedValues) {
    with_session(branchy, [](Controller& c) {
        for (std::uint64_t id = 0; id < 20; ++id) {
            Rng rng(id);
            auto original = c.run_forward(policy::Prior{}, id, rng);
            Rng other(999 + id);
            auto replayed = c.run_forward(policy::Replay{original, policy::OnDivergence::abort}, id, other);
            EXPECT_FALSE(replayed.divergent);
            ASSERT_EQ(replayed.events.size(), original.events.size());
            for (std::size_t i = 0; i < original.events.size(); ++i) {
                EXPECT_EQ(replayed.events[i].value, original.events[i].value);
                EXPECT_EQ(replayed.events[i].address, original.events[i].address);
                EXPECT_EQ(replayed.events[i].log_prob, original.events[i].log_prob);
            }
            EXPECT_EQ(replayed.outcome, original.outcome);
            EXPECT_EQ(replayed.log_joint, original.log_joint);
        }
    });
}

ForwardFn growing_model(std::shared_ptr<std::atomic<int>> runs) {
    return [runs](ClientContext& ctx) {
        const int extra = (*runs)++;
        double sum = 0.0;
        for (int i = 0; i <= extra; ++i) sum += ctx.sample_value(dist::Normal{0, 1}, "a");
        return Tensor::scalar(sum);
    };
}

TEST(Replay, DivergenceFallsBackToPrior) {
    with_session(growing_model(std::make_shared<std::atomic<int>>(0)), [](Controller& c) {
        Rng rng(1);
        auto original = c.run_forward(policy::Prior{}, 0, rng);
        ASSERT_EQ(original.events.size(), 1u);
        auto replayed = c.run_forward(policy::Replay{original, policy::OnDivergence::fallback_prior}, 0, rng);
        EXPECT_TRUE(replayed.divergent);
        ASSERT_EQ(replayed.events.size(), 2u);
        EXPECT_EQ(replayed.events[0].value, original.events[0].value);
        EXPECT_TRUE(std::isfinite(replayed.events[1].log_prob));
    });
}

TEST(Replay, DivergenceAborts) {
    ServerThread server(growing_model(std::make_shared<std::atomic<int>>(0)));
    auto c = Controller::connect(server.endpoint());
    Rng rng(1);
    auto original = c.run_forward(policy::Prior{}, 0, rng);
    EXPECT_EQ(code_of([&] { c.run_forward(policy::Replay{original, policy::OnDivergence::abort}, 0, rng); }),
              ErrorCode::Divergence);
    EXPECT_EQ(server_code(server.join_error()), ErrorCode::RemoteError);
}

TEST(Collect, WritesOneHeaderAndTrailerPerTrace) {
    TempDir dir("collect");
    ServerThread server(models::normal);
    SessionConfig cfg;
    cfg.endpoint = server.endpoint();
    cfg.num_traces = 2;
    cfg.trace_log_path = dir / "t.sjtl";
    auto agg = collect_traces(cfg);
    server.join();
    TraceLogReader r(cfg.trace_log_path);
    int headers = 0, trailers = 0;
    while (auto rec = r.next()) {
        headers += std::holds_alternative<logrec::TraceHeader>(*rec);
        trailers += std::holds_alternative<logrec::TraceTrailer>(*rec);
    }
    EXPECT_EQ(headers, 2);
    EXPECT_EQ(trailers, 2);
    EXPECT_EQ(agg.graph().trace_count(), 2u);
}

TEST(Collect, ZeroTracesIsConfigError) {
    SessionConfig cfg;
    cfg.num_traces = 0;
    EXPECT_EQ(code_of([&] { collect_traces(cfg); }), ErrorCode::ConfigError);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Collect, SameSeedGivesByteIdenticalLogs) {
    TempDir dir("determinism");
    auto run = [&](const std::string& name, std::uint64_t seed) {
        ServerThread server(branchy);
        SessionConfig cfg;
        cfg.endpoint = server.endpoint();
        cfg.num_traces = 30;
        cfg.master_seed = seed;
        cfg.trace_log_path = dir / name;
        collect_traces(cfg);
        server.join();
        return slurp(cfg.trace_log_path);
    };
    const auto a = run("a.sjtl", 77);
    EXPECT_EQ(a, run("b.sjtl", 77));
    EXPECT_NE(a, run("c.sjtl", 78));
}

TEST(Collect, PerTraceSeedIsMasterPlusId) {
    with_session(models::normal, [](Controller& c) {
        SessionConfig cfg;
        cfg.num_traces = 5;
        cfg.master_seed = 1000;
        std::vector<Tensor> values;
        cfg.on_trace = [&](const Trace& t, const TraceAggregator&) { values.push_back(t.outcome); };
        TraceAggregator agg;
        collect_traces(c, cfg, agg);
        for (std::uint64_t id = 0; id < 5; ++id) {
            Rng rng(1000 + id);
            EXPECT_EQ(values[id], sample(dist::Normal{0, 1}, rng));
        }
    });
}

TEST(Inference, EssIdentities) {
    EXPECT_DOUBLE_EQ(summarize_log_weights(std::vector<double>(50, -3.0)).ess, 50.0);
    std::vector<double> one_hot(50, kNegInf);
    one_hot[17] = 0.0;
    EXPECT_DOUBLE_EQ(summarize_log_weights(one_hot).ess, 1.0);
    EXPECT_DOUBLE_EQ(summarize_log_weights(one_hot).log_marginal, -std::log(50.0));
    EXPECT_EQ(code_of([] { summarize_log_weights(std::vector<double>(3, kNegInf)); }), ErrorCode::AllWeightsZero);
    // Max-shift keeps very small weights finite.
    const auto s = summarize_log_weights({-2000.0, -2000.0});
    EXPECT_DOUBLE_EQ(s.log_marginal, -2000.0);
    EXPECT_DOUBLE_EQ(s.ess, 2.0);
}

TEST(Inference, EssBoundsProperty) {
    testing::Gen gen(12);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> lw(1 + gen.below(100));
        for (auto& w : lw) w = gen.below(5) == 0 ? kNegInf : gen.real(-50, 5);
        if (std::all_of(lw.begin(), lw.end(), [](double w) { return w == kNegInf; })) lw[0] = 0.0;
        const auto s = summarize_log_weights(lw);
        EXPECT_GE(s.ess, 1.0 - 1e-12);
        EXPECT_LE(s.ess, static_cast<double>(lw.size()) + 1e-9);
        EXPECT_TRUE(std::isfinite(s.log_marginal));
    }
}

WeightedTrace weighted(double value, double lw, const std::string& address = "[x]__Normal") {
    WeightedTrace wt;
    TraceEvent e;
    e.address = address;
    e.value = Tensor::scalar(value);
    wt.trace.events.push_back(e);
    wt.trace.log_weight = wt.log_weight = lw;
    return wt;
}

TEST(Inference, PosteriorQueryTrivialCases) {
    auto one = posterior_query({weighted(3.0, 0.0)}, "[x]__Normal");
    EXPECT_EQ(one.mean, 3.0);
    EXPECT_EQ(one.variance, 0.0);
    EXPECT_EQ(one.num_traces, 1u);
    auto two = posterior_query({weighted(0.0, -1.0), weighted(1.0, -1.0)}, "[x]__Normal");
    EXPECT_DOUBLE_EQ(two.mean, 0.5);
    EXPECT_DOUBLE_EQ(two.ess, 2.0);
    EXPECT_EQ(code_of([] { posterior_query({weighted(0.0, 0.0)}, "[nope]__Normal"); }),
              ErrorCode::AddressNeverSampled);
    EXPECT_EQ(code_of([] { posterior_query({weighted(0.0, kNegInf)}, "[x]__Normal"); }), ErrorCode::AllWeightsZero);
}

TEST(Inference, ConjugatePosterior) {
    with_session(models::conjugate, [](Controller& c) {
        InferenceConfig cfg;
        cfg.num_traces = 10000;
        cfg.master_seed = 2024;
        auto result = likelihood_weighting(c, cfg);
        EXPECT_EQ(result.traces.size(), 10000u);
        EXPECT_GE(result.ess, 100.0);
        EXPECT_LE(result.ess, 10000.0);
        // Evidence: y ~ Normal(0, 2) marginally.
        EXPECT_NEAR(result.log_marginal, log_prob(dist::Normal{0, std::sqrt(2.0)}, 1.0), 0.05);
        for (const auto& wt : result.traces) ASSERT_EQ(wt.log_weight, wt.trace.log_weight);
        auto est = posterior_query(result.traces, "[x]__Normal");
        EXPECT_NEAR(est.mean, 0.5, 0.05);
        EXPECT_NEAR(est.variance, 0.5, 0.05);
        EXPECT_EQ(sampled_addresses(result.traces), std::vector<std::string>{"[x]__Normal"});
    });
}

TEST(Inference, ZeroTracesIsConfigError) {
    with_session(models::conjugate, [](Controller& c) {
        InferenceConfig cfg;
        cfg.num_traces = 0;
        EXPECT_EQ(code_of([&] { likelihood_weighting(c, cfg); }), ErrorCode::ConfigError);
    });
}

TEST(Inference, ObserveOverrides) {
    ForwardFn model = [](ClientContext& ctx) {
        const double x = ctx.sample_value(dist::Normal{0, 1}, "x");
        for (int i = 0; i < 3; ++i) ctx.observe(dist::Normal{x, 1}, 100.0, "y");
        ctx.observe(dist::Normal{x, 1}, 100.0, "z");
        ctx.observe(dist::Normal{x, 1}, 100.0, "z");
        return Tensor::scalar(x);
    };
    with_session(model, [](Controller& c) {
        Rng rng(0);
        RunOptions opts;
        opts.observe_overrides["[y]__Normal"] = {Tensor::scalar(1.0)};
        opts.observe_overrides["[z]__Normal"] = {Tensor::scalar(2.0), Tensor::scalar(3.0), Tensor::scalar(4.0)};
        auto t = c.run_forward(policy::Prior{}, 0, rng, nullptr, opts);
        ASSERT_EQ(t.events.size(), 6u);
        for (int i = 1; i <= 3; ++i) EXPECT_EQ(t.events[i].value, Tensor::scalar(1.0));
        EXPECT_EQ(t.events[4].value, Tensor::scalar(2.0));
        EXPECT_EQ(t.events[5].value, Tensor::scalar(3.0));
        const double x = t.outcome.item();
        EXPECT_EQ(t.events[4].log_prob, log_prob(dist::Normal{x, 1}, 2.0));
    });
}

TEST(Inference, RetentionFirstOccurrence) {
    with_session(branchy, [](Controller& c) {
        Rng rng(5);
        RunOptions opts;
        opts.retention = TraceRetention::first_occurrence;
        auto t = c.run_forward(policy::Prior{}, 0, rng, nullptr, opts);
        std::set<std::string> seen;
        for (const auto& e : t.events) EXPECT_TRUE(seen.insert(e.address).second);
        opts.retention = TraceRetention::none;
        t = c.run_forward(policy::Prior{}, 1, rng, nullptr, opts);
        EXPECT_TRUE(t.events.empty());
    });
}

} // namespace
} // namespace simhijack
