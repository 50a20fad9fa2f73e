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

#include <chrono>
#include <thread>

#include "generators.hpp"
#include "simhijack/channel.hpp"
#include "test_support.hpp"

namespace simhijack {
namespace {

TEST(Channel, IpcListenConnectEcho) {
    const auto endpoint = Endpoint::parse(testing::unique_ipc_uri("echo"));
    Listener listener(endpoint);
    std::thread peer([&] {
        auto ch = listener.accept();
        for (;;) {
            auto m = ch.recv();
            if (std::holds_alternative<msg::Shutdown>(m)) return;
            ch.send(m);
        }
    });
    auto ch = connect(endpoint);
    const Message hello = msg::Handshake{"simhijack", kProtocolVersion};
    ch.send(hello);
    EXPECT_EQ(ch.recv(), hello);

    testing::Gen gen(11);
    for (int i = 0; i < 200; ++i) {
        auto m = gen.message();
        if (std::holds_alternative<msg::Shutdown>(m)) continue;
        ch.send(m);
        ASSERT_EQ(ch.recv(), m);
    }
    ch.send(msg::Shutdown{});
    peer.join();
}

TEST(Channel, TcpLoopbackOnEphemeralPort) {
    Listener listener(Endpoint::parse("tcp://127.0.0.1:0"));
    ASSERT_NE(listener.endpoint().port, 0);
    std::thread peer([&] {
        auto ch = listener.accept();
        ch.send(ch.recv());
    });
    auto ch = connect(listener.endpoint());
    const Message m = msg::Observe{"[y]__Normal", dist::Normal{0.5, 1.0}, Tensor::scalar(1.0)};
    ch.send(m);
    EXPECT_EQ(ch.recv(), m);
    peer.join();
}

TEST(Channel, LargeFrameCrossesReadChunks) {
    const auto endpoint = Endpoint::parse(testing::unique_ipc_uri("big"));
    Listener listener(endpoint);
    std::vector<double> values(200000);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(i) * 0.5;
    const Message big = msg::RunResult{Tensor::vector(values)};
    std::thread peer([&] {
        auto ch = listener.accept();
        ch.send(big);
        ch.send(msg::Shutdown{});
    });
    auto ch = connect(endpoint);
    EXPECT_EQ(ch.recv(), big);
    EXPECT_EQ(ch.recv(), Message(msg::Shutdown{}));
    peer.join();
}

TEST(Channel, ConnectRefusedAfterRetries) {
    ConnectOptions opts;
    opts.attempts = 3;
    opts.interval = std::chrono::milliseconds(10);
    try {
        connect(Endpoint::parse("tcp://127.0.0.1:1"), opts);
        FAIL() << "expected ConnectionRefused";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConnectionRefused);
    }
    try {
        connect(Endpoint::parse(testing::unique_ipc_uri("nobody")), opts);
        FAIL() << "expected ConnectionRefused";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConnectionRefused);
    }
}

TEST(Channel, DefaultRetryPolicy) {
    ConnectOptions opts;
    EXPECT_EQ(opts.attempts, 10);
    EXPECT_EQ(opts.interval, std::chrono::milliseconds(200));
}

TEST(Channel, ConnectRetriesUntilListenerAppears) {
    const auto endpoint = Endpoint::parse(testing::unique_ipc_uri("late"));
    std::thread late([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(150));
        Listener listener(endpoint);
        auto ch = listener.accept();
        ch.send(ch.recv());
    });
    ConnectOptions opts;
    opts.interval = std::chrono::milliseconds(50);
    auto ch = connect(endpoint, opts);
    ch.send(msg::Run{42});
    EXPECT_EQ(ch.recv(), Message(msg::Run{42}));
    late.join();
}

TEST(Channel, BindFailedOnMissingDirectory) {
    try {
        Listener listener(Endpoint::parse("ipc:///nonexistent-dir-for-simhijack/s.sock"));
        FAIL() << "expected BindFailed";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::BindFailed);
    }
}

TEST(Channel, PeerCloseSurfacesAsChannelClosed) {
    const auto endpoint = Endpoint::parse(testing::unique_ipc_uri("close"));
    Listener listener(endpoint);
    std::thread peer([&] { auto ch = listener.accept(); });
    auto ch = connect(endpoint);
    peer.join();
    try {
        ch.recv();
        FAIL() << "expected ChannelClosed";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ChannelClosed);
    }
}

TEST(Channel, OpenChannelModes) {
    const auto endpoint = Endpoint::parse(testing::unique_ipc_uri("modes"));
    std::thread server([&] {
        auto ch = open_channel(endpoint, ChannelMode::listen);
        ch.send(ch.recv());
    });
    ConnectOptions opts;
    opts.interval = std::chrono::milliseconds(20);
    auto ch = open_channel(endpoint, ChannelMode::connect, opts);
    ch.send(msg::ObserveResult{});
    EXPECT_EQ(ch.recv(), Message(msg::ObserveResult{}));
    server.join();
}

} // namespace
} // namespace simhijack
