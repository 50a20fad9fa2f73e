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

#include <unistd.h>

#include <atomic>
#include <exception>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>
#include <utility>

#include "simhijack/channel.hpp"
#include "simhijack/client.hpp"

namespace simhijack::testing {

inline std::string unique_ipc_uri(const std::string& stem) {
    static std::atomic<int> counter{0};
    return "ipc:///tmp/simhijack-test-" + std::to_string(::getpid()) + "-" + stem + "-" +
           std::to_string(counter++) + ".sock";
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& stem) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("simhijack-" + stem + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Serves `forward` on a fresh ipc endpoint from a background thread. The
/// listener is bound before the constructor returns, so connecting never
/// races the server. Serves `sessions` consecutive controller sessions.
class ServerThread {
public:
    ServerThread(ForwardFn forward, std::string model_name = "test-model", int sessions = 1)
        : endpoint_(Endpoint::parse(unique_ipc_uri("srv"))),
          listener_(std::make_unique<Listener>(endpoint_)) {
        thread_ = std::thread([this, forward = std::move(forward), model_name = std::move(model_name), sessions] {
            try {
                for (int i = 0; i < sessions; ++i) {
                    auto channel = listener_->accept();
                    serve_session(channel, model_name, forward);
                }
            } catch (...) {
                error_ = std::current_exception();
            }
        });
    }

    ServerThread(const ServerThread&) = delete;
    ServerThread& operator=(const ServerThread&) = delete;

    ~ServerThread() {
        if (thread_.joinable()) thread_.join();
    }

    const Endpoint& endpoint() const { return endpoint_; }

    /// Waits for the server to finish; rethrows whatever it failed with.
    void join() {
        if (thread_.joinable()) thread_.join();
        if (error_) std::rethrow_exception(std::exchange(error_, nullptr));
    }

    /// Waits and reports the server-side failure, if any, without throwing.
    std::exception_ptr join_error() {
        if (thread_.joinable()) thread_.join();
        return std::exchange(error_, nullptr);
    }

private:
    Endpoint endpoint_;
    std::unique_ptr<Listener> listener_;
    std::thread thread_;
    std::exception_ptr error_;
};

} // namespace simhijack::testing
