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

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <sys/un.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "simhijack/error.hpp"
#include "simhijack/wire.hpp"

namespace simhijack {

/// `tcp://host:port` or `ipc:///absolute/path`.
struct Endpoint {
    enum class Scheme { tcp, ipc };

    Scheme scheme = Scheme::tcp;
    std::string host;
    std::uint16_t port = 0;
    std::string path;

    static Endpoint parse(std::string_view uri) {
        auto bad = [&](const char* why) {
            return Error(ErrorCode::InvalidEndpoint, std::string(why) + ": " + std::string(uri));
        };
        constexpr std::string_view tcp = "tcp://";
        constexpr std::string_view ipc = "ipc://";
        Endpoint e;
        if (uri.starts_with(ipc)) {
            e.scheme = Scheme::ipc;
            e.path = std::string(uri.substr(ipc.size()));
            if (e.path.empty() || e.path.front() != '/') throw bad("ipc path must be absolute");
            if (e.path.size() >= sizeof(sockaddr_un::sun_path)) throw bad("ipc path too long");
            return e;
        }
        if (uri.starts_with(tcp)) {
            auto rest = uri.substr(tcp.size());
            auto colon = rest.rfind(':');
            if (colon == std::string_view::npos || colon == 0) throw bad("expected host:port");
            e.host = std::string(rest.substr(0, colon));
            if (e.host.size() > 2 && e.host.front() == '[' && e.host.back() == ']')
                e.host = e.host.substr(1, e.host.size() - 2);
            auto port = rest.substr(colon + 1);
            if (port.empty() || port.size() > 5) throw bad("bad port");
            unsigned long v = 0;
            for (char c : port) {
                if (c < '0' || c > '9') throw bad("bad port");
                v = v * 10 + static_cast<unsigned long>(c - '0');
            }
            if (v > 65535) throw bad("port out of range");
            e.port = static_cast<std::uint16_t>(v);
            return e;
        }
        throw bad("unknown scheme");
    }

    std::string to_string() const {
        if (scheme == Scheme::ipc) return "ipc://" + path;
        bool v6 = host.find(':') != std::string::npos;
        return "tcp://" + (v6 ? "[" + host + "]" : host) + ":" + std::to_string(port);
    }

    friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

namespace detail {

class FileDescriptor {
public:
    FileDescriptor() = default;
    explicit FileDescriptor(int fd) : fd_(fd) {}
    FileDescriptor(const FileDescriptor&) = delete;
    FileDescriptor& operator=(const FileDescriptor&) = delete;
    FileDescriptor(FileDescriptor&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    FileDescriptor& operator=(FileDescriptor&& o) noexcept {
        if (this != &o) {
            reset();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    ~FileDescriptor() { reset(); }

    int get() const noexcept { return fd_; }
    explicit operator bool() const noexcept { return fd_ >= 0; }

    void reset() noexcept {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
};

inline std::string errno_text() { return std::strerror(errno); }

inline sockaddr_un unix_address(const std::string& path) {
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    return addr;
}

struct AddrInfoDeleter {
    void operator()(addrinfo* p) const { ::freeaddrinfo(p); }
};

inline std::unique_ptr<addrinfo, AddrInfoDeleter> resolve(const Endpoint& e, bool passive) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    if (passive) hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    auto port = std::to_string(e.port);
    int rc = ::getaddrinfo(e.host.c_str(), port.c_str(), &hints, &res);
    if (rc != 0)
        throw Error(ErrorCode::InvalidEndpoint, "cannot resolve " + e.host + ": " + ::gai_strerror(rc));
    return std::unique_ptr<addrinfo, AddrInfoDeleter>(res);
}

} // namespace detail

/// Bidirectional, ordered, reliable frame channel over a connected stream socket.
class Channel {
public:
    enum class Direction { sent, received };
    using Observer = std::function<void(Direction, const Message&)>;

    Channel() = default;
    explicit Channel(detail::FileDescriptor fd) : fd_(std::move(fd)) {}

    bool is_open() const noexcept { return static_cast<bool>(fd_); }

    void close() noexcept { fd_.reset(); }

    /// Called for every message passing through; used by transcript checkers.
    void set_observer(Observer obs) { observer_ = std::move(obs); }

    void send(const Message& m) {
        send_buffer_.clear();
        encode_message_into(m, send_buffer_);
        write_all(send_buffer_);
        if (observer_) observer_(Direction::sent, m);
    }

    Message recv() {
        for (;;) {
            Message m;
            auto avail = std::span<const std::uint8_t>(recv_buffer_).subspan(recv_begin_, recv_end_ - recv_begin_);
            if (auto used = try_decode_frame(avail, m); used > 0) {
                recv_begin_ += used;
                if (observer_) observer_(Direction::received, m);
                return m;
            }
            fill();
        }
    }

    /// Raw frame access, bypassing the codec.
    void send_frame(std::span<const std::uint8_t> frame) { write_all(frame); }

private:
    void write_all(std::span<const std::uint8_t> bytes) {
        if (!fd_) throw Error(ErrorCode::ChannelClosed, "send on closed channel");
        while (!bytes.empty()) {
            auto n = ::send(fd_.get(), bytes.data(), bytes.size(), MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                if (errno == EPIPE || errno == ECONNRESET)
                    throw Error(ErrorCode::ChannelClosed, "peer closed the connection");
                throw Error(ErrorCode::IoError, "send: " + detail::errno_text());
            }
            bytes = bytes.subspan(static_cast<std::size_t>(n));
        }
    }

    void fill() {
        if (!fd_) throw Error(ErrorCode::ChannelClosed, "recv on closed channel");
        if (recv_begin_ > 0) {
            std::copy(recv_buffer_.begin() + static_cast<std::ptrdiff_t>(recv_begin_),
                      recv_buffer_.begin() + static_cast<std::ptrdiff_t>(recv_end_), recv_buffer_.begin());
            recv_end_ -= recv_begin_;
            recv_begin_ = 0;
        }
        if (recv_buffer_.size() - recv_end_ < kChunk) recv_buffer_.resize(recv_end_ + kChunk);
        ssize_t n;
        do {
            n = ::recv(fd_.get(), recv_buffer_.data() + recv_end_, recv_buffer_.size() - recv_end_, 0);
        } while (n < 0 && errno == EINTR);
        if (n <= 0) {
            if (n == 0 || errno == ECONNRESET)
                throw Error(ErrorCode::ChannelClosed,
                            recv_end_ == 0 ? "peer closed the connection" : "peer closed mid-frame");
            throw Error(ErrorCode::IoError, "recv: " + detail::errno_text());
        }
        recv_end_ += static_cast<std::size_t>(n);
    }

    static constexpr std::size_t kChunk = 64 * 1024;

    detail::FileDescriptor fd_;
    codec::Bytes send_buffer_;
    codec::Bytes recv_buffer_;
    std::size_t recv_begin_ = 0;
    std::size_t recv_end_ = 0;
    Observer observer_;
};

/// Bound, listening socket. Removes its ipc socket file on destruction.
class Listener {
public:
    explicit Listener(const Endpoint& e) : endpoint_(e) {
        if (e.scheme == Endpoint::Scheme::ipc) {
            struct stat st {};
            if (::lstat(e.path.c_str(), &st) == 0 && S_ISSOCK(st.st_mode)) ::unlink(e.path.c_str());
            detail::FileDescriptor fd(::socket(AF_UNIX, SOCK_STREAM, 0));
            if (!fd) throw Error(ErrorCode::BindFailed, "socket: " + detail::errno_text());
            auto addr = detail::unix_address(e.path);
            if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
                throw Error(ErrorCode::BindFailed, e.to_string() + ": " + detail::errno_text());
            unlink_on_close_ = true;
            listen_on(std::move(fd));
            return;
        }
        auto info = detail::resolve(e, true);
        std::string last = "no usable address";
        for (auto* ai = info.get(); ai; ai = ai->ai_next) {
            detail::FileDescriptor fd(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
            if (!fd) continue;
            int one = 1;
            ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
            if (::bind(fd.get(), ai->ai_addr, ai->ai_addrlen) != 0) {
                last = detail::errno_text();
                continue;
            }
            listen_on(std::move(fd));
            sockaddr_storage bound{};
            socklen_t len = sizeof bound;
            ::getsockname(fd_.get(), reinterpret_cast<sockaddr*>(&bound), &len);
            if (bound.ss_family == AF_INET)
                endpoint_.port = ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
            else if (bound.ss_family == AF_INET6)
                endpoint_.port = ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port);
            return;
        }
        throw Error(ErrorCode::BindFailed, e.to_string() + ": " + last);
    }

    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;

    ~Listener() {
        fd_.reset();
        if (unlink_on_close_) ::unlink(endpoint_.path.c_str());
    }

    /// Endpoint actually bound (tcp port 0 resolves to the assigned port).
    const Endpoint& endpoint() const noexcept { return endpoint_; }

    Channel accept() {
        for (;;) {
            int c = ::accept(fd_.get(), nullptr, nullptr);
            if (c >= 0) {
                detail::FileDescriptor fd(c);
                if (endpoint_.scheme == Endpoint::Scheme::tcp) {
                    int one = 1;
                    ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                }
                return Channel(std::move(fd));
            }
            if (errno != EINTR) throw Error(ErrorCode::IoError, "accept: " + detail::errno_text());
        }
    }

private:
    void listen_on(detail::FileDescriptor fd) {
        if (::listen(fd.get(), 16) != 0)
            throw Error(ErrorCode::BindFailed, "listen: " + detail::errno_text());
        fd_ = std::move(fd);
    }

    Endpoint endpoint_;
    detail::FileDescriptor fd_;
    bool unlink_on_close_ = false;
};

struct ConnectOptions {
    int attempts = 10;
    std::chrono::milliseconds interval{200};
};

inline Channel connect(const Endpoint& e, const ConnectOptions& opts = {}) {
    std::string last;
    for (int attempt = 0; attempt < std::max(1, opts.attempts); ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(opts.interval);
        if (e.scheme == Endpoint::Scheme::ipc) {
            detail::FileDescriptor fd(::socket(AF_UNIX, SOCK_STREAM, 0));
            if (!fd) throw Error(ErrorCode::IoError, "socket: " + detail::errno_text());
            auto addr = detail::unix_address(e.path);
            if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0)
                return Channel(std::move(fd));
            last = detail::errno_text();
            continue;
        }
        auto info = detail::resolve(e, false);
        for (auto* ai = info.get(); ai; ai = ai->ai_next) {
            detail::FileDescriptor fd(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
            if (!fd) continue;
            if (::connect(fd.get(), ai->ai_addr, ai->ai_addrlen) == 0) {
                int one = 1;
                ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                return Channel(std::move(fd));
            }
            last = detail::errno_text();
        }
    }
    throw Error(ErrorCode::ConnectionRefused,
                e.to_string() + " after " + std::to_string(opts.attempts) + " attempts: " + last);
}

enum class ChannelMode { listen, connect };

/// Listen mode blocks until one peer connects, then returns that connection.
inline Channel open_channel(const Endpoint& e, ChannelMode mode, const ConnectOptions& opts = {}) {
    if (mode == ChannelMode::connect) return connect(e, opts);
    Listener listener(e);
    return listener.accept();
}

} // namespace simhijack
