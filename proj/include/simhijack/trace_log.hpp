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

// Append-only binary trace log.
//
//   file    := "SJTL" u16 version record*
//   record  := u8 tag, then
//     0 trace-header   u64 trace_id
//     4 dict           u32 addr_id, string full_address
//     1 sample-event   u32 addr_id, spec, tensor value, f64 log_prob
//     2 observe-event  u32 addr_id, spec, tensor value, f64 log_prob
//     3 trace-trailer  tensor outcome, f64 log_joint, f64 log_weight
//
// A dict record precedes the first event referencing its id.

#include <cstdint>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "simhijack/codec.hpp"
#include "simhijack/error.hpp"
#include "simhijack/trace.hpp"

namespace simhijack {

inline constexpr char kTraceLogMagic[4] = {'S', 'J', 'T', 'L'};
inline constexpr std::uint16_t kTraceLogVersion = 1;

namespace logrec {

enum Tag : std::uint8_t { header = 0, sample = 1, observe = 2, trailer = 3, dict = 4 };

struct TraceHeader {
    std::uint64_t trace_id;
};
struct Dict {
    std::uint32_t addr_id;
    std::string address;
};
struct Event {
    EventKind kind;
    std::uint32_t addr_id;
    DistributionSpec dist;
    Tensor value;
    double log_prob;
};
struct TraceTrailer {
    Tensor outcome;
    double log_joint;
    double log_weight;
};

} // namespace logrec

using LogRecord = std::variant<logrec::TraceHeader, logrec::Dict, logrec::Event, logrec::TraceTrailer>;

class TraceLogWriter {
public:
    explicit TraceLogWriter(const std::filesystem::path& path)
        : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw Error(ErrorCode::IoError, "cannot open trace log " + path.string());
        buffer_.insert(buffer_.end(), std::begin(kTraceLogMagic), std::end(kTraceLogMagic));
        codec::Writer(buffer_).u16(kTraceLogVersion);
    }

    TraceLogWriter(const TraceLogWriter&) = delete;
    TraceLogWriter& operator=(const TraceLogWriter&) = delete;

    ~TraceLogWriter() {
        try {
            flush();
        } catch (...) {
        }
    }

    void trace_header(std::uint64_t trace_id) {
        codec::Writer w(buffer_);
        w.u8(logrec::header);
        w.u64(trace_id);
        maybe_flush();
    }

    void dict(std::uint32_t addr_id, std::string_view address) {
        codec::Writer w(buffer_);
        w.u8(logrec::dict);
        w.u32(addr_id);
        w.string(address);
        maybe_flush();
    }

    void event(EventKind kind, std::uint32_t addr_id, const DistributionSpec& d, const Tensor& value,
               double log_prob) {
        codec::Writer w(buffer_);
        w.u8(kind == EventKind::sample ? logrec::sample : logrec::observe);
        w.u32(addr_id);
        w.spec(d);
        w.tensor(value);
        w.f64(log_prob);
        maybe_flush();
    }

    void trailer(const Tensor& outcome, double log_joint, double log_weight) {
        codec::Writer w(buffer_);
        w.u8(logrec::trailer);
        w.tensor(outcome);
        w.f64(log_joint);
        w.f64(log_weight);
        maybe_flush();
    }

    void flush() {
        if (buffer_.empty()) return;
        out_.write(reinterpret_cast<const char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
        bytes_written_ += buffer_.size();
        buffer_.clear();
        out_.flush();
        if (!out_) throw Error(ErrorCode::IoError, "write failed on " + path_.string());
    }

    /// Bytes in the file plus those still buffered.
    std::uint64_t size_bytes() const noexcept { return bytes_written_ + buffer_.size(); }

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    void maybe_flush() {
        if (buffer_.size() >= kFlushBytes) flush();
    }

    static constexpr std::size_t kFlushBytes = 1 << 20;

    std::filesystem::path path_;
    std::ofstream out_;
    codec::Bytes buffer_;
    std::uint64_t bytes_written_ = 0;
};

/// Sequential record reader. Corruption raises BadLog.
class TraceLogReader {
public:
    explicit TraceLogReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
        if (!in_) throw Error(ErrorCode::IoError, "cannot open trace log " + path.string());
        char magic[4];
        std::uint8_t version[2];
        if (!in_.read(magic, 4) || !std::equal(magic, magic + 4, kTraceLogMagic))
            throw Error(ErrorCode::BadLog, path.string() + " is not a trace log");
        if (!in_.read(reinterpret_cast<char*>(version), 2))
            throw Error(ErrorCode::BadLog, "missing version");
        version_ = static_cast<std::uint16_t>(version[0] | (version[1] << 8));
        if (version_ != kTraceLogVersion)
            throw Error(ErrorCode::BadLog, "unsupported trace log version " + std::to_string(version_));
    }

    std::uint16_t version() const noexcept { return version_; }

    /// Next record, or nullopt at a clean end of file.
    std::optional<LogRecord> next() {
        int tag = in_.get();
        if (tag == std::char_traits<char>::eof()) return std::nullopt;
        try {
            switch (tag) {
            case logrec::header: return logrec::TraceHeader{u64()};
            case logrec::dict: {
                auto id = u32();
                return logrec::Dict{id, string()};
            }
            case logrec::sample:
            case logrec::observe: {
                logrec::Event e;
                e.kind = tag == logrec::sample ? EventKind::sample : EventKind::observe;
                e.addr_id = u32();
                e.dist = spec();
                e.value = tensor();
                e.log_prob = f64();
                return e;
            }
            case logrec::trailer: {
                logrec::TraceTrailer t;
                t.outcome = tensor();
                t.log_joint = f64();
                t.log_weight = f64();
                return t;
            }
            default: throw Error(ErrorCode::BadLog, "unknown record tag " + std::to_string(tag));
            }
        } catch (const Error& e) {
            if (e.code() == ErrorCode::BadLog) throw;
            throw Error(ErrorCode::BadLog, std::string("corrupt record: ") + e.what());
        }
    }

private:
    void read_exact(void* dst, std::size_t n) {
        if (!in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n)))
            throw Error(ErrorCode::BadLog, "log ends inside a record");
    }

    template <std::size_t N>
    codec::Reader fixed(std::uint8_t (&buf)[N]) {
        read_exact(buf, N);
        return codec::Reader(std::span<const std::uint8_t>(buf, N));
    }

    std::uint32_t u32() {
        std::uint8_t b[4];
        return fixed(b).u32();
    }
    std::uint64_t u64() {
        std::uint8_t b[8];
        return fixed(b).u64();
    }
    double f64() {
        std::uint8_t b[8];
        return fixed(b).f64();
    }

    std::string string() {
        auto n = u32();
        if (n > kMaxField) throw Error(ErrorCode::BadLog, "string length out of range");
        std::string out(n, '\0');
        read_exact(out.data(), n);
        if (!codec::is_valid_utf8(out)) throw Error(ErrorCode::BadLog, "address is not valid UTF-8");
        return out;
    }

    // Tensor and spec bytes are gathered into scratch_ and handed to the codec
    // so validation matches the wire decoder exactly.
    void gather_tensor() {
        std::uint8_t b[4];
        read_exact(b, 4);
        scratch_.insert(scratch_.end(), b, b + 4);
        const auto rank = codec::Reader(std::span<const std::uint8_t>(b, 4)).u32();
        if (rank > 64) throw Error(ErrorCode::BadLog, "tensor rank out of range");
        std::uint64_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            read_exact(b, 4);
            scratch_.insert(scratch_.end(), b, b + 4);
            count *= codec::Reader(std::span<const std::uint8_t>(b, 4)).u32();
            if (count > kMaxField) throw Error(ErrorCode::BadLog, "tensor too large");
        }
        gather(count * 8);
    }

    void gather(std::uint64_t n) {
        const auto old = scratch_.size();
        scratch_.resize(old + n);
        read_exact(scratch_.data() + old, n);
    }

    Tensor tensor() {
        scratch_.clear();
        gather_tensor();
        return codec::Reader(scratch_).tensor();
    }

    DistributionSpec spec() {
        scratch_.clear();
        gather(1);
        switch (scratch_[0]) {
        case 1:
        case 2: gather(16); break;
        case 3:
        case 5:
        case 6: gather(8); break;
        case 4: gather_tensor(); break;
        default: throw Error(ErrorCode::BadLog, "unknown distribution kind");
        }
        return codec::Reader(scratch_).spec();
    }

    static constexpr std::uint64_t kMaxField = 1u << 30;

    std::ifstream in_;
    std::uint16_t version_ = 0;
    codec::Bytes scratch_;
};

/// One trace reassembled from a log. `complete` is false for a trailing trace
/// cut off before its trailer (an aborted session).
struct LoggedTrace {
    Trace trace;
    bool complete = false;
};

/// Reassembles traces from the record stream, resolving dict ids.
class LoggedTraceReader {
public:
    explicit LoggedTraceReader(const std::filesystem::path& path) : reader_(path) {}

    std::optional<LoggedTrace> next() {
        std::optional<LoggedTrace> current;
        if (pending_header_) {
            current.emplace();
            current->trace.trace_id = *pending_header_;
            pending_header_.reset();
        }
        while (auto rec = reader_.next()) {
            if (auto* h = std::get_if<logrec::TraceHeader>(&*rec)) {
                if (current) {
                    pending_header_ = h->trace_id;
                    return current;
                }
                current.emplace();
                current->trace.trace_id = h->trace_id;
            } else if (auto* d = std::get_if<logrec::Dict>(&*rec)) {
                if (!addresses_.emplace(d->addr_id, d->address).second)
                    throw Error(ErrorCode::BadLog, "address id defined twice");
            } else if (auto* e = std::get_if<logrec::Event>(&*rec)) {
                if (!current) throw Error(ErrorCode::BadLog, "event outside a trace");
                auto it = addresses_.find(e->addr_id);
                if (it == addresses_.end()) throw Error(ErrorCode::BadLog, "event references unknown address id");
                TraceEvent ev;
                ev.kind = e->kind;
                ev.address = it->second;
                ev.dist = std::move(e->dist);
                ev.value = std::move(e->value);
                ev.log_prob = e->log_prob;
                ev.index_in_trace = static_cast<std::uint32_t>(current->trace.events.size());
                current->trace.events.push_back(std::move(ev));
            } else if (auto* t = std::get_if<logrec::TraceTrailer>(&*rec)) {
                if (!current) throw Error(ErrorCode::BadLog, "trailer outside a trace");
                current->trace.outcome = std::move(t->outcome);
                current->trace.log_joint = t->log_joint;
                current->trace.log_weight = t->log_weight;
                current->complete = true;
                return current;
            }
        }
        return current;
    }

    /// Address id -> full address for every dict record seen so far.
    const std::unordered_map<std::uint32_t, std::string>& addresses() const noexcept { return addresses_; }

private:
    TraceLogReader reader_;
    std::unordered_map<std::uint32_t, std::string> addresses_;
    std::optional<std::uint64_t> pending_header_;
};

/// The `index`-th complete trace in file order.
inline Trace load_logged_trace(const std::filesystem::path& path, std::uint64_t index) {
    LoggedTraceReader reader(path);
    std::uint64_t seen = 0;
    while (auto t = reader.next()) {
        if (!t->complete) break;
        if (seen++ == index) return std::move(t->trace);
    }
    throw Error(ErrorCode::UnknownId, "trace log holds no trace at index " + std::to_string(index));
}

} // namespace simhijack
