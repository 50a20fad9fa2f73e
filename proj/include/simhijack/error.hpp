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

#include <stdexcept>
#include <string>
#include <string_view>

namespace simhijack {

/// Every failure raised by the library carries one of these codes.
enum class ErrorCode {
    InvalidMessage,
    Truncated,
    UnknownTag,
    MalformedField,
    InvalidSpec,
    InvalidEndpoint,
    ConnectionRefused,
    BindFailed,
    ChannelClosed,
    IoError,
    IllegalFrameCharacter,
    OutOfOrder,
    NoOpenTrace,
    OpenTrace,
    UnknownId,
    DuplicateMapping,
    BadLog,
    ProtocolViolation,
    VersionMismatch,
    RemoteError,
    SupportViolation,
    Divergence,
    ConfigError,
    AllWeightsZero,
    AddressNeverSampled,
    UsageError,
    ParseError,
    ValidationError,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidMessage: return "InvalidMessage";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::UnknownTag: return "UnknownTag";
    case ErrorCode::MalformedField: return "MalformedField";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidEndpoint: return "InvalidEndpoint";
    case ErrorCode::ConnectionRefused: return "ConnectionRefused";
    case ErrorCode::BindFailed: return "BindFailed";
    case ErrorCode::ChannelClosed: return "ChannelClosed";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::IllegalFrameCharacter: return "IllegalFrameCharacter";
    case ErrorCode::OutOfOrder: return "OutOfOrder";
    case ErrorCode::NoOpenTrace: return "NoOpenTrace";
    case ErrorCode::OpenTrace: return "OpenTrace";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::DuplicateMapping: return "DuplicateMapping";
    case ErrorCode::BadLog: return "BadLog";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::RemoteError: return "RemoteError";
    case ErrorCode::SupportViolation: return "SupportViolation";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::AllWeightsZero: return "AllWeightsZero";
    case ErrorCode::AddressNeverSampled: return "AddressNeverSampled";
    case ErrorCode::UsageError: return "UsageError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace simhijack
