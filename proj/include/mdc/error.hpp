#pragma once

#include <stdexcept>
#include <string>

namespace mdc {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed partition file or CSV fixture.
struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error("format: " + what) {}
};

// Malformed wire bytes (request envelope, message frame).
struct DecodeError : Error {
    explicit DecodeError(const std::string& what) : Error("decode: " + what) {}
};

// Execution-time failure: unknown column, type mismatch, length mismatch.
struct ExecError : Error {
    explicit ExecError(const std::string& what) : Error("exec: " + what) {}
};

// Socket-level failure: refused connection, peer hung up mid-frame.
struct IoError : Error {
    explicit IoError(const std::string& what) : Error("io: " + what) {}
};

} // namespace mdc
