#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace objproc {

// Wire-level error codes carried in Error replies.
enum class ErrorCode : std::int64_t {
    UnknownMachine = 1,
    UnknownObject = 2,
    UnknownClass = 3,
    UnknownMethod = 4,
    BadArgs = 5,
    OutOfBounds = 6,
    DeviceError = 7,
    Internal = 8,
};

const char* error_code_name(ErrorCode code) noexcept;

class ObjProcError : public std::runtime_error {
public:
    explicit ObjProcError(const std::string& what) : std::runtime_error(what) {}
};

// A failed remote operation. Thrown by method bodies on the serving side and
// re-thrown on the client when an Error reply arrives.
class RemoteError : public ObjProcError {
public:
    RemoteError(ErrorCode code, const std::string& detail)
        : ObjProcError(std::string(error_code_name(code)) + ": " + detail), code_(code),
          detail_(detail) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

class EncodeError : public ObjProcError {
public:
    using ObjProcError::ObjProcError;
};

class DecodeError : public ObjProcError {
public:
    using ObjProcError::ObjProcError;
};

class TransportFailure : public ObjProcError {
public:
    using ObjProcError::ObjProcError;
};

class DuplicateClassError : public ObjProcError {
public:
    using ObjProcError::ObjProcError;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& detail) {
    throw RemoteError(code, detail);
}

} // namespace objproc
