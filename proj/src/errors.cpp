#include "objproc/errors.hpp"

namespace objproc {

const char* error_code_name(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::UnknownMachine: return "UnknownMachine";
    case ErrorCode::UnknownObject: return "UnknownObject";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::UnknownMethod: return "UnknownMethod";
    case ErrorCode::BadArgs: return "BadArgs";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::DeviceError: return "DeviceError";
    case ErrorCode::Internal: return "Internal";
    }
    return "UnknownError";
}

} // namespace objproc
