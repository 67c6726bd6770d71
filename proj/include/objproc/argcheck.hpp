#pragma once

#include <string>

#include "objproc/wire.hpp"

namespace objproc {

inline void expect_args(const wire::Value::List& args, std::size_t n, const char* what) {
    if (args.size() != n)
        raise(ErrorCode::BadArgs, std::string(what) + ": expected " + std::to_string(n) +
                                      " argument(s), got " + std::to_string(args.size()));
}

inline std::int64_t positive_int(const wire::Value& v, const char* what) {
    std::int64_t n = v.as_int();
    if (n <= 0)
        raise(ErrorCode::BadArgs, std::string(what) + " must be positive, got " +
                                      std::to_string(n));
    return n;
}

} // namespace objproc
