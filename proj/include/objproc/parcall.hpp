#pragma once

#include <span>
#include <vector>

#include "objproc/runtime.hpp"

// Pipelined batch invocation: send every request, then collect every reply.
// This is the two-phase form of the request-then-wait loop; over a cluster it
// overlaps the per-call round-trip latencies.

namespace objproc::parcall {

struct Call {
    runtime::RemoteRef ref;
    std::string method;
    wire::Value::List args;
};

// The first failed call, by call order. Remaining replies are always drained
// so the connections stay usable.
class BatchInvokeError : public ObjProcError {
public:
    BatchInvokeError(std::size_t index, ErrorCode code, const std::string& detail)
        : ObjProcError("call " + std::to_string(index) + " failed: " +
                       std::string(error_code_name(code)) + ": " + detail),
          index_(index), code_(code), detail_(detail) {}

    std::size_t index() const noexcept { return index_; }
    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::size_t index_;
    ErrorCode code_;
    std::string detail_;
};

// Results in call order. Calls to pairwise-distinct objects behave exactly
// like the sequential loop; two calls to one object execute in batch order.
std::vector<wire::Value> batch_invoke(runtime::Client& client, std::span<const Call> batch);

// Returns once every member has completed all invocations issued to it before
// the barrier. Built from per-object "__fence" no-ops.
void barrier(runtime::Client& client, std::span<const runtime::RemoteRef> group);

// Copies a remote list of refs (an object exposing len() and get(i) -> Ref)
// into a local vector; afterwards the members are reachable without the list
// holder.
std::vector<runtime::RemoteRef> deep_copy_group(runtime::Client& client,
                                                const runtime::RemoteRef& holder);

} // namespace objproc::parcall
