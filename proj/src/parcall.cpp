#include "objproc/parcall.hpp"

#include <optional>

namespace objproc::parcall {

std::vector<wire::Value> batch_invoke(runtime::Client& client, std::span<const Call> batch) {
    // Validate targets up front so a bad machine id cannot poison a half-sent
    // batch.
    auto n_machines = client.transport().machine_count();
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (batch[i].ref.machine_id >= n_machines)
            throw BatchInvokeError(i, ErrorCode::UnknownMachine,
                                   "no machine " + std::to_string(batch[i].ref.machine_id));

    // Phase 1: transmit every request.
    std::vector<std::uint64_t> rids(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Call& c = batch[i];
        rids[i] = client.post(c.ref.machine_id,
                              wire::Message::invoke(0, c.ref.wire(), c.method, c.args));
    }

    // Phase 2: collect every reply; report the first error by call order
    // after draining the rest.
    std::vector<wire::Value> results(batch.size());
    std::optional<BatchInvokeError> first_error;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        wire::Message reply = client.wait(batch[i].ref.machine_id, rids[i]);
        if (reply.type == wire::MsgType::Error) {
            if (!first_error) {
                auto code = reply.error_code >= 1 && reply.error_code <= 8
                                ? static_cast<ErrorCode>(reply.error_code)
                                : ErrorCode::Internal;
                first_error.emplace(i, code, reply.error_detail);
            }
        } else if (reply.type != wire::MsgType::InvokeReply) {
            if (!first_error)
                first_error.emplace(i, ErrorCode::Internal,
                                    std::string("unexpected reply ") +
                                        wire::msg_type_name(reply.type));
        } else {
            results[i] = std::move(reply.result);
        }
    }
    if (first_error)
        throw *first_error;
    return results;
}

void barrier(runtime::Client& client, std::span<const runtime::RemoteRef> group) {
    std::vector<Call> fences;
    fences.reserve(group.size());
    for (const auto& ref : group)
        fences.push_back({ref, "__fence", {}});
    batch_invoke(client, fences);
}

std::vector<runtime::RemoteRef> deep_copy_group(runtime::Client& client,
                                                const runtime::RemoteRef& holder) {
    wire::Value len;
    try {
        len = client.invoke(holder, "len", {});
    } catch (const RemoteError& e) {
        if (e.code() == ErrorCode::UnknownMethod)
            raise(ErrorCode::BadArgs, "group holder lacks the list interface (len)");
        throw;
    }
    if (len.kind() != wire::Value::Kind::Int)
        raise(ErrorCode::BadArgs, "group holder len() did not return Int");

    auto n = len.as_int();
    if (n < 0)
        raise(ErrorCode::BadArgs, "group holder reports negative length");

    std::vector<Call> gets;
    gets.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        gets.push_back({holder, "get", {wire::Value::integer(i)}});

    std::vector<wire::Value> members;
    try {
        members = batch_invoke(client, gets);
    } catch (const BatchInvokeError& e) {
        if (e.code() == ErrorCode::UnknownMethod)
            raise(ErrorCode::BadArgs, "group holder lacks the list interface (get)");
        throw;
    }

    std::vector<runtime::RemoteRef> refs;
    refs.reserve(members.size());
    for (const auto& v : members) {
        if (v.kind() != wire::Value::Kind::Ref)
            raise(ErrorCode::BadArgs, "group holder get(i) did not return Ref");
        wire::Ref r = v.as_ref();
        refs.push_back(runtime::RemoteRef{r.machine_id, r.object_id, ""});
    }
    return refs;
}

} // namespace objproc::parcall
