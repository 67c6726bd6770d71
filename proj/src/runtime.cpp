#include "objproc/runtime.hpp"

#include <csignal>
#include <unistd.h>

namespace objproc::runtime {

void ClassRegistry::register_class(std::string name, ClassDef def) {
    auto [it, inserted] = classes_.emplace(std::move(name), std::move(def));
    if (!inserted)
        throw DuplicateClassError("class already registered: " + it->first);
}

const ClassDef* ClassRegistry::find(const std::string& name) const {
    auto it = classes_.find(name);
    return it == classes_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// Server dispatch

std::size_t MachineRuntime::live_objects() const {
    std::lock_guard lk(map_mu_);
    return objects_.size();
}

std::vector<std::uint8_t> MachineRuntime::handle_frame(std::span<const std::uint8_t> frame) {
    std::uint64_t rid = 0;
    try {
        wire::Message req = wire::decode_message(frame);
        rid = req.request_id;
        return wire::encode_message(dispatch(req));
    } catch (const RemoteError& e) {
        return wire::encode_message(wire::Message::error(rid, e.code(), e.detail()));
    } catch (const std::exception& e) {
        return wire::encode_message(wire::Message::error(rid, ErrorCode::Internal, e.what()));
    }
}

wire::Message MachineRuntime::dispatch(const wire::Message& req) {
    switch (req.type) {
    case wire::MsgType::Spawn:
        return do_spawn(req);
    case wire::MsgType::Invoke:
        return do_invoke(req);
    case wire::MsgType::Destroy:
        return do_destroy(req);
    default:
        raise(ErrorCode::Internal,
              std::string("unexpected request type ") + wire::msg_type_name(req.type));
    }
}

wire::Message MachineRuntime::do_spawn(const wire::Message& req) {
    const ClassDef* cls = classes_->find(req.class_name);
    if (!cls)
        raise(ErrorCode::UnknownClass, "class not registered: " + req.class_name);
    if (!transport_)
        raise(ErrorCode::Internal, "machine has no transport");

    Client nested(*transport_);
    InvokeContext ctx{nested, machine_id_, wire::Ref{machine_id_, 0}};
    std::unique_ptr<Instance> obj = cls->ctor(ctx, req.args.as_list());

    std::uint64_t id;
    {
        std::lock_guard lk(map_mu_);
        id = next_id_++;
        auto entry = std::make_shared<Entry>();
        entry->obj = std::move(obj);
        entry->class_name = req.class_name;
        objects_.emplace(id, std::move(entry));
    }
    return wire::Message::spawn_reply(req.request_id, wire::Ref{machine_id_, id});
}

std::shared_ptr<MachineRuntime::Entry> MachineRuntime::find_entry(std::uint64_t id) {
    std::lock_guard lk(map_mu_);
    auto it = objects_.find(id);
    if (it == objects_.end())
        raise(ErrorCode::UnknownObject,
              "no object " + std::to_string(id) + " on machine " + std::to_string(machine_id_));
    return it->second;
}

wire::Message MachineRuntime::do_invoke(const wire::Message& req) {
    if (req.target.machine_id != machine_id_)
        raise(ErrorCode::UnknownMachine, "invoke routed to wrong machine");
    auto entry = find_entry(req.target.object_id);

    // "__fence" is a dispatch-level no-op every object answers; barriers are
    // built from it.
    const MethodFn* method = nullptr;
    if (req.method_name != "__fence") {
        const ClassDef* cls = classes_->find(entry->class_name);
        if (!cls)
            raise(ErrorCode::Internal, "class vanished: " + entry->class_name);
        auto it = cls->methods.find(req.method_name);
        if (it == cls->methods.end())
            raise(ErrorCode::UnknownMethod,
                  entry->class_name + " has no method " + req.method_name);
        method = &it->second;
    }

    std::lock_guard exec(entry->exec_mu);
    if (entry->dead)
        raise(ErrorCode::UnknownObject, "object " + std::to_string(req.target.object_id) +
                                            " destroyed on machine " +
                                            std::to_string(machine_id_));
    if (!method)
        return wire::Message::invoke_reply(req.request_id, wire::Value::unit());

    Client nested(*transport_);
    InvokeContext ctx{nested, machine_id_, req.target};
    wire::Value result = (*method)(*entry->obj, ctx, req.args.as_list());
    return wire::Message::invoke_reply(req.request_id, std::move(result));
}

wire::Message MachineRuntime::do_destroy(const wire::Message& req) {
    if (req.target.machine_id != machine_id_)
        raise(ErrorCode::UnknownMachine, "destroy routed to wrong machine");
    std::shared_ptr<Entry> entry;
    {
        std::lock_guard lk(map_mu_);
        auto it = objects_.find(req.target.object_id);
        if (it == objects_.end())
            raise(ErrorCode::UnknownObject, "no object " + std::to_string(req.target.object_id) +
                                                " on machine " + std::to_string(machine_id_));
        entry = std::move(it->second);
        objects_.erase(it);
    }
    // Wait out any executing method, then run the destructor before replying.
    std::lock_guard exec(entry->exec_mu);
    entry->dead = true;
    entry->obj.reset();
    return wire::Message::destroy_reply(req.request_id);
}

// ---------------------------------------------------------------------------
// Client

Client::Channel& Client::channel(std::uint32_t machine) {
    auto it = channels_.find(machine);
    if (it == channels_.end()) {
        if (machine >= transport_.machine_count())
            raise(ErrorCode::UnknownMachine, "no machine " + std::to_string(machine) +
                                                 " in a cluster of " +
                                                 std::to_string(transport_.machine_count()));
        Channel ch;
        ch.conn = transport_.connect(machine);
        it = channels_.emplace(machine, std::move(ch)).first;
    }
    return it->second;
}

std::uint64_t Client::post(std::uint32_t machine, wire::Message m) {
    Channel& ch = channel(machine);
    m.request_id = ch.next_rid++;
    ch.conn->send_frame(wire::encode_message(m));
    return m.request_id;
}

wire::Message Client::wait(std::uint32_t machine, std::uint64_t request_id) {
    Channel& ch = channel(machine);
    auto buffered = ch.buffered.find(request_id);
    if (buffered != ch.buffered.end()) {
        wire::Message m = std::move(buffered->second);
        ch.buffered.erase(buffered);
        return m;
    }
    for (;;) {
        wire::Message m = wire::decode_message(ch.conn->recv_frame());
        if (m.request_id == request_id)
            return m;
        ch.buffered.emplace(m.request_id, std::move(m));
    }
}

wire::Message Client::check_reply(const wire::Message& reply, wire::MsgType expected) {
    if (reply.type == wire::MsgType::Error) {
        auto code = reply.error_code;
        if (code < 1 || code > 8)
            throw RemoteError(ErrorCode::Internal, reply.error_detail);
        throw RemoteError(static_cast<ErrorCode>(code), reply.error_detail);
    }
    if (reply.type != expected)
        throw RemoteError(ErrorCode::Internal,
                          std::string("expected ") + wire::msg_type_name(expected) + ", got " +
                              wire::msg_type_name(reply.type));
    return reply;
}

RemoteRef Client::spawn(std::uint32_t machine, const std::string& class_name,
                        wire::Value::List ctor_args) {
    auto rid = post(machine, wire::Message::spawn(0, class_name, std::move(ctor_args)));
    wire::Message reply = check_reply(wait(machine, rid), wire::MsgType::SpawnReply);
    return RemoteRef{reply.target.machine_id, reply.target.object_id, class_name};
}

wire::Value Client::invoke(const RemoteRef& ref, const std::string& method,
                           wire::Value::List args) {
    auto rid = post(ref.machine_id, wire::Message::invoke(0, ref.wire(), method, std::move(args)));
    wire::Message reply = check_reply(wait(ref.machine_id, rid), wire::MsgType::InvokeReply);
    return reply.result;
}

void Client::destroy(const RemoteRef& ref) {
    auto rid = post(ref.machine_id, wire::Message::destroy(0, ref.wire()));
    check_reply(wait(ref.machine_id, rid), wire::MsgType::DestroyReply);
}

// ---------------------------------------------------------------------------
// Cluster assembly

namespace {

std::vector<transport::FrameHandler> make_handlers(
    std::vector<std::unique_ptr<MachineRuntime>>& machines) {
    std::vector<transport::FrameHandler> handlers;
    handlers.reserve(machines.size());
    for (auto& m : machines)
        handlers.push_back(
            [rt = m.get()](std::span<const std::uint8_t> f) { return rt->handle_frame(f); });
    return handlers;
}

} // namespace

Cluster::Cluster(const transport::TransportConfig& cfg, std::size_t n_machines,
                 std::shared_ptr<const ClassRegistry> classes) {
    if (n_machines < 1)
        throw TransportFailure("cluster needs at least one machine");
    for (std::size_t i = 0; i < n_machines; ++i)
        machines_.push_back(
            std::make_unique<MachineRuntime>(static_cast<std::uint32_t>(i), classes));
    auto handlers = make_handlers(machines_);
    if (cfg.backend == transport::Backend::Sim) {
        transport_ = transport::make_sim_transport(n_machines, cfg, std::move(handlers));
    } else {
        std::vector<transport::Endpoint> eps(n_machines);
        std::vector<std::uint32_t> serve(n_machines);
        std::string host = cfg.bind_host;
        if (host.empty()) {
            const char* env = std::getenv("OBJPROC_BIND_ADDR");
            host = env && *env ? env : "127.0.0.1";
        }
        for (std::size_t i = 0; i < n_machines; ++i) {
            eps[i] = {static_cast<std::uint32_t>(i), host + ":0"};
            serve[i] = static_cast<std::uint32_t>(i);
        }
        transport_ =
            transport::make_socket_transport(std::move(eps), std::move(serve), std::move(handlers));
    }
    for (auto& m : machines_)
        m->attach_transport(*transport_);
}

Cluster::Cluster(const std::string& topology_file, std::size_t n_machines,
                 std::shared_ptr<const ClassRegistry> classes) {
    machines_.push_back(std::make_unique<MachineRuntime>(0, classes));
    auto handlers = make_handlers(machines_);
    std::vector<transport::Endpoint> eps(n_machines);
    for (std::size_t i = 0; i < n_machines; ++i)
        eps[i].machine_id = static_cast<std::uint32_t>(i);
    transport_ = transport::make_socket_transport(std::move(eps), {0}, std::move(handlers),
                                                  topology_file);
    machines_[0]->attach_transport(*transport_);
}

Cluster::~Cluster() {
    if (transport_)
        transport_->shutdown();
}

void run_worker(std::uint32_t machine_id, const std::string& topology_file,
                std::shared_ptr<const ClassRegistry> classes) {
    auto runtime = std::make_unique<MachineRuntime>(machine_id, classes);
    std::vector<transport::FrameHandler> handlers;
    handlers.push_back(
        [rt = runtime.get()](std::span<const std::uint8_t> f) { return rt->handle_frame(f); });

    const char* env = std::getenv("OBJPROC_BIND_ADDR");
    std::string host = env && *env ? env : "127.0.0.1";
    std::vector<transport::Endpoint> eps;
    eps.push_back({machine_id, host + ":0"});
    auto transport = transport::make_socket_transport(std::move(eps), {machine_id},
                                                      std::move(handlers), topology_file);
    runtime->attach_transport(*transport);

    // Publish our bound endpoint for the master to merge into the topology.
    auto ep = transport->endpoints().at(machine_id);
    transport::write_topology(topology_file + "." + std::to_string(machine_id), {ep});

    // Serve until terminated; page data is durable on write, so SIGTERM is a
    // clean exit.
    for (;;)
        ::pause();
}

} // namespace objproc::runtime
