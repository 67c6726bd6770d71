#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "objproc/transport.hpp"
#include "objproc/wire.hpp"

// The object-process model: spawn an object on a machine, invoke its methods
// remotely with blocking completion semantics, destroy it. One server loop per
// machine hosts many objects; per-object serialization preserves the
// one-process-per-object illusion.

namespace objproc::runtime {

// Client-side handle to a hosted object. Copyable, sendable over the wire
// (class_name is client-side bookkeeping and may be empty on refs received
// from remote peers).
struct RemoteRef {
    std::uint32_t machine_id = 0;
    std::uint64_t object_id = 0;
    std::string class_name;

    wire::Ref wire() const noexcept { return {machine_id, object_id}; }
    bool same_object(const RemoteRef& o) const noexcept {
        return machine_id == o.machine_id && object_id == o.object_id;
    }
};

// Base for everything a machine can host.
class Instance {
public:
    virtual ~Instance() = default;
};

class Client;

// Handed to constructors and method bodies; `client` makes nested remote
// calls on behalf of the executing object.
struct InvokeContext {
    Client& client;
    std::uint32_t self_machine = 0;
    wire::Ref self; // object_id 0 while a constructor runs
};

using MethodFn =
    std::function<wire::Value(Instance&, InvokeContext&, const wire::Value::List&)>;
using CtorFn = std::function<std::unique_ptr<Instance>(InvokeContext&, const wire::Value::List&)>;

struct ClassDef {
    CtorFn ctor;
    std::map<std::string, MethodFn> methods;
};

// Hand-rolled stand-in for generated dispatch tables. Every class must be
// registered on all machines before anything spawns it.
class ClassRegistry {
public:
    void register_class(std::string name, ClassDef def);
    const ClassDef* find(const std::string& name) const;
    bool contains(const std::string& name) const { return find(name) != nullptr; }

private:
    std::map<std::string, ClassDef> classes_;
};

// Built-ins: DoubleBuffer (remote block of doubles), RefList (published group
// of refs). Page devices, array metadata and FFT workers register themselves
// on top of this via their modules.
void register_builtin_classes(ClassRegistry& reg);

// Everything registered in this repository; what the worker executable serves.
std::shared_ptr<ClassRegistry> standard_classes();

// Server side of one machine: the object table plus frame dispatch.
class MachineRuntime {
public:
    MachineRuntime(std::uint32_t machine_id, std::shared_ptr<const ClassRegistry> classes)
        : machine_id_(machine_id), classes_(std::move(classes)) {}

    // Set once the transport exists (handlers reference the runtime, the
    // runtime dials peers through the transport).
    void attach_transport(transport::Transport& t) { transport_ = &t; }

    std::vector<std::uint8_t> handle_frame(std::span<const std::uint8_t> frame);

    std::uint32_t machine_id() const noexcept { return machine_id_; }
    std::size_t live_objects() const;

private:
    struct Entry {
        std::unique_ptr<Instance> obj;
        std::string class_name;
        std::mutex exec_mu;
        bool dead = false;
    };

    wire::Message dispatch(const wire::Message& req);
    wire::Message do_spawn(const wire::Message& req);
    wire::Message do_invoke(const wire::Message& req);
    wire::Message do_destroy(const wire::Message& req);
    std::shared_ptr<Entry> find_entry(std::uint64_t id);

    std::uint32_t machine_id_;
    std::shared_ptr<const ClassRegistry> classes_;
    transport::Transport* transport_ = nullptr;

    mutable std::mutex map_mu_;
    std::unordered_map<std::uint64_t, std::shared_ptr<Entry>> objects_;
    std::uint64_t next_id_ = 1; // 0 is reserved as "no object"
};

// Blocking client API. One Client per activity; not thread-safe. RemoteRefs
// obtained from it may be shared freely across activities.
class Client {
public:
    explicit Client(transport::Transport& t) : transport_(t) {}

    RemoteRef spawn(std::uint32_t machine, const std::string& class_name,
                    wire::Value::List ctor_args);
    wire::Value invoke(const RemoteRef& ref, const std::string& method,
                       wire::Value::List args);
    void destroy(const RemoteRef& ref);

    // Pipelining primitives: post sends without waiting; wait blocks for one
    // reply, buffering others by request id.
    std::uint64_t post(std::uint32_t machine, wire::Message m);
    wire::Message wait(std::uint32_t machine, std::uint64_t request_id);

    // Raises RemoteError for Error replies, checks the reply type otherwise.
    static wire::Message check_reply(const wire::Message& reply, wire::MsgType expected);

    transport::Transport& transport() noexcept { return transport_; }

private:
    struct Channel {
        std::shared_ptr<transport::Connection> conn;
        std::uint64_t next_rid = 1;
        std::map<std::uint64_t, wire::Message> buffered;
    };

    Channel& channel(std::uint32_t machine);

    transport::Transport& transport_;
    std::map<std::uint32_t, Channel> channels_;
};

// A running cluster: transport plus the machines it serves. Destroying the
// cluster (or calling shutdown) terminates every hosted object; durable state
// lives in the objects' files.
class Cluster {
public:
    Cluster(const transport::TransportConfig& cfg, std::size_t n_machines,
            std::shared_ptr<const ClassRegistry> classes);
    // Master side of an externally-launched socket cluster: serves machine 0,
    // dials workers through the topology file.
    Cluster(const std::string& topology_file, std::size_t n_machines,
            std::shared_ptr<const ClassRegistry> classes);
    ~Cluster();

    transport::Transport& transport() noexcept { return *transport_; }
    Client make_client() { return Client(*transport_); }
    std::size_t machine_count() const { return transport_->machine_count(); }
    void shutdown() { transport_->shutdown(); }

private:
    std::vector<std::unique_ptr<MachineRuntime>> machines_;
    std::unique_ptr<transport::Transport> transport_;
};

// Serve loop of the worker executable: binds, appends its endpoint to
// `topology_file`.<id>, then serves until the process is terminated.
[[noreturn]] void run_worker(std::uint32_t machine_id, const std::string& topology_file,
                             std::shared_ptr<const ClassRegistry> classes);

} // namespace objproc::runtime
