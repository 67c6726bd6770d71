#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "objproc/errors.hpp"

// Frame movement between machines. Two backends share one interface: a
// deterministic in-process simulated cluster with a virtual clock, and a real
// localhost socket cluster. Machine 0 is the master (the process running
// main); it hosts objects like any other machine.

namespace objproc::transport {

using VirtualTime = std::chrono::nanoseconds;

struct Endpoint {
    std::uint32_t machine_id = 0;
    std::string address; // "host:port" for sockets, registry key for sim
};

enum class Backend { Sim, Socket };

struct TransportConfig {
    Backend backend = Backend::Sim;
    // One-way delivery cost between distinct machines (Sim only). Loopback
    // deliveries are free.
    VirtualTime sim_latency{0};
    // Per-frame server loop cost (Sim only); models the serial receive loop.
    VirtualTime sim_overhead{std::chrono::microseconds(1)};
    std::uint64_t sim_seed = 0;
    // Socket bind host, default 127.0.0.1 (or OBJPROC_BIND_ADDR if set).
    std::string bind_host;
};

// Server-side entry: one complete request frame in, one reply frame out.
using FrameHandler = std::function<std::vector<std::uint8_t>(std::span<const std::uint8_t>)>;

// A client-side channel to one machine. Frames sent on one connection are
// processed strictly in order; replies come back on the same connection.
// Multiple frames may be in flight before the first recv (pipelining).
// Connections are not thread-safe; use one per activity.
class Connection {
public:
    virtual ~Connection() = default;
    virtual void send_frame(std::span<const std::uint8_t> frame) = 0;
    virtual std::vector<std::uint8_t> recv_frame() = 0;
};

struct SimStats {
    std::uint64_t frames_delivered = 0;
    std::uint64_t bytes_delivered = 0;
    // FNV-1a over (src, dst, frame bytes) in delivery order; two runs of the
    // same program produce the same trace hash.
    std::uint64_t trace_hash = 0;
};

class SimControl {
public:
    virtual ~SimControl() = default;
    // Virtual clock of the calling activity (the main program, or the method
    // execution currently on this thread's stack).
    virtual VirtualTime now() const = 0;
    virtual void advance_to(VirtualTime t) = 0;
    virtual SimStats stats() const = 0;
};

class Transport {
public:
    virtual ~Transport() = default;

    virtual std::vector<Endpoint> endpoints() const = 0;
    virtual std::size_t machine_count() const = 0;

    // Opens a channel from the calling context to `machine`. Raises
    // TransportFailure if the machine is unknown or down.
    virtual std::shared_ptr<Connection> connect(std::uint32_t machine) = 0;

    // Stops one machine; subsequent traffic to it fails with TransportFailure.
    virtual void stop_machine(std::uint32_t machine) = 0;

    // Stops everything. Idempotent.
    virtual void shutdown() = 0;

    // Non-null for the Sim backend.
    virtual SimControl* sim() noexcept = 0;
};

// Machine id the current thread is acting as (0 on client threads; set by the
// server loops while a handler runs).
std::uint32_t current_machine() noexcept;

class MachineScope {
public:
    explicit MachineScope(std::uint32_t machine) noexcept;
    ~MachineScope();
    MachineScope(const MachineScope&) = delete;
    MachineScope& operator=(const MachineScope&) = delete;

private:
    std::uint32_t saved_;
};

// In-process simulated cluster. Handlers execute synchronously in the sender's
// thread; virtual clocks model what a parallel run would cost. Given the same
// program and seed, two runs produce identical traces and clocks.
std::unique_ptr<Transport> make_sim_transport(std::size_t n_machines, const TransportConfig& cfg,
                                              std::vector<FrameHandler> handlers);

// Localhost socket cluster. Serves `handlers[i]` for each machine id in
// `serve`; other endpoints are remote peers reached by dialing. If
// `topology_file` is non-empty, unknown endpoints are re-read from it on
// demand (workers appear there as they come up).
std::unique_ptr<Transport> make_socket_transport(std::vector<Endpoint> endpoints,
                                                 std::vector<std::uint32_t> serve,
                                                 std::vector<FrameHandler> handlers,
                                                 std::string topology_file = {});

// Binds a listener on host:0 and returns (fd, actual port).
std::pair<int, std::uint16_t> bind_listener(const std::string& host);

// Topology file helpers: one `machine_id address` per line.
std::vector<Endpoint> read_topology(const std::string& path);
void write_topology(const std::string& path, const std::vector<Endpoint>& endpoints);

} // namespace objproc::transport
