#include "objproc/transport.hpp"

#include <algorithm>
#include <deque>
#include <mutex>

namespace objproc::transport {

namespace {
thread_local std::uint32_t t_current_machine = 0;
}

std::uint32_t current_machine() noexcept { return t_current_machine; }

MachineScope::MachineScope(std::uint32_t machine) noexcept : saved_(t_current_machine) {
    t_current_machine = machine;
}

MachineScope::~MachineScope() { t_current_machine = saved_; }

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

class SimTransport final : public Transport, public SimControl {
public:
    SimTransport(std::size_t n, const TransportConfig& cfg, std::vector<FrameHandler> handlers)
        : cfg_(cfg), machines_(n) {
        if (handlers.size() != n)
            throw TransportFailure("sim transport needs one handler per machine");
        if (cfg.sim_latency < VirtualTime::zero())
            throw TransportFailure("sim_latency must be >= 0");
        for (std::size_t i = 0; i < n; ++i) {
            machines_[i].handler = std::move(handlers[i]);
            endpoints_.push_back({static_cast<std::uint32_t>(i), "sim:" + std::to_string(i)});
        }
    }

    std::vector<Endpoint> endpoints() const override { return endpoints_; }
    std::size_t machine_count() const override { return machines_.size(); }

    std::shared_ptr<Connection> connect(std::uint32_t machine) override;

    void stop_machine(std::uint32_t machine) override {
        std::lock_guard lk(mu_);
        if (machine < machines_.size())
            machines_[machine].alive = false;
    }

    void shutdown() override {
        std::lock_guard lk(mu_);
        for (auto& m : machines_)
            m.alive = false;
    }

    SimControl* sim() noexcept override { return this; }

    VirtualTime now() const override {
        std::lock_guard lk(mu_);
        return stack_.empty() ? root_clock_ : stack_.back();
    }

    void advance_to(VirtualTime t) override {
        std::lock_guard lk(mu_);
        auto& slot = stack_.empty() ? root_clock_ : stack_.back();
        slot = std::max(slot, t);
    }

    SimStats stats() const override {
        std::lock_guard lk(mu_);
        return stats_;
    }

private:
    friend class SimConnection;

    struct MachineSim {
        FrameHandler handler;
        VirtualTime loop_clock{0};
        bool alive = true;
    };

    void record(std::uint32_t src, std::uint32_t dst, std::span<const std::uint8_t> frame) {
        stats_.frames_delivered += 1;
        stats_.bytes_delivered += frame.size();
        auto mix = [&](std::uint64_t h, std::uint8_t b) { return (h ^ b) * kFnvPrime; };
        std::uint64_t h = stats_.trace_hash == 0 ? kFnvOffset : stats_.trace_hash;
        for (int i = 0; i < 4; ++i)
            h = mix(h, static_cast<std::uint8_t>(src >> (8 * i)));
        for (int i = 0; i < 4; ++i)
            h = mix(h, static_cast<std::uint8_t>(dst >> (8 * i)));
        for (auto b : frame)
            h = mix(h, b);
        stats_.trace_hash = h;
    }

    VirtualTime activity_now_locked() const { return stack_.empty() ? root_clock_ : stack_.back(); }

    void activity_advance_locked(VirtualTime t) {
        auto& slot = stack_.empty() ? root_clock_ : stack_.back();
        slot = std::max(slot, t);
    }

    TransportConfig cfg_;
    std::vector<MachineSim> machines_;
    std::vector<Endpoint> endpoints_;
    // Nested handler executions push activity clocks here; slot "empty" is the
    // root program. The whole simulation runs under one recursive mutex, so a
    // single stack suffices.
    std::vector<VirtualTime> stack_;
    VirtualTime root_clock_{0};
    SimStats stats_;
    mutable std::recursive_mutex mu_;
};

class SimConnection final : public Connection {
public:
    SimConnection(SimTransport& t, std::uint32_t dst) : t_(t), dst_(dst) {}

    void send_frame(std::span<const std::uint8_t> frame) override {
        std::lock_guard lk(t_.mu_);
        if (dst_ >= t_.machines_.size() || !t_.machines_[dst_].alive)
            throw TransportFailure("machine " + std::to_string(dst_) + " is down");
        auto& m = t_.machines_[dst_];
        std::uint32_t src = t_current_machine;
        VirtualTime hop = src == dst_ ? VirtualTime::zero() : t_.cfg_.sim_latency;

        VirtualTime arrive = t_.activity_now_locked() + hop;
        VirtualTime start = std::max(m.loop_clock, arrive) + t_.cfg_.sim_overhead;
        m.loop_clock = start;
        t_.record(src, dst_, frame);

        std::vector<std::uint8_t> reply;
        t_.stack_.push_back(start);
        {
            MachineScope scope(dst_);
            reply = m.handler(frame);
        }
        VirtualTime done = t_.stack_.back();
        t_.stack_.pop_back();
        t_.machines_[dst_].loop_clock = std::max(t_.machines_[dst_].loop_clock, done);

        t_.record(dst_, src, reply);
        replies_.push_back({std::move(reply), done + hop});
    }

    std::vector<std::uint8_t> recv_frame() override {
        std::lock_guard lk(t_.mu_);
        if (dst_ >= t_.machines_.size() || !t_.machines_[dst_].alive)
            throw TransportFailure("machine " + std::to_string(dst_) + " is down");
        if (replies_.empty())
            throw TransportFailure("recv with no outstanding request");
        auto [frame, arrival] = std::move(replies_.front());
        replies_.pop_front();
        t_.activity_advance_locked(arrival);
        return std::move(frame);
    }

private:
    SimTransport& t_;
    std::uint32_t dst_;
    std::deque<std::pair<std::vector<std::uint8_t>, VirtualTime>> replies_;
};

std::shared_ptr<Connection> SimTransport::connect(std::uint32_t machine) {
    std::lock_guard lk(mu_);
    if (machine >= machines_.size())
        throw TransportFailure("no such machine " + std::to_string(machine));
    if (!machines_[machine].alive)
        throw TransportFailure("machine " + std::to_string(machine) + " is down");
    return std::make_shared<SimConnection>(*this, machine);
}

} // namespace

std::unique_ptr<Transport> make_sim_transport(std::size_t n_machines, const TransportConfig& cfg,
                                              std::vector<FrameHandler> handlers) {
    return std::make_unique<SimTransport>(n_machines, cfg, std::move(handlers));
}

} // namespace objproc::transport
