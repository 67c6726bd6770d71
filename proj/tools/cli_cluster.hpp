#pragma once

#include <sys/stat.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "objproc/runtime.hpp"

// CLI-side cluster bring-up. Sim clusters live in-process; socket clusters
// spawn one worker subprocess per remote machine and tear them down on exit.

namespace objproc::cli {

inline std::string worker_binary_path() {
    if (const char* env = std::getenv("OBJPROC_WORKER_BIN"); env && *env)
        return env;
    char buf[4096];
    ssize_t n = ::readlink("/proc/self/exe", buf, sizeof buf - 1);
    if (n > 0) {
        buf[n] = '\0';
        return (std::filesystem::path(buf).parent_path() / "objproc-worker").string();
    }
    return "objproc-worker";
}

class ClusterHandle {
public:
    // backend: "sim" or "socket".
    ClusterHandle(const std::string& backend, std::size_t machines, double latency_ms,
                  const std::filesystem::path& workdir,
                  std::shared_ptr<const runtime::ClassRegistry> classes) {
        if (backend == "sim") {
            transport::TransportConfig cfg;
            cfg.backend = transport::Backend::Sim;
            cfg.sim_latency = std::chrono::duration_cast<transport::VirtualTime>(
                std::chrono::duration<double, std::milli>(latency_ms));
            cluster_ = std::make_unique<runtime::Cluster>(cfg, machines, std::move(classes));
            return;
        }
        if (backend != "socket")
            throw std::runtime_error("unknown transport backend: " + backend);

        topology_ = (workdir / "topology.txt").string();
        std::string worker_bin = worker_binary_path();
        for (std::size_t k = 1; k < machines; ++k)
            launch_worker(worker_bin, static_cast<std::uint32_t>(k));

        cluster_ = std::make_unique<runtime::Cluster>(topology_, machines, std::move(classes));

        // Merge worker endpoints (each publishes topology.txt.<k>) with our
        // own machine 0 endpoint.
        std::vector<transport::Endpoint> eps = cluster_->transport().endpoints();
        auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(15);
        for (std::size_t k = 1; k < machines; ++k) {
            std::string part = topology_ + "." + std::to_string(k);
            for (;;) {
                if (std::filesystem::exists(part)) {
                    auto lines = transport::read_topology(part);
                    if (!lines.empty()) {
                        eps[lines[0].machine_id] = lines[0];
                        break;
                    }
                }
                check_workers_alive();
                if (std::chrono::steady_clock::now() > deadline)
                    throw std::runtime_error("timed out waiting for worker " +
                                             std::to_string(k));
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            }
        }
        transport::write_topology(topology_, eps);
    }

    ~ClusterHandle() {
        cluster_.reset();
        for (pid_t pid : workers_) {
            ::kill(pid, SIGTERM);
        }
        for (pid_t pid : workers_) {
            int status = 0;
            ::waitpid(pid, &status, 0);
        }
    }

    runtime::Cluster& cluster() noexcept { return *cluster_; }
    runtime::Client client() { return cluster_->make_client(); }
    const std::string& topology() const noexcept { return topology_; }

private:
    void launch_worker(const std::string& worker_bin, std::uint32_t machine_id) {
        pid_t pid = ::fork();
        if (pid < 0)
            throw std::runtime_error("fork failed");
        if (pid == 0) {
            std::string id = std::to_string(machine_id);
            ::execl(worker_bin.c_str(), worker_bin.c_str(), "--machine-id", id.c_str(),
                    "--topology", topology_.c_str(), static_cast<char*>(nullptr));
            std::perror("exec objproc-worker");
            std::_Exit(127);
        }
        workers_.push_back(pid);
    }

    void check_workers_alive() const {
        for (pid_t pid : workers_) {
            int status = 0;
            if (::waitpid(pid, &status, WNOHANG) == pid)
                throw std::runtime_error("worker process " + std::to_string(pid) +
                                         " exited during startup");
        }
    }

    std::unique_ptr<runtime::Cluster> cluster_;
    std::vector<pid_t> workers_;
    std::string topology_;
};

// Machines that host demo objects: everything but the master when the cluster
// has peers, otherwise the master itself.
inline std::vector<std::uint32_t> object_machines(std::size_t machines) {
    std::vector<std::uint32_t> out;
    for (std::size_t k = 1; k < machines; ++k)
        out.push_back(static_cast<std::uint32_t>(k));
    if (out.empty())
        out.push_back(0);
    return out;
}

} // namespace objproc::cli
