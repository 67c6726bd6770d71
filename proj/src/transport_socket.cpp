#include "objproc/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace objproc::transport {

namespace {

constexpr std::uint32_t kMaxFrame = 1u << 30;

[[noreturn]] void fail_errno(const std::string& what) {
    throw TransportFailure(what + ": " + std::strerror(errno));
}

std::uint32_t frame_len(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

bool read_exact(int fd, std::uint8_t* buf, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
        ssize_t r = ::read(fd, buf + got, n - got);
        if (r == 0)
            return false;
        if (r < 0) {
            if (errno == EINTR)
                continue;
            return false;
        }
        got += static_cast<std::size_t>(r);
    }
    return true;
}

bool write_all(int fd, const std::uint8_t* buf, std::size_t n) {
    std::size_t sent = 0;
    while (sent < n) {
        ssize_t r = ::send(fd, buf + sent, n - sent, MSG_NOSIGNAL);
        if (r < 0) {
            if (errno == EINTR)
                continue;
            return false;
        }
        sent += static_cast<std::size_t>(r);
    }
    return true;
}

sockaddr_in parse_address(const std::string& address) {
    auto colon = address.rfind(':');
    if (colon == std::string::npos)
        throw TransportFailure("bad address (want host:port): " + address);
    std::string host = address.substr(0, colon);
    int port = std::stoi(address.substr(colon + 1));
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1)
        throw TransportFailure("bad host in address: " + address);
    return sa;
}

// Client channel. Sends never block the activity indefinitely: when the kernel
// buffer is full, inbound replies are drained into a queue so the peer can
// make progress (a batch may have many frames in flight both ways).
class SocketConnection final : public Connection {
public:
    explicit SocketConnection(int fd) : fd_(fd) {
        int fl = ::fcntl(fd_, F_GETFL, 0);
        ::fcntl(fd_, F_SETFL, fl | O_NONBLOCK);
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }

    ~SocketConnection() override {
        if (fd_ >= 0)
            ::close(fd_);
    }

    void send_frame(std::span<const std::uint8_t> frame) override {
        out_.insert(out_.end(), frame.begin(), frame.end());
        pump(false);
    }

    std::vector<std::uint8_t> recv_frame() override {
        while (ready_.empty())
            pump(true);
        auto f = std::move(ready_.front());
        ready_.pop_front();
        return f;
    }

private:
    // Moves bytes both ways. `until_frame` blocks until at least one complete
    // inbound frame is ready; otherwise returns once the outbound queue fits
    // in the kernel or would block.
    void pump(bool until_frame) {
        for (;;) {
            flush_some();
            parse_frames();
            if (until_frame ? !ready_.empty() : out_.empty())
                return;

            pollfd pfd{};
            pfd.fd = fd_;
            pfd.events = POLLIN;
            if (!out_.empty())
                pfd.events |= POLLOUT;
            int rc = ::poll(&pfd, 1, -1);
            if (rc < 0) {
                if (errno == EINTR)
                    continue;
                fail_errno("poll");
            }
            if (pfd.revents & POLLIN)
                read_some();
            if (pfd.revents & (POLLERR | POLLHUP) && !(pfd.revents & POLLIN))
                throw TransportFailure("peer closed connection");
        }
    }

    void flush_some() {
        while (!out_.empty()) {
            ssize_t r = ::send(fd_, out_.data(), out_.size(), MSG_NOSIGNAL);
            if (r < 0) {
                if (errno == EINTR)
                    continue;
                if (errno == EAGAIN || errno == EWOULDBLOCK)
                    return;
                fail_errno("send");
            }
            out_.erase(out_.begin(), out_.begin() + r);
        }
    }

    void read_some() {
        std::uint8_t buf[65536];
        for (;;) {
            ssize_t r = ::read(fd_, buf, sizeof buf);
            if (r > 0) {
                in_.insert(in_.end(), buf, buf + r);
                if (static_cast<std::size_t>(r) < sizeof buf)
                    return;
                continue;
            }
            if (r == 0)
                throw TransportFailure("peer closed connection");
            if (errno == EINTR)
                continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK)
                return;
            fail_errno("read");
        }
    }

    void parse_frames() {
        while (in_.size() >= 4) {
            std::uint32_t len = frame_len(in_.data());
            if (len > kMaxFrame)
                throw TransportFailure("oversized frame");
            if (in_.size() < 4 + std::size_t(len))
                return;
            ready_.emplace_back(in_.begin(), in_.begin() + 4 + len);
            in_.erase(in_.begin(), in_.begin() + 4 + len);
        }
    }

    int fd_;
    std::vector<std::uint8_t> out_;
    std::vector<std::uint8_t> in_;
    std::deque<std::vector<std::uint8_t>> ready_;
};

class SocketTransport final : public Transport {
public:
    SocketTransport(std::vector<Endpoint> endpoints, std::vector<std::uint32_t> serve,
                    std::vector<FrameHandler> handlers, std::string topology_file)
        : topology_file_(std::move(topology_file)) {
        for (auto& ep : endpoints)
            set_endpoint(ep);
        for (std::size_t i = 0; i < serve.size(); ++i) {
            auto id = serve[i];
            auto& srv = served_[id];
            srv = std::make_unique<Served>();
            srv->machine = id;
            srv->handler = handlers.at(i);

            std::string host = "127.0.0.1";
            if (id < endpoints_.size() && !endpoints_[id].address.empty()) {
                auto& addr = endpoints_[id].address;
                host = addr.substr(0, addr.rfind(':'));
            }
            auto [fd, port] = bind_listener(host);
            srv->listen_fd = fd;
            set_endpoint({id, host + ":" + std::to_string(port)});
            srv->acceptor = std::thread([this, s = srv.get()] { accept_loop(*s); });
        }
    }

    ~SocketTransport() override { shutdown(); }

    std::vector<Endpoint> endpoints() const override {
        std::lock_guard lk(mu_);
        return endpoints_;
    }

    std::size_t machine_count() const override {
        std::lock_guard lk(mu_);
        return endpoints_.size();
    }

    std::shared_ptr<Connection> connect(std::uint32_t machine) override {
        std::string address = lookup(machine);
        sockaddr_in sa = parse_address(address);
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0)
            fail_errno("socket");
        if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
            int e = errno;
            ::close(fd);
            errno = e;
            fail_errno("connect to machine " + std::to_string(machine) + " at " + address);
        }
        return std::make_shared<SocketConnection>(fd);
    }

    void stop_machine(std::uint32_t machine) override {
        std::unique_ptr<Served> srv;
        {
            std::lock_guard lk(mu_);
            auto it = served_.find(machine);
            if (it == served_.end())
                return;
            srv = std::move(it->second);
            served_.erase(it);
        }
        stop_served(*srv);
    }

    void shutdown() override {
        std::vector<std::unique_ptr<Served>> all;
        {
            std::lock_guard lk(mu_);
            for (auto& [id, srv] : served_)
                all.push_back(std::move(srv));
            served_.clear();
        }
        for (auto& srv : all)
            stop_served(*srv);
    }

    SimControl* sim() noexcept override { return nullptr; }

private:
    struct Served {
        std::uint32_t machine = 0;
        FrameHandler handler;
        int listen_fd = -1;
        std::thread acceptor;
        std::mutex conn_mu;
        std::vector<int> conn_fds;
        std::vector<std::thread> conn_threads;
        std::atomic<bool> stopping{false};
    };

    void set_endpoint(const Endpoint& ep) {
        std::lock_guard lk(mu_);
        if (endpoints_.size() <= ep.machine_id)
            endpoints_.resize(ep.machine_id + 1);
        endpoints_[ep.machine_id] = ep;
    }

    std::string lookup(std::uint32_t machine) {
        {
            std::lock_guard lk(mu_);
            if (machine < endpoints_.size() && !endpoints_[machine].address.empty())
                return endpoints_[machine].address;
        }
        if (!topology_file_.empty()) {
            for (auto& ep : read_topology(topology_file_))
                set_endpoint(ep);
            std::lock_guard lk(mu_);
            if (machine < endpoints_.size() && !endpoints_[machine].address.empty())
                return endpoints_[machine].address;
        }
        throw TransportFailure("no endpoint for machine " + std::to_string(machine));
    }

    void accept_loop(Served& srv) {
        for (;;) {
            int fd = ::accept(srv.listen_fd, nullptr, nullptr);
            if (fd < 0) {
                if (errno == EINTR)
                    continue;
                return; // listener closed
            }
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            std::lock_guard lk(srv.conn_mu);
            if (srv.stopping) {
                ::close(fd);
                return;
            }
            srv.conn_fds.push_back(fd);
            srv.conn_threads.emplace_back([this, &srv, fd] { serve_connection(srv, fd); });
        }
    }

    // One thread per accepted connection; frames are handled strictly in
    // arrival order, so the reply order matches the request order.
    void serve_connection(Served& srv, int fd) {
        MachineScope scope(srv.machine);
        std::vector<std::uint8_t> frame;
        for (;;) {
            std::uint8_t hdr[4];
            if (!read_exact(fd, hdr, 4))
                return;
            std::uint32_t len = frame_len(hdr);
            if (len > kMaxFrame)
                return;
            frame.resize(4 + std::size_t(len));
            std::memcpy(frame.data(), hdr, 4);
            if (!read_exact(fd, frame.data() + 4, len))
                return;
            std::vector<std::uint8_t> reply = srv.handler(frame);
            if (!write_all(fd, reply.data(), reply.size()))
                return;
        }
    }

    void stop_served(Served& srv) {
        srv.stopping = true;
        if (srv.listen_fd >= 0) {
            ::shutdown(srv.listen_fd, SHUT_RDWR);
            ::close(srv.listen_fd);
        }
        if (srv.acceptor.joinable())
            srv.acceptor.join();
        {
            std::lock_guard lk(srv.conn_mu);
            for (int fd : srv.conn_fds)
                ::shutdown(fd, SHUT_RDWR);
        }
        for (auto& t : srv.conn_threads)
            if (t.joinable())
                t.join();
        {
            std::lock_guard lk(srv.conn_mu);
            for (int fd : srv.conn_fds)
                ::close(fd);
            srv.conn_fds.clear();
        }
    }

    mutable std::mutex mu_;
    std::vector<Endpoint> endpoints_;
    std::map<std::uint32_t, std::unique_ptr<Served>> served_;
    std::string topology_file_;
};

} // namespace

std::pair<int, std::uint16_t> bind_listener(const std::string& host) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0)
        fail_errno("socket");
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = 0;
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1) {
        ::close(fd);
        throw TransportFailure("bad bind host: " + host);
    }
    if (::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0 || ::listen(fd, 64) != 0) {
        int e = errno;
        ::close(fd);
        errno = e;
        fail_errno("bind " + host);
    }
    socklen_t len = sizeof sa;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
    return {fd, ntohs(sa.sin_port)};
}

std::vector<Endpoint> read_topology(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw TransportFailure("cannot open topology file " + path);
    std::vector<Endpoint> eps;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::istringstream ls(line);
        Endpoint ep;
        if (!(ls >> ep.machine_id >> ep.address))
            throw TransportFailure("bad topology line: " + line);
        eps.push_back(std::move(ep));
    }
    return eps;
}

void write_topology(const std::string& path, const std::vector<Endpoint>& endpoints) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out)
            throw TransportFailure("cannot write topology file " + path);
        for (const auto& ep : endpoints)
            if (!ep.address.empty())
                out << ep.machine_id << ' ' << ep.address << '\n';
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        fail_errno("rename topology file");
}

std::unique_ptr<Transport> make_socket_transport(std::vector<Endpoint> endpoints,
                                                 std::vector<std::uint32_t> serve,
                                                 std::vector<FrameHandler> handlers,
                                                 std::string topology_file) {
    return std::make_unique<SocketTransport>(std::move(endpoints), std::move(serve),
                                             std::move(handlers), std::move(topology_file));
}

} // namespace objproc::transport
