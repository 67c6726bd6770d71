#include "objproc/persist.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <sstream>

namespace objproc::persist {

namespace {

constexpr char kScheme[] = "objproc://";

class LockedFile {
public:
    explicit LockedFile(const std::filesystem::path& p) {
        fd_ = ::open(p.c_str(), O_RDWR | O_CREAT, 0644);
        if (fd_ < 0)
            throw ObjProcError("cannot open manifest " + p.string() + ": " +
                               std::strerror(errno));
        if (::flock(fd_, LOCK_EX) != 0) {
            int e = errno;
            ::close(fd_);
            throw ObjProcError(std::string("cannot lock manifest: ") + std::strerror(e));
        }
    }

    ~LockedFile() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }

    int fd() const noexcept { return fd_; }

private:
    int fd_ = -1;
};

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

} // namespace

std::string base64_encode(std::span<const std::uint8_t> data) {
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= data.size(); i += 3) {
        std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += kB64[v & 63];
    }
    if (i + 1 == data.size()) {
        std::uint32_t v = data[i] << 16;
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == data.size()) {
        std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z')
            return c - 'A';
        if (c >= 'a' && c <= 'z')
            return c - 'a' + 26;
        if (c >= '0' && c <= '9')
            return c - '0' + 52;
        if (c == '+')
            return 62;
        if (c == '/')
            return 63;
        return -1;
    };
    if (text.size() % 4 != 0)
        throw ObjProcError("bad base64 length");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int pad = 0;
        std::uint32_t v = 0;
        for (int j = 0; j < 4; ++j) {
            char c = text[i + j];
            if (c == '=') {
                ++pad;
                v <<= 6;
                continue;
            }
            int d = value(c);
            if (d < 0 || pad > 0)
                throw ObjProcError("bad base64 character");
            v = (v << 6) | static_cast<std::uint32_t>(d);
        }
        out.push_back(static_cast<std::uint8_t>(v >> 16));
        if (pad < 2)
            out.push_back(static_cast<std::uint8_t>(v >> 8));
        if (pad < 1)
            out.push_back(static_cast<std::uint8_t>(v));
    }
    return out;
}

ParsedAddress parse_address(const std::string& address) {
    if (address.rfind(kScheme, 0) != 0)
        raise(ErrorCode::BadArgs, "address must start with objproc://: " + address);
    std::string rest = address.substr(sizeof(kScheme) - 1);
    auto first = rest.find('/');
    auto second = first == std::string::npos ? std::string::npos : rest.find('/', first + 1);
    if (first == std::string::npos || second == std::string::npos)
        raise(ErrorCode::BadArgs, "address must be objproc://<ns>/<class>/<name>: " + address);
    ParsedAddress p;
    p.ns = rest.substr(0, first);
    p.cls = rest.substr(first + 1, second - first - 1);
    p.name = rest.substr(second + 1);
    if (p.ns.empty() || p.cls.empty() || p.name.empty())
        raise(ErrorCode::BadArgs, "address has empty segment: " + address);
    for (char c : address)
        if (std::isspace(static_cast<unsigned char>(c)))
            raise(ErrorCode::BadArgs, "address may not contain whitespace: " + address);
    return p;
}

Manifest::Manifest(std::filesystem::path file) : file_(std::move(file)) {}

std::vector<ManifestEntry> Manifest::load_locked(int fd) const {
    std::string text;
    char buf[4096];
    ::lseek(fd, 0, SEEK_SET);
    for (;;) {
        ssize_t n = ::read(fd, buf, sizeof buf);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw ObjProcError(std::string("manifest read: ") + std::strerror(errno));
        }
        if (n == 0)
            break;
        text.append(buf, static_cast<std::size_t>(n));
    }

    std::vector<ManifestEntry> entries;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string b64;
        if (!(ls >> e.address >> e.class_name >> e.machine_id >> b64))
            throw ObjProcError("bad manifest line: " + line);
        auto bytes = base64_decode(b64);
        e.args = wire::decode_value(bytes);
        if (e.args.kind() != wire::Value::Kind::List)
            throw ObjProcError("manifest args are not a list: " + line);
        entries.push_back(std::move(e));
    }
    return entries;
}

void Manifest::store_locked(int fd, const std::vector<ManifestEntry>& entries) const {
    std::ostringstream out;
    for (const auto& e : entries) {
        std::vector<std::uint8_t> bytes;
        wire::encode_value(e.args, bytes);
        out << e.address << ' ' << e.class_name << ' ' << e.machine_id << ' '
            << base64_encode(bytes) << '\n';
    }
    std::string text = out.str();
    if (::ftruncate(fd, 0) != 0)
        throw ObjProcError(std::string("manifest truncate: ") + std::strerror(errno));
    ::lseek(fd, 0, SEEK_SET);
    std::size_t done = 0;
    while (done < text.size()) {
        ssize_t n = ::write(fd, text.data() + done, text.size() - done);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw ObjProcError(std::string("manifest write: ") + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
    ::fsync(fd);
}

void Manifest::persist(runtime::Client& client, const runtime::RemoteRef& ref,
                       const std::string& address) {
    ParsedAddress parsed = parse_address(address);
    if (!ref.class_name.empty() && parsed.cls != ref.class_name)
        raise(ErrorCode::BadArgs, "address class segment '" + parsed.cls +
                                      "' does not match object class '" + ref.class_name + "'");

    wire::Value args;
    try {
        args = client.invoke(ref, "persist_spec", {});
    } catch (const RemoteError& e) {
        if (e.code() == ErrorCode::UnknownMethod)
            raise(ErrorCode::BadArgs,
                  "class " + parsed.cls + " does not provide reconstruction args");
        throw;
    }
    if (args.kind() != wire::Value::Kind::List)
        raise(ErrorCode::BadArgs, "persist_spec() must return a list");

    std::lock_guard lk(mu_);
    LockedFile f(file_);
    auto entries = load_locked(f.fd());
    for (const auto& e : entries)
        if (e.address == address)
            throw DuplicateAddressError(address);
    ManifestEntry e;
    e.address = address;
    e.class_name = parsed.cls;
    e.machine_id = ref.machine_id;
    e.args = std::move(args);
    entries.push_back(std::move(e));
    store_locked(f.fd(), entries);
    active_[address] = ref;
}

runtime::RemoteRef Manifest::resolve(runtime::Client& client, const std::string& address) {
    parse_address(address);
    std::lock_guard lk(mu_);
    LockedFile f(file_);
    auto entries = load_locked(f.fd());
    const ManifestEntry* entry = nullptr;
    for (const auto& e : entries)
        if (e.address == address)
            entry = &e;
    if (!entry)
        throw UnknownAddressError(address);

    // A cached activation may be stale if the object was destroyed; probe it.
    auto it = active_.find(address);
    if (it != active_.end()) {
        try {
            client.invoke(it->second, "__fence", {});
            return it->second;
        } catch (const RemoteError& e) {
            if (e.code() != ErrorCode::UnknownObject)
                throw;
            active_.erase(it);
        }
    }

    runtime::RemoteRef ref =
        client.spawn(entry->machine_id, entry->class_name, entry->args.as_list());
    active_[address] = ref;
    return ref;
}

void Manifest::unpersist(const std::string& address) {
    std::lock_guard lk(mu_);
    LockedFile f(file_);
    auto entries = load_locked(f.fd());
    auto before = entries.size();
    std::erase_if(entries, [&](const ManifestEntry& e) { return e.address == address; });
    if (entries.size() == before)
        throw UnknownAddressError(address);
    store_locked(f.fd(), entries);
    active_.erase(address);
}

std::vector<ManifestEntry> Manifest::list() const {
    std::lock_guard lk(mu_);
    LockedFile f(file_);
    return load_locked(f.fd());
}

std::filesystem::path default_manifest_path(const std::string& cli_flag) {
    if (!cli_flag.empty())
        return cli_flag;
    if (const char* env = std::getenv("OBJPROC_MANIFEST"); env && *env)
        return env;
    return "objproc-manifest.txt";
}

} // namespace objproc::persist
