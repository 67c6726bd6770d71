#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "objproc/runtime.hpp"

// Persistent processes: a manifest maps symbolic addresses to the recipe for
// reconstructing an object (class, home machine, constructor args). Objects
// stay alive until explicitly destroyed; the manifest entry and the object's
// durable files survive cluster restarts independently of each other.

namespace objproc::persist {

// objproc://<namespace>/<class>/<name>
struct ParsedAddress {
    std::string ns;
    std::string cls;
    std::string name;
};

ParsedAddress parse_address(const std::string& address);

class UnknownAddressError : public ObjProcError {
public:
    explicit UnknownAddressError(const std::string& addr)
        : ObjProcError("unknown address: " + addr) {}
};

class DuplicateAddressError : public ObjProcError {
public:
    explicit DuplicateAddressError(const std::string& addr)
        : ObjProcError("address already persisted: " + addr) {}
};

struct ManifestEntry {
    std::string address;
    std::string class_name;
    std::uint32_t machine_id = 0;
    wire::Value args = wire::Value::list({}); // reconstruction args
};

// File format, one record per line:
//   <address> <class> <machine_id> <base64 of the encoded args list>
// Operations take an exclusive lock on the file. One Manifest object per
// cluster session; the activation cache is per instance.
class Manifest {
public:
    explicit Manifest(std::filesystem::path file);

    // Writes the entry durably; the object stays live. The object's class must
    // provide persist_spec() and match the address's class segment.
    void persist(runtime::Client& client, const runtime::RemoteRef& ref,
                 const std::string& address);

    // Returns the live instance if one is active, otherwise reconstructs the
    // object on its home machine from the stored args.
    runtime::RemoteRef resolve(runtime::Client& client, const std::string& address);

    // Removes the manifest entry; a live instance is unaffected.
    void unpersist(const std::string& address);

    std::vector<ManifestEntry> list() const;

    const std::filesystem::path& path() const noexcept { return file_; }

private:
    std::vector<ManifestEntry> load_locked(int fd) const;
    void store_locked(int fd, const std::vector<ManifestEntry>& entries) const;

    std::filesystem::path file_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, runtime::RemoteRef> active_;
};

// Manifest location: explicit path, else OBJPROC_MANIFEST, else
// "objproc-manifest.txt" in the working directory.
std::filesystem::path default_manifest_path(const std::string& cli_flag = {});

std::string base64_encode(std::span<const std::uint8_t> data);
std::vector<std::uint8_t> base64_decode(const std::string& text);

} // namespace objproc::persist
