#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "objproc/parcall.hpp"
#include "objproc/runtime.hpp"

// Distributed 3D array of doubles: a logical index space broken into
// rectangular page blocks, stored across a list of array page devices. The
// page map decides which device holds which block, and therefore the I/O
// pattern.

namespace objproc::distarray {

// Half-open rectangular subdomain [lo1,hi1) x [lo2,hi2) x [lo3,hi3).
struct Domain {
    std::int64_t lo1 = 0, hi1 = 0;
    std::int64_t lo2 = 0, hi2 = 0;
    std::int64_t lo3 = 0, hi3 = 0;

    std::int64_t extent1() const noexcept { return hi1 - lo1; }
    std::int64_t extent2() const noexcept { return hi2 - lo2; }
    std::int64_t extent3() const noexcept { return hi3 - lo3; }
    std::int64_t volume() const noexcept { return extent1() * extent2() * extent3(); }
    bool empty() const noexcept { return volume() == 0; }
};

struct PageAddress {
    std::int32_t device_id = 0;
    std::int64_t index = 0;

    bool operator==(const PageAddress&) const = default;
};

enum class PageMapKind { Linear, RoundRobin };

const char* page_map_kind_name(PageMapKind k) noexcept;
std::optional<PageMapKind> parse_page_map_kind(const std::string& name) noexcept;

// Injective, total map from logical page coordinates to physical addresses.
// Linear packs pages device by device in rank order; RoundRobin deals rank r
// to device r mod D at index r div D.
class PageMap {
public:
    PageMap(PageMapKind kind, std::int64_t pages1, std::int64_t pages2, std::int64_t pages3,
            std::vector<std::int64_t> device_capacities);

    PageAddress lookup(std::int64_t p1, std::int64_t p2, std::int64_t p3) const;
    std::int64_t rank(std::int64_t p1, std::int64_t p2, std::int64_t p3) const;

    std::int64_t total_pages() const noexcept { return pages1_ * pages2_ * pages3_; }
    PageMapKind kind() const noexcept { return kind_; }

private:
    PageMapKind kind_;
    std::int64_t pages1_, pages2_, pages3_;
    std::vector<std::int64_t> caps_;
    std::vector<std::int64_t> prefix_; // cumulative capacities for Linear
};

struct ArraySpec {
    std::int64_t N1 = 0, N2 = 0, N3 = 0; // element extents
    std::int64_t n1 = 0, n2 = 0, n3 = 0; // page block extents; must divide N
    std::vector<runtime::RemoteRef> devices;
    PageMapKind map = PageMapKind::Linear;

    std::int64_t pages1() const noexcept { return N1 / n1; }
    std::int64_t pages2() const noexcept { return N2 / n2; }
    std::int64_t pages3() const noexcept { return N3 / n3; }
    std::int64_t page_elements() const noexcept { return n1 * n2 * n3; }
};

// Client for one array; a single activity object. Multiple Array clients over
// the same devices may run in parallel from separate activities.
class Array {
public:
    // Validates page divisibility, device geometry and capacity (one round of
    // metadata queries per device).
    Array(runtime::Client& client, ArraySpec spec);

    // Row-major (last index fastest) subarray with the extents of `d`.
    std::vector<double> read(const Domain& d);

    // Partially covered pages are read, modified and rewritten; fully covered
    // pages are written without a prior read.
    void write(const Domain& d, std::span<const double> subarray);

    // Device-side sums for pages fully inside `d`, client-side partial sums
    // for boundary pages, combined in ascending page rank order.
    double sum(const Domain& d);

    const ArraySpec& spec() const noexcept { return spec_; }

    // Metadata document: geometry, page extents, map variant, device list in
    // order, one key per line.
    std::string metadata() const;

private:
    struct PageBox {
        std::int64_t p1, p2, p3;
        PageAddress addr;
    };

    void check_domain(const Domain& d) const;
    std::vector<PageBox> pages_touching(const Domain& d) const;
    Domain page_box_domain(const PageBox& pb) const;

    runtime::Client& client_;
    ArraySpec spec_;
    PageMap map_;
};

// Resolves a "device addr <symbolic>" metadata line to a live ref.
using AddressResolver = std::function<runtime::RemoteRef(const std::string& address)>;

// Parses a metadata document back into a spec. Symbolic device lines need a
// resolver; without one they are a BadArgs error.
ArraySpec parse_metadata(const std::string& text, const AddressResolver& resolve = nullptr);

// Renders a spec where every device is listed by ref. For persistence-grade
// documents pass the devices' symbolic addresses instead.
std::string render_metadata(const ArraySpec& spec,
                            const std::vector<std::string>& device_addresses = {});

// Class "ArrayMeta": a hosted metadata document, so an array can be named by
// one ref (and persisted by one manifest entry).
void register_distarray_classes(runtime::ClassRegistry& reg);

// Convenience used by several drivers: spawn one ArrayPageDevice per entry of
// `machines` (round-robin over machines if fewer machines than devices).
std::vector<runtime::RemoteRef> spawn_devices(runtime::Client& client,
                                              const std::vector<std::uint32_t>& machines,
                                              std::size_t n_devices,
                                              const std::string& file_prefix,
                                              std::int64_t pages_per_device,
                                              std::int64_t n1, std::int64_t n2, std::int64_t n3);

} // namespace objproc::distarray
