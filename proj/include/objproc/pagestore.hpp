#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "objproc/runtime.hpp"

// Fixed-size byte pages in a file-backed device, plus the derived device that
// treats each page as an n1 x n2 x n3 block of doubles and can sum a page
// in place (returning one scalar instead of shipping the page).

namespace objproc::pagestore {

// Backing file format: exactly num_pages * page_size raw bytes, page i at
// offset i * page_size, no header. Fresh files read as zeroes. An existing
// file of the right size is adopted; a wrong size is a DeviceError. With
// must_exist the constructor only adopts (reattachment must never fabricate
// an empty store).
class PageDevice : public runtime::Instance {
public:
    PageDevice(std::string filename, std::int64_t num_pages, std::int64_t page_size,
               bool must_exist = false);
    ~PageDevice() override;

    PageDevice(const PageDevice&) = delete;
    PageDevice& operator=(const PageDevice&) = delete;

    // Visible to any out-of-band reader once the call returns.
    void write_page(std::int64_t index, std::span<const std::uint8_t> page);
    std::vector<std::uint8_t> read_page(std::int64_t index) const;

    const std::string& filename() const noexcept { return filename_; }
    std::int64_t num_pages() const noexcept { return num_pages_; }
    std::int64_t page_size() const noexcept { return page_size_; }

private:
    void check_index(std::int64_t index) const;

    std::string filename_;
    std::int64_t num_pages_;
    std::int64_t page_size_;
    int fd_ = -1;
};

struct PageGeometry {
    std::int64_t n1 = 0;
    std::int64_t n2 = 0;
    std::int64_t n3 = 0;

    std::int64_t elements() const noexcept { return n1 * n2 * n3; }
    std::int64_t byte_size() const noexcept { return elements() * 8; }
};

class ArrayPageDevice final : public PageDevice {
public:
    ArrayPageDevice(std::string filename, std::int64_t num_pages, PageGeometry geom,
                    bool must_exist = false);

    double sum_page(std::int64_t index) const;
    PageGeometry geometry() const noexcept { return geom_; }

private:
    PageGeometry geom_;
};

// Sum of all little-endian doubles in one page, accumulated in index order
// with the last axis fastest. The device-side sum and a client-side sum over
// a fetched page agree bit-for-bit.
double array_page_sum(std::span<const std::uint8_t> page, const PageGeometry& geom);

// Little-endian double packing shared by the array modules.
double load_f64le(const std::uint8_t* p) noexcept;
void store_f64le(std::uint8_t* p, double v) noexcept;

// Classes "PageDevice" and "ArrayPageDevice".
void register_pagestore_classes(runtime::ClassRegistry& reg);

} // namespace objproc::pagestore
