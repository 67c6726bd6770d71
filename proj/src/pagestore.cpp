#include "objproc/pagestore.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstring>

#include "objproc/argcheck.hpp"

namespace objproc::pagestore {

namespace {

[[noreturn]] void device_errno(const std::string& what) {
    raise(ErrorCode::DeviceError, what + ": " + std::strerror(errno));
}

} // namespace

double load_f64le(const std::uint8_t* p) noexcept {
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i)
        u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(u);
}

void store_f64le(std::uint8_t* p, double v) noexcept {
    auto u = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i)
        p[i] = static_cast<std::uint8_t>(u >> (8 * i));
}

PageDevice::PageDevice(std::string filename, std::int64_t num_pages, std::int64_t page_size,
                       bool must_exist)
    : filename_(std::move(filename)), num_pages_(num_pages), page_size_(page_size) {
    if (num_pages_ <= 0 || page_size_ <= 0)
        raise(ErrorCode::BadArgs, "page device needs positive page count and page size");
    const std::int64_t total = num_pages_ * page_size_;

    struct stat st{};
    bool exists = ::stat(filename_.c_str(), &st) == 0;
    if (!exists && must_exist)
        raise(ErrorCode::DeviceError, "backing file " + filename_ + " does not exist");
    if (exists && st.st_size != total)
        raise(ErrorCode::DeviceError, "existing file " + filename_ + " has size " +
                                          std::to_string(st.st_size) + ", expected " +
                                          std::to_string(total));

    fd_ = ::open(filename_.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0)
        device_errno("open " + filename_);
    if (!exists && ::ftruncate(fd_, total) != 0) {
        int e = errno;
        ::close(fd_);
        fd_ = -1;
        errno = e;
        device_errno("truncate " + filename_);
    }
}

PageDevice::~PageDevice() {
    // Closing the handle leaves the file contents on disk.
    if (fd_ >= 0)
        ::close(fd_);
}

void PageDevice::check_index(std::int64_t index) const {
    if (index < 0 || index >= num_pages_)
        raise(ErrorCode::OutOfBounds, "page index " + std::to_string(index) +
                                          " outside device of " + std::to_string(num_pages_) +
                                          " pages");
}

void PageDevice::write_page(std::int64_t index, std::span<const std::uint8_t> page) {
    check_index(index);
    if (static_cast<std::int64_t>(page.size()) != page_size_)
        raise(ErrorCode::BadArgs, "page has " + std::to_string(page.size()) +
                                      " bytes, device page size is " +
                                      std::to_string(page_size_));
    std::size_t done = 0;
    while (done < page.size()) {
        ssize_t n = ::pwrite(fd_, page.data() + done, page.size() - done,
                             static_cast<off_t>(index * page_size_ + std::int64_t(done)));
        if (n < 0) {
            if (errno == EINTR)
                continue;
            device_errno("write " + filename_);
        }
        done += static_cast<std::size_t>(n);
    }
}

std::vector<std::uint8_t> PageDevice::read_page(std::int64_t index) const {
    check_index(index);
    std::vector<std::uint8_t> page(static_cast<std::size_t>(page_size_));
    std::size_t done = 0;
    while (done < page.size()) {
        ssize_t n = ::pread(fd_, page.data() + done, page.size() - done,
                            static_cast<off_t>(index * page_size_ + std::int64_t(done)));
        if (n < 0) {
            if (errno == EINTR)
                continue;
            device_errno("read " + filename_);
        }
        if (n == 0)
            raise(ErrorCode::DeviceError, "short read from " + filename_);
        done += static_cast<std::size_t>(n);
    }
    return page;
}

ArrayPageDevice::ArrayPageDevice(std::string filename, std::int64_t num_pages, PageGeometry geom,
                                 bool must_exist)
    : PageDevice(std::move(filename), num_pages, geom.byte_size(), must_exist), geom_(geom) {}

double ArrayPageDevice::sum_page(std::int64_t index) const {
    auto page = read_page(index);
    return array_page_sum(page, geom_);
}

double array_page_sum(std::span<const std::uint8_t> page, const PageGeometry& geom) {
    if (geom.n1 <= 0 || geom.n2 <= 0 || geom.n3 <= 0)
        raise(ErrorCode::BadArgs, "page geometry must be positive");
    if (static_cast<std::int64_t>(page.size()) != geom.byte_size())
        raise(ErrorCode::BadArgs, "page has " + std::to_string(page.size()) +
                                      " bytes, geometry wants " +
                                      std::to_string(geom.byte_size()));
    double total = 0.0;
    const std::int64_t n = geom.elements();
    for (std::int64_t i = 0; i < n; ++i)
        total += load_f64le(page.data() + i * 8);
    return total;
}

// ---------------------------------------------------------------------------
// Wire-facing class registration

namespace {

template <class T> T& self(runtime::Instance& obj) {
    auto* p = dynamic_cast<T*>(&obj);
    if (!p)
        raise(ErrorCode::Internal, "instance class mismatch");
    return *p;
}

PageGeometry geom_from_args(const wire::Value& a, const wire::Value& b, const wire::Value& c) {
    return PageGeometry{positive_int(a, "n1"), positive_int(b, "n2"), positive_int(c, "n3")};
}

void add_page_device_methods(runtime::ClassDef& def) {
    using runtime::Instance;
    using runtime::InvokeContext;
    def.methods["write"] = [](Instance& obj, InvokeContext&, const wire::Value::List& args) {
        expect_args(args, 2, "write(page, index)");
        self<PageDevice>(obj).write_page(args[1].as_int(), args[0].as_bytes());
        return wire::Value::unit();
    };
    def.methods["read"] = [](Instance& obj, InvokeContext&, const wire::Value::List& args) {
        expect_args(args, 1, "read(index)");
        return wire::Value::bytes(self<PageDevice>(obj).read_page(args[0].as_int()));
    };
    def.methods["num_pages"] = [](Instance& obj, InvokeContext&, const wire::Value::List& args) {
        expect_args(args, 0, "num_pages()");
        return wire::Value::integer(self<PageDevice>(obj).num_pages());
    };
    def.methods["page_size"] = [](Instance& obj, InvokeContext&, const wire::Value::List& args) {
        expect_args(args, 0, "page_size()");
        return wire::Value::integer(self<PageDevice>(obj).page_size());
    };
    def.methods["filename"] = [](Instance& obj, InvokeContext&, const wire::Value::List& args) {
        expect_args(args, 0, "filename()");
        return wire::Value::str(self<PageDevice>(obj).filename());
    };
}

} // namespace

void register_pagestore_classes(runtime::ClassRegistry& reg) {
    using runtime::Instance;
    using runtime::InvokeContext;
    {
        runtime::ClassDef def;
        // Optional trailing flag: nonzero means adopt-only (used when
        // reattaching persisted devices).
        def.ctor = [](InvokeContext&, const wire::Value::List& args) {
            if (args.size() != 3 && args.size() != 4)
                raise(ErrorCode::BadArgs,
                      "PageDevice wants (filename, num_pages, page_size[, must_exist])");
            bool must_exist = args.size() == 4 && args[3].as_int() != 0;
            return std::make_unique<PageDevice>(args[0].as_str(),
                                                positive_int(args[1], "num_pages"),
                                                positive_int(args[2], "page_size"), must_exist);
        };
        add_page_device_methods(def);
        def.methods["persist_spec"] = [](Instance& obj, InvokeContext&,
                                         const wire::Value::List& args) {
            expect_args(args, 0, "persist_spec()");
            auto& dev = self<PageDevice>(obj);
            return wire::Value::list(
                {wire::Value::str(dev.filename()), wire::Value::integer(dev.num_pages()),
                 wire::Value::integer(dev.page_size()), wire::Value::integer(1)});
        };
        reg.register_class("PageDevice", std::move(def));
    }
    {
        runtime::ClassDef def;
        // Constructor forms:
        //   (filename, num_pages, n1, n2, n3[, must_exist])   fresh or adopted file
        //   (page_device_ref, n1, n2, n3)                     wrap an existing device
        def.ctor = [](InvokeContext& ctx, const wire::Value::List& args) {
            if ((args.size() == 5 || args.size() == 6) &&
                args[0].kind() == wire::Value::Kind::Str) {
                bool must_exist = args.size() == 6 && args[5].as_int() != 0;
                return std::make_unique<ArrayPageDevice>(
                    args[0].as_str(), positive_int(args[1], "num_pages"),
                    geom_from_args(args[2], args[3], args[4]), must_exist);
            }
            if (args.size() == 4 && args[0].kind() == wire::Value::Kind::Ref) {
                wire::Ref r = args[0].as_ref();
                runtime::RemoteRef existing{r.machine_id, r.object_id, "PageDevice"};
                PageGeometry geom = geom_from_args(args[1], args[2], args[3]);
                auto page_size = ctx.client.invoke(existing, "page_size", {}).as_int();
                if (page_size != geom.byte_size())
                    raise(ErrorCode::BadArgs,
                          "existing device page size " + std::to_string(page_size) +
                              " does not match geometry bytes " +
                              std::to_string(geom.byte_size()));
                auto filename = ctx.client.invoke(existing, "filename", {}).as_str();
                auto num_pages = ctx.client.invoke(existing, "num_pages", {}).as_int();
                return std::make_unique<ArrayPageDevice>(filename, num_pages, geom);
            }
            raise(ErrorCode::BadArgs,
                  "ArrayPageDevice wants (filename, num_pages, n1, n2, n3[, must_exist]) "
                  "or (page_device, n1, n2, n3)");
        };
        add_page_device_methods(def);
        def.methods["sum"] = [](Instance& obj, InvokeContext&, const wire::Value::List& args) {
            expect_args(args, 1, "sum(index)");
            return wire::Value::real(self<ArrayPageDevice>(obj).sum_page(args[0].as_int()));
        };
        def.methods["geometry"] = [](Instance& obj, InvokeContext&,
                                     const wire::Value::List& args) {
            expect_args(args, 0, "geometry()");
            auto g = self<ArrayPageDevice>(obj).geometry();
            return wire::Value::list({wire::Value::integer(g.n1), wire::Value::integer(g.n2),
                                      wire::Value::integer(g.n3)});
        };
        def.methods["persist_spec"] = [](Instance& obj, InvokeContext&,
                                         const wire::Value::List& args) {
            expect_args(args, 0, "persist_spec()");
            auto& dev = self<ArrayPageDevice>(obj);
            auto g = dev.geometry();
            return wire::Value::list(
                {wire::Value::str(dev.filename()), wire::Value::integer(dev.num_pages()),
                 wire::Value::integer(g.n1), wire::Value::integer(g.n2),
                 wire::Value::integer(g.n3), wire::Value::integer(1)});
        };
        reg.register_class("ArrayPageDevice", std::move(def));
    }
}

} // namespace objproc::pagestore
