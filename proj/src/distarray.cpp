#include "objproc/distarray.hpp"

#include <algorithm>
#include <sstream>

#include "objproc/argcheck.hpp"
#include "objproc/pagestore.hpp"

namespace objproc::distarray {

const char* page_map_kind_name(PageMapKind k) noexcept {
    return k == PageMapKind::Linear ? "linear" : "roundrobin";
}

std::optional<PageMapKind> parse_page_map_kind(const std::string& name) noexcept {
    if (name == "linear")
        return PageMapKind::Linear;
    if (name == "roundrobin")
        return PageMapKind::RoundRobin;
    return std::nullopt;
}

PageMap::PageMap(PageMapKind kind, std::int64_t pages1, std::int64_t pages2, std::int64_t pages3,
                 std::vector<std::int64_t> device_capacities)
    : kind_(kind), pages1_(pages1), pages2_(pages2), pages3_(pages3),
      caps_(std::move(device_capacities)) {
    if (pages1_ <= 0 || pages2_ <= 0 || pages3_ <= 0)
        raise(ErrorCode::BadArgs, "page grid extents must be positive");
    if (caps_.empty())
        raise(ErrorCode::BadArgs, "page map needs at least one device");
    prefix_.resize(caps_.size() + 1, 0);
    for (std::size_t d = 0; d < caps_.size(); ++d) {
        if (caps_[d] <= 0)
            raise(ErrorCode::BadArgs, "device capacity must be positive");
        prefix_[d + 1] = prefix_[d] + caps_[d];
    }

    const std::int64_t total = total_pages();
    if (kind_ == PageMapKind::Linear) {
        if (prefix_.back() < total)
            raise(ErrorCode::BadArgs, "devices hold " + std::to_string(prefix_.back()) +
                                          " pages, array needs " + std::to_string(total));
    } else {
        const auto devices = static_cast<std::int64_t>(caps_.size());
        for (std::int64_t d = 0; d < devices; ++d) {
            std::int64_t assigned = (total - d + devices - 1) / devices;
            if (d >= total)
                assigned = 0;
            if (assigned > caps_[static_cast<std::size_t>(d)])
                raise(ErrorCode::BadArgs, "device " + std::to_string(d) + " holds " +
                                              std::to_string(caps_[std::size_t(d)]) +
                                              " pages, round-robin assigns " +
                                              std::to_string(assigned));
        }
    }
}

std::int64_t PageMap::rank(std::int64_t p1, std::int64_t p2, std::int64_t p3) const {
    if (p1 < 0 || p1 >= pages1_ || p2 < 0 || p2 >= pages2_ || p3 < 0 || p3 >= pages3_)
        raise(ErrorCode::OutOfBounds, "page (" + std::to_string(p1) + "," + std::to_string(p2) +
                                          "," + std::to_string(p3) + ") outside page grid");
    return (p1 * pages2_ + p2) * pages3_ + p3;
}

PageAddress PageMap::lookup(std::int64_t p1, std::int64_t p2, std::int64_t p3) const {
    const std::int64_t r = rank(p1, p2, p3);
    if (kind_ == PageMapKind::RoundRobin) {
        const auto devices = static_cast<std::int64_t>(caps_.size());
        return PageAddress{static_cast<std::int32_t>(r % devices), r / devices};
    }
    auto it = std::upper_bound(prefix_.begin(), prefix_.end(), r);
    auto d = static_cast<std::size_t>(it - prefix_.begin()) - 1;
    return PageAddress{static_cast<std::int32_t>(d), r - prefix_[d]};
}

// ---------------------------------------------------------------------------
// Array client

Array::Array(runtime::Client& client, ArraySpec spec)
    : client_(client), spec_(std::move(spec)),
      map_(PageMapKind::Linear, 1, 1, 1, {1}) { // replaced below once validated
    if (spec_.N1 <= 0 || spec_.N2 <= 0 || spec_.N3 <= 0 || spec_.n1 <= 0 || spec_.n2 <= 0 ||
        spec_.n3 <= 0)
        raise(ErrorCode::BadArgs, "array and page extents must be positive");
    if (spec_.N1 % spec_.n1 || spec_.N2 % spec_.n2 || spec_.N3 % spec_.n3)
        raise(ErrorCode::BadArgs, "page extents must divide array extents");
    if (spec_.devices.empty())
        raise(ErrorCode::BadArgs, "array needs at least one device");

    std::vector<std::int64_t> caps;
    caps.reserve(spec_.devices.size());
    const std::int64_t want_bytes = spec_.page_elements() * 8;
    for (const auto& dev : spec_.devices) {
        auto page_size = client_.invoke(dev, "page_size", {}).as_int();
        if (page_size != want_bytes)
            raise(ErrorCode::BadArgs, "device page size " + std::to_string(page_size) +
                                          " does not match page block bytes " +
                                          std::to_string(want_bytes));
        caps.push_back(client_.invoke(dev, "num_pages", {}).as_int());
    }
    map_ = PageMap(spec_.map, spec_.pages1(), spec_.pages2(), spec_.pages3(), std::move(caps));
}

void Array::check_domain(const Domain& d) const {
    auto bad = [&](const char* axis) {
        raise(ErrorCode::OutOfBounds, std::string("domain outside array bounds on axis ") + axis);
    };
    if (d.lo1 < 0 || d.hi1 < d.lo1 || d.hi1 > spec_.N1)
        bad("1");
    if (d.lo2 < 0 || d.hi2 < d.lo2 || d.hi2 > spec_.N2)
        bad("2");
    if (d.lo3 < 0 || d.hi3 < d.lo3 || d.hi3 > spec_.N3)
        bad("3");
}

std::vector<Array::PageBox> Array::pages_touching(const Domain& d) const {
    std::vector<PageBox> boxes;
    if (d.empty())
        return boxes;
    const std::int64_t p1_lo = d.lo1 / spec_.n1, p1_hi = (d.hi1 - 1) / spec_.n1;
    const std::int64_t p2_lo = d.lo2 / spec_.n2, p2_hi = (d.hi2 - 1) / spec_.n2;
    const std::int64_t p3_lo = d.lo3 / spec_.n3, p3_hi = (d.hi3 - 1) / spec_.n3;
    for (std::int64_t p1 = p1_lo; p1 <= p1_hi; ++p1)
        for (std::int64_t p2 = p2_lo; p2 <= p2_hi; ++p2)
            for (std::int64_t p3 = p3_lo; p3 <= p3_hi; ++p3)
                boxes.push_back(PageBox{p1, p2, p3, map_.lookup(p1, p2, p3)});
    return boxes; // rank-ascending by construction
}

Domain Array::page_box_domain(const PageBox& pb) const {
    return Domain{pb.p1 * spec_.n1, (pb.p1 + 1) * spec_.n1, pb.p2 * spec_.n2,
                  (pb.p2 + 1) * spec_.n2, pb.p3 * spec_.n3, (pb.p3 + 1) * spec_.n3};
}

namespace {

Domain intersect(const Domain& a, const Domain& b) {
    return Domain{std::max(a.lo1, b.lo1), std::min(a.hi1, b.hi1),
                  std::max(a.lo2, b.lo2), std::min(a.hi2, b.hi2),
                  std::max(a.lo3, b.lo3), std::min(a.hi3, b.hi3)};
}

bool covers(const Domain& outer, const Domain& inner) {
    return outer.lo1 <= inner.lo1 && outer.hi1 >= inner.hi1 && outer.lo2 <= inner.lo2 &&
           outer.hi2 >= inner.hi2 && outer.lo3 <= inner.lo3 && outer.hi3 >= inner.hi3;
}

} // namespace

std::vector<double> Array::read(const Domain& d) {
    check_domain(d);
    std::vector<double> out(static_cast<std::size_t>(d.volume()));
    if (d.empty())
        return out;

    auto boxes = pages_touching(d);
    std::vector<parcall::Call> calls;
    calls.reserve(boxes.size());
    for (const auto& pb : boxes)
        calls.push_back({spec_.devices[static_cast<std::size_t>(pb.addr.device_id)], "read",
                         {wire::Value::integer(pb.addr.index)}});
    auto pages = parcall::batch_invoke(client_, calls);

    const std::int64_t d2 = d.extent2(), d3 = d.extent3();
    for (std::size_t k = 0; k < boxes.size(); ++k) {
        const auto& pb = boxes[k];
        const auto& bytes = pages[k].as_bytes();
        const Domain box = page_box_domain(pb);
        const Domain sect = intersect(box, d);
        for (std::int64_t i1 = sect.lo1; i1 < sect.hi1; ++i1)
            for (std::int64_t i2 = sect.lo2; i2 < sect.hi2; ++i2) {
                const std::int64_t in_row =
                    ((i1 - box.lo1) * spec_.n2 + (i2 - box.lo2)) * spec_.n3 + (sect.lo3 - box.lo3);
                const std::int64_t out_row =
                    ((i1 - d.lo1) * d2 + (i2 - d.lo2)) * d3 + (sect.lo3 - d.lo3);
                for (std::int64_t j = 0; j < sect.extent3(); ++j)
                    out[static_cast<std::size_t>(out_row + j)] =
                        pagestore::load_f64le(bytes.data() + (in_row + j) * 8);
            }
    }
    return out;
}

void Array::write(const Domain& d, std::span<const double> subarray) {
    check_domain(d);
    if (static_cast<std::int64_t>(subarray.size()) != d.volume())
        raise(ErrorCode::BadArgs, "subarray has " + std::to_string(subarray.size()) +
                                      " elements, domain volume is " +
                                      std::to_string(d.volume()));
    if (d.empty())
        return;

    auto boxes = pages_touching(d);

    // Fetch the boundary pages that keep elements outside `d`.
    std::vector<std::size_t> partial;
    std::vector<parcall::Call> reads;
    for (std::size_t k = 0; k < boxes.size(); ++k) {
        if (!covers(d, page_box_domain(boxes[k]))) {
            partial.push_back(k);
            reads.push_back({spec_.devices[static_cast<std::size_t>(boxes[k].addr.device_id)],
                             "read",
                             {wire::Value::integer(boxes[k].addr.index)}});
        }
    }
    auto fetched = parcall::batch_invoke(client_, reads);

    const std::size_t page_bytes = static_cast<std::size_t>(spec_.page_elements() * 8);
    std::vector<std::vector<std::uint8_t>> buffers(boxes.size());
    for (auto& b : buffers)
        b.resize(page_bytes);
    for (std::size_t i = 0; i < partial.size(); ++i)
        buffers[partial[i]] = fetched[i].as_bytes();

    // Splice the subarray in, then write every touched page back.
    const std::int64_t d2 = d.extent2(), d3 = d.extent3();
    std::vector<parcall::Call> writes;
    writes.reserve(boxes.size());
    for (std::size_t k = 0; k < boxes.size(); ++k) {
        const auto& pb = boxes[k];
        const Domain box = page_box_domain(pb);
        const Domain sect = intersect(box, d);
        auto& bytes = buffers[k];
        for (std::int64_t i1 = sect.lo1; i1 < sect.hi1; ++i1)
            for (std::int64_t i2 = sect.lo2; i2 < sect.hi2; ++i2) {
                const std::int64_t in_row =
                    ((i1 - box.lo1) * spec_.n2 + (i2 - box.lo2)) * spec_.n3 + (sect.lo3 - box.lo3);
                const std::int64_t src_row =
                    ((i1 - d.lo1) * d2 + (i2 - d.lo2)) * d3 + (sect.lo3 - d.lo3);
                for (std::int64_t j = 0; j < sect.extent3(); ++j)
                    pagestore::store_f64le(bytes.data() + (in_row + j) * 8,
                                           subarray[static_cast<std::size_t>(src_row + j)]);
            }
        writes.push_back({spec_.devices[static_cast<std::size_t>(pb.addr.device_id)], "write",
                          {wire::Value::bytes(std::move(bytes)), //
                           wire::Value::integer(pb.addr.index)}});
    }
    parcall::batch_invoke(client_, writes);
}

double Array::sum(const Domain& d) {
    check_domain(d);
    if (d.empty())
        return 0.0;

    auto boxes = pages_touching(d);
    std::vector<parcall::Call> calls;
    std::vector<bool> full(boxes.size());
    calls.reserve(boxes.size());
    for (std::size_t k = 0; k < boxes.size(); ++k) {
        const auto& pb = boxes[k];
        full[k] = covers(d, page_box_domain(pb));
        const auto& dev = spec_.devices[static_cast<std::size_t>(pb.addr.device_id)];
        calls.push_back({dev, full[k] ? "sum" : "read", {wire::Value::integer(pb.addr.index)}});
    }
    auto replies = parcall::batch_invoke(client_, calls);

    double total = 0.0;
    for (std::size_t k = 0; k < boxes.size(); ++k) {
        if (full[k]) {
            total += replies[k].as_float();
            continue;
        }
        const auto& bytes = replies[k].as_bytes();
        const Domain box = page_box_domain(boxes[k]);
        const Domain sect = intersect(box, d);
        double partial = 0.0;
        for (std::int64_t i1 = sect.lo1; i1 < sect.hi1; ++i1)
            for (std::int64_t i2 = sect.lo2; i2 < sect.hi2; ++i2) {
                const std::int64_t row =
                    ((i1 - box.lo1) * spec_.n2 + (i2 - box.lo2)) * spec_.n3 + (sect.lo3 - box.lo3);
                for (std::int64_t j = 0; j < sect.extent3(); ++j)
                    partial += pagestore::load_f64le(bytes.data() + (row + j) * 8);
            }
        total += partial;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Metadata document

std::string Array::metadata() const { return render_metadata(spec_); }

std::string render_metadata(const ArraySpec& spec,
                            const std::vector<std::string>& device_addresses) {
    std::ostringstream out;
    out << "objproc-array v1\n";
    out << "extent " << spec.N1 << ' ' << spec.N2 << ' ' << spec.N3 << '\n';
    out << "page " << spec.n1 << ' ' << spec.n2 << ' ' << spec.n3 << '\n';
    out << "map " << page_map_kind_name(spec.map) << '\n';
    if (!device_addresses.empty()) {
        if (device_addresses.size() != spec.devices.size())
            raise(ErrorCode::BadArgs, "device address list does not match device count");
        for (const auto& addr : device_addresses)
            out << "device addr " << addr << '\n';
    } else {
        for (const auto& dev : spec.devices)
            out << "device ref " << dev.machine_id << ' ' << dev.object_id << '\n';
    }
    return out.str();
}

ArraySpec parse_metadata(const std::string& text, const AddressResolver& resolve) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "objproc-array v1")
        raise(ErrorCode::BadArgs, "array metadata missing 'objproc-array v1' header");

    ArraySpec spec;
    bool have_extent = false, have_page = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "extent") {
            have_extent = bool(ls >> spec.N1 >> spec.N2 >> spec.N3);
        } else if (key == "page") {
            have_page = bool(ls >> spec.n1 >> spec.n2 >> spec.n3);
        } else if (key == "map") {
            std::string name;
            ls >> name;
            auto kind = parse_page_map_kind(name);
            if (!kind)
                raise(ErrorCode::BadArgs, "unknown page map variant: " + name);
            spec.map = *kind;
        } else if (key == "device") {
            std::string form;
            ls >> form;
            if (form == "ref") {
                runtime::RemoteRef ref;
                ref.class_name = "ArrayPageDevice";
                if (!(ls >> ref.machine_id >> ref.object_id))
                    raise(ErrorCode::BadArgs, "bad device ref line: " + line);
                spec.devices.push_back(std::move(ref));
            } else if (form == "addr") {
                std::string addr;
                ls >> addr;
                if (!resolve)
                    raise(ErrorCode::BadArgs,
                          "metadata names device by address but no resolver given: " + addr);
                spec.devices.push_back(resolve(addr));
            } else {
                raise(ErrorCode::BadArgs, "bad device line: " + line);
            }
        } else {
            raise(ErrorCode::BadArgs, "unknown metadata key: " + key);
        }
    }
    if (!have_extent || !have_page || spec.devices.empty())
        raise(ErrorCode::BadArgs, "array metadata incomplete");
    return spec;
}

// ---------------------------------------------------------------------------
// Hosted metadata class

namespace {

class ArrayMeta final : public runtime::Instance {
public:
    explicit ArrayMeta(std::string text) : text_(std::move(text)) {
        parse_metadata(text_, [](const std::string&) {
            // Presence of symbolic devices is fine here; only resolution needs
            // a manifest. Validate shape only.
            return runtime::RemoteRef{};
        });
    }

    const std::string& text() const noexcept { return text_; }

private:
    std::string text_;
};

} // namespace

void register_distarray_classes(runtime::ClassRegistry& reg) {
    runtime::ClassDef def;
    def.ctor = [](runtime::InvokeContext&, const wire::Value::List& args) {
        expect_args(args, 1, "ArrayMeta(text)");
        return std::make_unique<ArrayMeta>(args[0].as_str());
    };
    def.methods["text"] = [](runtime::Instance& obj, runtime::InvokeContext&,
                             const wire::Value::List& args) {
        expect_args(args, 0, "text()");
        auto* meta = dynamic_cast<ArrayMeta*>(&obj);
        if (!meta)
            raise(ErrorCode::Internal, "instance class mismatch");
        return wire::Value::str(meta->text());
    };
    def.methods["persist_spec"] = [](runtime::Instance& obj, runtime::InvokeContext&,
                                     const wire::Value::List& args) {
        expect_args(args, 0, "persist_spec()");
        auto* meta = dynamic_cast<ArrayMeta*>(&obj);
        if (!meta)
            raise(ErrorCode::Internal, "instance class mismatch");
        return wire::Value::list({wire::Value::str(meta->text())});
    };
    reg.register_class("ArrayMeta", std::move(def));
}

std::vector<runtime::RemoteRef> spawn_devices(runtime::Client& client,
                                              const std::vector<std::uint32_t>& machines,
                                              std::size_t n_devices,
                                              const std::string& file_prefix,
                                              std::int64_t pages_per_device, std::int64_t n1,
                                              std::int64_t n2, std::int64_t n3) {
    if (machines.empty())
        raise(ErrorCode::BadArgs, "need at least one machine for devices");
    std::vector<runtime::RemoteRef> devices;
    devices.reserve(n_devices);
    for (std::size_t i = 0; i < n_devices; ++i) {
        auto machine = machines[i % machines.size()];
        devices.push_back(client.spawn(machine, "ArrayPageDevice",
                                       {wire::Value::str(file_prefix + std::to_string(i)),
                                        wire::Value::integer(pages_per_device),
                                        wire::Value::integer(n1), wire::Value::integer(n2),
                                        wire::Value::integer(n3)}));
    }
    return devices;
}

} // namespace objproc::distarray
