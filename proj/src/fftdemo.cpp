#include "objproc/fftdemo.hpp"

#include <numbers>

#include "objproc/argcheck.hpp"
#include "objproc/parcall.hpp"

namespace objproc::fftdemo {

namespace {

bool is_pow2(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

void check_sign(int sign) {
    if (sign != 1 && sign != -1)
        raise(ErrorCode::BadArgs, "transform sign must be +1 or -1");
}

} // namespace

void fft1d(int sign, std::span<Complex> v) {
    check_sign(sign);
    const std::size_t n = v.size();
    if (!is_pow2(static_cast<std::int64_t>(n)))
        raise(ErrorCode::BadArgs, "fft length must be a power of two, got " + std::to_string(n));
    if (n == 1)
        return;

    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1)
            j ^= bit;
        j ^= bit;
        if (i < j)
            std::swap(v[i], v[j]);
    }

    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
        const Complex wlen = std::polar(1.0, ang);
        for (std::size_t i = 0; i < n; i += len) {
            Complex w{1.0, 0.0};
            for (std::size_t j = 0; j < len / 2; ++j) {
                Complex u = v[i + j];
                Complex t = v[i + j + len / 2] * w;
                v[i + j] = u + t;
                v[i + j + len / 2] = u - t;
                w *= wlen;
            }
        }
    }
}

std::vector<Complex> dft1d_oracle(int sign, std::span<const Complex> v) {
    check_sign(sign);
    const std::size_t n = v.size();
    std::vector<Complex> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        Complex acc{0.0, 0.0};
        for (std::size_t j = 0; j < n; ++j) {
            double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(j) *
                         static_cast<double>(k) / static_cast<double>(n);
            acc += v[j] * std::polar(1.0, ang);
        }
        out[k] = acc;
    }
    return out;
}

GridSpec grid_from_array(const distarray::ArraySpec& spec) {
    if (spec.N1 % 2 != 0)
        raise(ErrorCode::BadArgs, "complex grid array needs an even first extent");
    GridSpec g{spec.N1 / 2, spec.N2, spec.N3};
    if (!is_pow2(g.n1) || !is_pow2(g.n2) || !is_pow2(g.n3))
        raise(ErrorCode::BadArgs, "complex grid extents must be powers of two");
    if (g.n1 % spec.n1 != 0)
        raise(ErrorCode::BadArgs,
              "page extent must divide the complex extent on axis 1 (plane boundary)");
    return g;
}

std::vector<double> complex_to_planes(std::span<const Complex> grid, const GridSpec& g) {
    const auto n = static_cast<std::size_t>(g.elements());
    if (grid.size() != n)
        raise(ErrorCode::BadArgs, "grid size does not match the array extents");
    std::vector<double> planes(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        planes[i] = grid[i].real();
        planes[n + i] = grid[i].imag();
    }
    return planes;
}

std::vector<Complex> planes_to_complex(std::span<const double> planes, const GridSpec& g) {
    const auto n = static_cast<std::size_t>(g.elements());
    if (planes.size() != 2 * n)
        raise(ErrorCode::BadArgs, "plane data size does not match the array extents");
    std::vector<Complex> grid(n);
    for (std::size_t i = 0; i < n; ++i)
        grid[i] = Complex{planes[i], planes[n + i]};
    return grid;
}

void write_complex_grid(distarray::Array& array, std::span<const Complex> grid) {
    GridSpec g = grid_from_array(array.spec());
    auto planes = complex_to_planes(grid, g);
    array.write(distarray::Domain{0, 2 * g.n1, 0, g.n2, 0, g.n3}, planes);
}

std::vector<Complex> read_complex_grid(distarray::Array& array) {
    GridSpec g = grid_from_array(array.spec());
    auto planes = array.read(distarray::Domain{0, 2 * g.n1, 0, g.n2, 0, g.n3});
    return planes_to_complex(planes, g);
}

// ---------------------------------------------------------------------------
// Line partition
//
// A pass over one axis transforms every 1D line along it. Lines are assigned
// to workers in bundles that share page footprints, so two workers never
// read-modify-write the same page within a pass (partial-page writes are
// client-side read-modify-write; interleaving per line would lose updates
// under real concurrency).

namespace {

struct PassPlan {
    // Orthogonal axes' extents in complex space and their page extents.
    std::int64_t extent_a, page_a; // slower orthogonal axis
    std::int64_t extent_b, page_b; // faster orthogonal axis

    std::int64_t footprints() const {
        return (extent_a / page_a) * (extent_b / page_b);
    }
};

PassPlan pass_plan(const distarray::ArraySpec& spec, const GridSpec& g, int axis) {
    switch (axis) {
    case 3: return PassPlan{g.n1, spec.n1, g.n2, spec.n2}; // lines (i1, i2, *)
    case 2: return PassPlan{g.n1, spec.n1, g.n3, spec.n3}; // lines (i1, *, i3)
    case 1: return PassPlan{g.n2, spec.n2, g.n3, spec.n3}; // lines (*, i2, i3)
    default: raise(ErrorCode::BadArgs, "axis must be 1, 2 or 3");
    }
}

distarray::Domain line_domain(const GridSpec& g, int axis, bool imag, std::int64_t a,
                              std::int64_t b) {
    const std::int64_t off = imag ? g.n1 : 0;
    switch (axis) {
    case 3: return {off + a, off + a + 1, b, b + 1, 0, g.n3};
    case 2: return {off + a, off + a + 1, 0, g.n2, b, b + 1};
    default: return {off, off + g.n1, a, a + 1, b, b + 1};
    }
}

// Calls fn(a, b) for every line of the pass owned by `worker` of `n_workers`.
template <class Fn>
void for_owned_lines(const distarray::ArraySpec& spec, const GridSpec& g, int axis, int worker,
                     int n_workers, Fn&& fn) {
    const PassPlan plan = pass_plan(spec, g, axis);
    const std::int64_t fps_b = plan.extent_b / plan.page_b;
    for (std::int64_t fa = 0; fa < plan.extent_a / plan.page_a; ++fa)
        for (std::int64_t fb = 0; fb < fps_b; ++fb) {
            if ((fa * fps_b + fb) % n_workers != worker)
                continue;
            for (std::int64_t a = fa * plan.page_a; a < (fa + 1) * plan.page_a; ++a)
                for (std::int64_t b = fb * plan.page_b; b < (fb + 1) * plan.page_b; ++b)
                    fn(a, b);
        }
}

class FftWorker final : public runtime::Instance {
public:
    explicit FftWorker(std::int64_t id) : id_(id) {
        if (id_ < 0)
            raise(ErrorCode::BadArgs, "worker id must be >= 0");
    }

    void set_group(runtime::InvokeContext& ctx, std::int64_t n, wire::Ref holder) {
        if (id_ >= n)
            raise(ErrorCode::BadArgs, "worker id " + std::to_string(id_) +
                                          " outside group of " + std::to_string(n));
        runtime::RemoteRef holder_ref{holder.machine_id, holder.object_id, ""};
        auto members = parcall::deep_copy_group(ctx.client, holder_ref);
        if (static_cast<std::int64_t>(members.size()) != n)
            raise(ErrorCode::BadArgs, "published group has " + std::to_string(members.size()) +
                                          " members, expected " + std::to_string(n));
        if (members[static_cast<std::size_t>(id_)].wire() != ctx.self)
            raise(ErrorCode::BadArgs, "group slot does not address this worker");
        group_.clear();
        for (const auto& m : members)
            group_.push_back(m.wire());
    }

    const std::vector<wire::Ref>& group() const noexcept { return group_; }

    std::int64_t transform_pass(runtime::InvokeContext& ctx, int sign, int axis,
                                const runtime::RemoteRef& meta, bool normalize) {
        check_sign(sign);
        auto array = open_array(ctx, meta);
        const GridSpec g = grid_from_array(array.spec());
        const double scale = normalize ? 1.0 / static_cast<double>(g.elements()) : 1.0;

        std::int64_t lines = 0;
        for_owned_lines(array.spec(), g, axis, static_cast<int>(id_),
                        static_cast<int>(group_.size()), [&](std::int64_t a, std::int64_t b) {
                            auto re = array.read(line_domain(g, axis, false, a, b));
                            auto im = array.read(line_domain(g, axis, true, a, b));
                            std::vector<Complex> line(re.size());
                            for (std::size_t i = 0; i < re.size(); ++i)
                                line[i] = Complex{re[i], im[i]};
                            fft1d(sign, line);
                            for (std::size_t i = 0; i < re.size(); ++i) {
                                re[i] = line[i].real() * scale;
                                im[i] = line[i].imag() * scale;
                            }
                            array.write(line_domain(g, axis, false, a, b), re);
                            array.write(line_domain(g, axis, true, a, b), im);
                            ++lines;
                        });
        return lines;
    }

    std::int64_t mark_lines(runtime::InvokeContext& ctx, int axis,
                            const runtime::RemoteRef& meta) {
        auto array = open_array(ctx, meta);
        const GridSpec g = grid_from_array(array.spec());
        std::int64_t lines = 0;
        for_owned_lines(array.spec(), g, axis, static_cast<int>(id_),
                        static_cast<int>(group_.size()), [&](std::int64_t a, std::int64_t b) {
                            for (bool imag : {false, true}) {
                                auto d = line_domain(g, axis, imag, a, b);
                                auto vals = array.read(d);
                                for (auto& v : vals)
                                    v += 1.0;
                                array.write(d, vals);
                            }
                            ++lines;
                        });
        return lines;
    }

    // Round trip to a peer through this worker's own copy of the group list.
    // Pinging yourself would wait on your own running method; skip it.
    void ping_peer(runtime::InvokeContext& ctx, std::int64_t i) {
        if (i < 0 || i >= static_cast<std::int64_t>(group_.size()))
            raise(ErrorCode::OutOfBounds, "no group member " + std::to_string(i));
        if (i == id_)
            return;
        const wire::Ref peer = group_[static_cast<std::size_t>(i)];
        runtime::RemoteRef ref{peer.machine_id, peer.object_id, ""};
        ctx.client.invoke(ref, "__fence", {});
    }

    std::int64_t id() const noexcept { return id_; }

private:
    distarray::Array open_array(runtime::InvokeContext& ctx, const runtime::RemoteRef& meta) {
        if (group_.empty())
            raise(ErrorCode::BadArgs, "worker has no group; call set_group first");
        auto text = ctx.client.invoke(meta, "text", {}).as_str();
        return distarray::Array(ctx.client, distarray::parse_metadata(text));
    }

    std::int64_t id_;
    std::vector<wire::Ref> group_;
};

template <class T> T& self(runtime::Instance& obj) {
    auto* p = dynamic_cast<T*>(&obj);
    if (!p)
        raise(ErrorCode::Internal, "instance class mismatch");
    return *p;
}

runtime::RemoteRef meta_arg(const wire::Value& v) {
    wire::Ref r = v.as_ref();
    return runtime::RemoteRef{r.machine_id, r.object_id, "ArrayMeta"};
}

} // namespace

void register_fftdemo_classes(runtime::ClassRegistry& reg) {
    using runtime::Instance;
    using runtime::InvokeContext;
    runtime::ClassDef def;
    def.ctor = [](InvokeContext&, const wire::Value::List& args) {
        expect_args(args, 1, "FftWorker(id)");
        return std::make_unique<FftWorker>(args[0].as_int());
    };
    def.methods["set_group"] = [](Instance& obj, InvokeContext& ctx,
                                  const wire::Value::List& args) {
        expect_args(args, 2, "set_group(n, holder)");
        self<FftWorker>(obj).set_group(ctx, positive_int(args[0], "n"), args[1].as_ref());
        return wire::Value::unit();
    };
    def.methods["get_group"] = [](Instance& obj, InvokeContext&, const wire::Value::List& args) {
        expect_args(args, 0, "get_group()");
        wire::Value::List out;
        for (const auto& r : self<FftWorker>(obj).group())
            out.push_back(wire::Value::ref(r));
        return wire::Value::list(std::move(out));
    };
    def.methods["transform_pass"] = [](Instance& obj, InvokeContext& ctx,
                                       const wire::Value::List& args) {
        expect_args(args, 4, "transform_pass(sign, axis, meta, normalize)");
        auto lines = self<FftWorker>(obj).transform_pass(
            ctx, static_cast<int>(args[0].as_int()), static_cast<int>(args[1].as_int()),
            meta_arg(args[2]), args[3].as_int() != 0);
        return wire::Value::integer(lines);
    };
    def.methods["mark_lines"] = [](Instance& obj, InvokeContext& ctx,
                                   const wire::Value::List& args) {
        expect_args(args, 2, "mark_lines(axis, meta)");
        auto lines = self<FftWorker>(obj).mark_lines(ctx, static_cast<int>(args[0].as_int()),
                                                     meta_arg(args[1]));
        return wire::Value::integer(lines);
    };
    def.methods["ping_peer"] = [](Instance& obj, InvokeContext& ctx,
                                  const wire::Value::List& args) {
        expect_args(args, 1, "ping_peer(i)");
        self<FftWorker>(obj).ping_peer(ctx, args[0].as_int());
        return wire::Value::unit();
    };
    reg.register_class("FftWorker", std::move(def));
}

// ---------------------------------------------------------------------------
// Master-side group driver

FftGroup FftGroup::create(runtime::Client& client, const std::vector<std::uint32_t>& machines,
                          int n_workers) {
    if (machines.empty() || n_workers < 1)
        raise(ErrorCode::BadArgs, "need at least one machine and one worker");
    std::vector<runtime::RemoteRef> members;
    members.reserve(static_cast<std::size_t>(n_workers));
    for (int id = 0; id < n_workers; ++id)
        members.push_back(client.spawn(machines[static_cast<std::size_t>(id) % machines.size()],
                                       "FftWorker", {wire::Value::integer(id)}));

    // Publish the group, let every member deep-copy it, then retire the
    // holder; the copies are self-sufficient.
    wire::Value::List refs;
    for (const auto& m : members)
        refs.push_back(wire::Value::ref(m.wire()));
    auto holder = client.spawn(0, "RefList", {wire::Value::list(std::move(refs))});

    std::vector<parcall::Call> calls;
    for (const auto& m : members)
        calls.push_back({m, "set_group",
                         {wire::Value::integer(n_workers), wire::Value::ref(holder.wire())}});
    parcall::batch_invoke(client, calls);
    client.destroy(holder);

    return FftGroup(client, std::move(members));
}

void FftGroup::transform(int sign, const runtime::RemoteRef& meta) {
    check_sign(sign);
    auto text = client_->invoke(meta, "text", {}).as_str();
    auto spec = distarray::parse_metadata(text);
    const GridSpec g = grid_from_array(spec);
    const auto n = static_cast<std::int64_t>(members_.size());
    for (int axis : {3, 2, 1})
        if (pass_plan(spec, g, axis).footprints() % n != 0)
            raise(ErrorCode::BadArgs, "group size " + std::to_string(n) +
                                          " does not divide the line bundles of axis " +
                                          std::to_string(axis));

    for (int axis : {3, 2, 1}) {
        const bool normalize = sign > 0 && axis == 1;
        std::vector<parcall::Call> calls;
        for (const auto& m : members_)
            calls.push_back({m, "transform_pass",
                             {wire::Value::integer(sign), wire::Value::integer(axis),
                              wire::Value::ref(meta.wire()),
                              wire::Value::integer(normalize ? 1 : 0)}});
        parcall::batch_invoke(*client_, calls);
        parcall::barrier(*client_, members_);
    }
}

std::vector<std::vector<wire::Ref>> FftGroup::probe_groups() {
    std::vector<parcall::Call> calls;
    for (const auto& m : members_)
        calls.push_back({m, "get_group", {}});
    auto replies = parcall::batch_invoke(*client_, calls);
    std::vector<std::vector<wire::Ref>> groups;
    for (const auto& r : replies) {
        std::vector<wire::Ref> g;
        for (const auto& v : r.as_list())
            g.push_back(v.as_ref());
        groups.push_back(std::move(g));
    }
    return groups;
}

void FftGroup::mark_lines(int axis, const runtime::RemoteRef& meta) {
    std::vector<parcall::Call> calls;
    for (const auto& m : members_)
        calls.push_back(
            {m, "mark_lines", {wire::Value::integer(axis), wire::Value::ref(meta.wire())}});
    parcall::batch_invoke(*client_, calls);
    parcall::barrier(*client_, members_);
}

void FftGroup::destroy() {
    for (const auto& m : members_)
        client_->destroy(m);
    members_.clear();
}

} // namespace objproc::fftdemo
