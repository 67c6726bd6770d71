#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cinttypes>
#include <complex>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "objproc/distarray.hpp"
#include "objproc/fftdemo.hpp"
#include "objproc/pagestore.hpp"
#include "objproc/parcall.hpp"
#include "objproc/persist.hpp"
#include "objproc/runtime.hpp"

#include "cli_cluster.hpp"

namespace {

using namespace objproc;

// SplitMix64; deterministic demo inputs for a given --seed.
struct DemoRng {
    std::uint64_t state;

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    double real() { // in [-1, 1)
        return static_cast<double>(next() >> 11) / static_cast<double>(1ull << 52) - 1.0;
    }

    std::uint8_t byte() { return static_cast<std::uint8_t>(next() & 0xFF); }
};

struct CommonOpts {
    std::size_t machines = 2;
    std::string transport = "sim";
    double latency_ms = 0.0;
    std::uint64_t seed = 1;
    std::string workdir;
    std::string output = "kv";
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--machines", o.machines, "cluster size including the master");
    cmd->add_option("--transport", o.transport, "sim or socket")
        ->check(CLI::IsMember({"sim", "socket"}));
    cmd->add_option("--latency-ms", o.latency_ms, "simulated one-way latency (sim only)");
    cmd->add_option("--seed", o.seed, "seed for generated demo data");
    cmd->add_option("--workdir", o.workdir, "directory for demo files (default: a temp dir)");
    cmd->add_option("--output", o.output, "kv or human")->check(CLI::IsMember({"kv", "human"}));
}

std::filesystem::path ensure_workdir(const CommonOpts& o) {
    if (!o.workdir.empty()) {
        std::filesystem::create_directories(o.workdir);
        return std::filesystem::absolute(o.workdir);
    }
    std::string tmpl = (std::filesystem::temp_directory_path() / "objproc-XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!::mkdtemp(buf.data()))
        throw std::runtime_error("mkdtemp failed");
    return std::filesystem::path(buf.data());
}

int fail(const std::string& kv) {
    std::printf("FAIL %s\n", kv.c_str());
    return 1;
}

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

// ---------------------------------------------------------------------------
// demo pagestore: write/read roundtrip on a page device, byte-level file
// check, out-of-range rejection, and the remote-sum vs local-sum comparison.

int demo_pagestore(const CommonOpts& o, std::int64_t pages, std::int64_t page_bytes) {
    auto workdir = ensure_workdir(o);
    cli::ClusterHandle handle(o.transport, o.machines, o.latency_ms, workdir,
                              runtime::standard_classes());
    auto client = handle.client();
    auto target = cli::object_machines(o.machines)[0];

    auto dev = client.spawn(target, "PageDevice",
                            {wire::Value::str((workdir / "pagefile").string()),
                             wire::Value::integer(pages), wire::Value::integer(page_bytes)});

    DemoRng rng{o.seed};
    std::vector<std::vector<std::uint8_t>> written;
    for (std::int64_t i = 0; i < pages; ++i) {
        std::vector<std::uint8_t> page(static_cast<std::size_t>(page_bytes));
        for (auto& b : page)
            b = rng.byte();
        client.invoke(dev, "write", {wire::Value::bytes(page), wire::Value::integer(i)});
        written.push_back(std::move(page));
    }
    bool roundtrip = true;
    for (std::int64_t i = 0; i < pages; ++i) {
        auto got = client.invoke(dev, "read", {wire::Value::integer(i)}).as_bytes();
        roundtrip = roundtrip && got == written[static_cast<std::size_t>(i)];
    }
    if (!roundtrip)
        return fail("roundtrip=mismatch");

    // Out-of-band byte-level check of the backing file.
    bool file_ok = true;
    {
        int fd = ::open((workdir / "pagefile").c_str(), O_RDONLY);
        if (fd < 0)
            return fail("file_oracle=missing-file");
        std::vector<std::uint8_t> buf(static_cast<std::size_t>(page_bytes));
        for (std::int64_t i = 0; i < pages && file_ok; ++i) {
            ssize_t n = ::pread(fd, buf.data(), buf.size(),
                                static_cast<off_t>(i * page_bytes));
            file_ok = n == static_cast<ssize_t>(buf.size()) &&
                      buf == written[static_cast<std::size_t>(i)];
        }
        ::close(fd);
    }
    if (!file_ok)
        return fail("file_oracle=mismatch");

    // An address beyond the device must be rejected, never written.
    bool oob_ok = false;
    try {
        client.invoke(dev, "write",
                      {wire::Value::bytes(written[0]), wire::Value::integer(pages + 7)});
    } catch (const RemoteError& e) {
        oob_ok = e.code() == ErrorCode::OutOfBounds;
    }
    if (!oob_ok)
        return fail("oob=accepted");

    // Move computation to the data: device-side page sums must equal sums of
    // fetched pages, exactly.
    pagestore::PageGeometry geom{4, 4, page_bytes / (4 * 4 * 8)};
    if (geom.n3 < 1)
        geom = pagestore::PageGeometry{1, 1, page_bytes / 8};
    bool remote_sum_ok = true;
    if (geom.byte_size() == page_bytes) {
        auto adev = client.spawn(target, "ArrayPageDevice",
                                 {wire::Value::str((workdir / "array_blocks").string()),
                                  wire::Value::integer(pages), wire::Value::integer(geom.n1),
                                  wire::Value::integer(geom.n2), wire::Value::integer(geom.n3)});
        for (std::int64_t i = 0; i < pages; ++i) {
            std::vector<std::uint8_t> page(static_cast<std::size_t>(page_bytes));
            for (std::int64_t e = 0; e < geom.elements(); ++e)
                pagestore::store_f64le(page.data() + e * 8, rng.real());
            client.invoke(adev, "write", {wire::Value::bytes(page), wire::Value::integer(i)});
        }
        for (std::int64_t i = 0; i < pages; ++i) {
            double remote = client.invoke(adev, "sum", {wire::Value::integer(i)}).as_float();
            auto page = client.invoke(adev, "read", {wire::Value::integer(i)}).as_bytes();
            double local = pagestore::array_page_sum(page, geom);
            remote_sum_ok = remote_sum_ok && remote == local;
        }
        client.destroy(adev);
    }
    if (!remote_sum_ok)
        return fail("remote_sum=mismatch");

    client.destroy(dev);
    if (o.output == "human")
        std::printf("page device of %" PRId64 " x %" PRId64
                    " bytes: write/read verified, file bytes verified, remote sum verified\n",
                    pages, page_bytes);
    std::printf("roundtrip=ok remote_sum=ok file_oracle=ok oob=ok\n");
    return 0;
}

// ---------------------------------------------------------------------------
// demo sum: distributed array vs an in-memory shadow oracle.

int demo_sum(const CommonOpts& o, std::int64_t extent, std::int64_t page, std::size_t devices,
             const std::string& map_name) {
    auto workdir = ensure_workdir(o);
    cli::ClusterHandle handle(o.transport, o.machines, o.latency_ms, workdir,
                              runtime::standard_classes());
    auto client = handle.client();

    auto kind = distarray::parse_page_map_kind(map_name);
    if (!kind)
        return fail("usage=bad-map");

    const std::int64_t grid = extent / page;
    const std::int64_t total_pages = grid * grid * grid;
    const std::int64_t per_device =
        (total_pages + static_cast<std::int64_t>(devices) - 1) /
        static_cast<std::int64_t>(devices);

    distarray::ArraySpec spec;
    spec.N1 = spec.N2 = spec.N3 = extent;
    spec.n1 = spec.n2 = spec.n3 = page;
    spec.map = *kind;
    spec.devices =
        distarray::spawn_devices(client, cli::object_machines(o.machines), devices,
                                 (workdir / "sumdev").string(), per_device, page, page, page);
    distarray::Array array(client, spec);

    DemoRng rng{o.seed};
    const auto volume = static_cast<std::size_t>(extent * extent * extent);
    std::vector<double> shadow(volume);
    for (auto& v : shadow)
        v = rng.real();
    array.write(distarray::Domain{0, extent, 0, extent, 0, extent}, shadow);

    // A few random subdomain rewrites keep the page boundaries honest.
    for (int op = 0; op < 5; ++op) {
        auto pick = [&](std::int64_t n) {
            std::int64_t a = static_cast<std::int64_t>(rng.next() % std::uint64_t(n));
            std::int64_t b = static_cast<std::int64_t>(rng.next() % std::uint64_t(n)) + 1;
            return a < b ? std::pair{a, b} : std::pair{b - 1, a + 1};
        };
        auto [l1, h1] = pick(extent);
        auto [l2, h2] = pick(extent);
        auto [l3, h3] = pick(extent);
        distarray::Domain d{l1, h1, l2, h2, l3, h3};
        std::vector<double> vals(static_cast<std::size_t>(d.volume()));
        for (auto& v : vals)
            v = rng.real();
        array.write(d, vals);
        std::size_t idx = 0;
        for (std::int64_t i1 = d.lo1; i1 < d.hi1; ++i1)
            for (std::int64_t i2 = d.lo2; i2 < d.hi2; ++i2)
                for (std::int64_t i3 = d.lo3; i3 < d.hi3; ++i3)
                    shadow[static_cast<std::size_t>((i1 * extent + i2) * extent + i3)] =
                        vals[idx++];
    }

    double got = array.sum(distarray::Domain{0, extent, 0, extent, 0, extent});
    double oracle = 0.0;
    for (double v : shadow)
        oracle += v;
    double rel = std::abs(got - oracle) / std::max(1.0, std::abs(oracle));
    if (rel > 1e-12)
        return fail("sum_rel_err=" + fmt("%.3e", rel));

    if (o.output == "human")
        std::printf("distributed sum over %" PRId64 "^3 elements matches the shadow array\n",
                    extent);
    std::printf("extent=%" PRId64 " page=%" PRId64 " devices=%zu map=%s sum=%s oracle=%s "
                "rel_err=%s result=ok\n",
                extent, page, devices, distarray::page_map_kind_name(*kind),
                fmt("%.17g", got).c_str(), fmt("%.17g", oracle).c_str(),
                fmt("%.3e", rel).c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// demo fft: forward then inverse transform must restore the input.

int demo_fft(const CommonOpts& o, std::int64_t grid, int workers, std::size_t devices) {
    auto workdir = ensure_workdir(o);
    cli::ClusterHandle handle(o.transport, o.machines, o.latency_ms, workdir,
                              runtime::standard_classes());
    auto client = handle.client();
    auto machines = cli::object_machines(o.machines);

    const std::int64_t pg = std::max<std::int64_t>(1, std::min<std::int64_t>(8, grid / 2));
    distarray::ArraySpec spec;
    spec.N1 = 2 * grid;
    spec.N2 = spec.N3 = grid;
    spec.n1 = spec.n2 = spec.n3 = pg;
    const std::int64_t total_pages = spec.pages1() * spec.pages2() * spec.pages3();
    const std::int64_t per_device =
        (total_pages + static_cast<std::int64_t>(devices) - 1) /
        static_cast<std::int64_t>(devices);
    spec.devices = distarray::spawn_devices(client, machines, devices,
                                            (workdir / "fftdev").string(), per_device, pg, pg, pg);
    distarray::Array array(client, spec);

    DemoRng rng{o.seed};
    const auto n = static_cast<std::size_t>(grid * grid * grid);
    std::vector<fftdemo::Complex> input(n);
    for (auto& c : input)
        c = {rng.real(), rng.real()};
    fftdemo::write_complex_grid(array, input);

    auto meta =
        client.spawn(0, "ArrayMeta", {wire::Value::str(distarray::render_metadata(spec))});
    auto group = fftdemo::FftGroup::create(client, machines, workers);
    group.transform(-1, meta);
    group.transform(+1, meta);
    auto output = fftdemo::read_complex_grid(array);

    double max_err = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        max_err = std::max(max_err, std::abs(output[i] - input[i]));
    group.destroy();
    client.destroy(meta);
    if (max_err > 1e-10)
        return fail("max_roundtrip_err=" + fmt("%.3e", max_err));

    if (o.output == "human")
        std::printf("forward+inverse transform on a %" PRId64
                    "^3 grid restored the input (%d workers)\n",
                    grid, workers);
    std::printf("grid=%" PRId64 " workers=%d devices=%zu max_roundtrip_err=%s result=ok\n", grid,
                workers, devices, fmt("%.3e", max_err).c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// bench parallel-read: one read per device, sequential loop vs batch.

int bench_parallel_read(const CommonOpts& o, std::size_t devices, std::int64_t pages,
                        std::int64_t page_bytes) {
    if (o.transport != "sim")
        return fail("usage=bench-needs-sim");
    auto workdir = ensure_workdir(o);
    cli::ClusterHandle handle("sim", devices + 1, o.latency_ms, workdir,
                              runtime::standard_classes());
    auto client = handle.client();
    auto* sim = handle.cluster().transport().sim();

    DemoRng rng{o.seed};
    std::vector<runtime::RemoteRef> devs;
    for (std::size_t i = 0; i < devices; ++i) {
        auto dev = client.spawn(
            static_cast<std::uint32_t>(i + 1), "PageDevice",
            {wire::Value::str((workdir / ("bench" + std::to_string(i))).string()),
             wire::Value::integer(pages), wire::Value::integer(page_bytes)});
        std::vector<std::uint8_t> page(static_cast<std::size_t>(page_bytes));
        for (auto& b : page)
            b = rng.byte();
        client.invoke(dev, "write", {wire::Value::bytes(std::move(page)),
                                     wire::Value::integer(0)});
        devs.push_back(dev);
    }

    auto t0 = sim->now();
    std::vector<wire::Value> seq;
    for (const auto& dev : devs)
        seq.push_back(client.invoke(dev, "read", {wire::Value::integer(0)}));
    auto t1 = sim->now();

    std::vector<parcall::Call> calls;
    for (const auto& dev : devs)
        calls.push_back({dev, "read", {wire::Value::integer(0)}});
    auto batched = parcall::batch_invoke(client, calls);
    auto t2 = sim->now();

    bool equal = true;
    for (std::size_t i = 0; i < devs.size(); ++i)
        equal = equal && seq[i].as_bytes() == batched[i].as_bytes();

    auto ms = [](transport::VirtualTime t) {
        return std::chrono::duration<double, std::milli>(t).count();
    };
    double seq_ms = ms(t1 - t0);
    double batch_ms = ms(t2 - t1);
    double ratio = batch_ms > 0 ? seq_ms / batch_ms : 0.0;

    if (!equal)
        return fail("pages_equal=0");
    if (ratio < static_cast<double>(devices) / 2.0)
        return fail("ratio=" + fmt("%.2f", ratio));

    if (o.output == "human")
        std::printf("batching %zu reads hides %zu round trips behind one\n", devices, devices - 1);
    std::printf("devices=%zu latency_ms=%s sequential_ms=%s batched_ms=%s ratio=%s "
                "pages_equal=1 result=ok\n",
                devices, fmt("%.3f", o.latency_ms).c_str(), fmt("%.3f", seq_ms).c_str(),
                fmt("%.3f", batch_ms).c_str(), fmt("%.2f", ratio).c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// persist utilities

int persist_list(const std::string& manifest_flag) {
    persist::Manifest manifest(persist::default_manifest_path(manifest_flag));
    for (const auto& e : manifest.list())
        std::printf("%s class=%s machine=%u\n", e.address.c_str(), e.class_name.c_str(),
                    e.machine_id);
    return 0;
}

int persist_resolve(const CommonOpts& o, const std::string& manifest_flag,
                    const std::string& address) {
    auto workdir = ensure_workdir(o);
    cli::ClusterHandle handle(o.transport, o.machines, o.latency_ms, workdir,
                              runtime::standard_classes());
    auto client = handle.client();
    persist::Manifest manifest(persist::default_manifest_path(manifest_flag));
    auto ref = manifest.resolve(client, address);
    std::printf("address=%s machine=%u object=%" PRIu64 " class=%s\n", address.c_str(),
                ref.machine_id, ref.object_id, ref.class_name.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// cluster up: launch a socket cluster and serve until interrupted.

volatile std::sig_atomic_t g_stop = 0;

int cluster_up(const CommonOpts& o) {
    if (o.transport != "socket")
        return fail("usage=cluster-up-needs-socket");
    auto workdir = ensure_workdir(o);
    cli::ClusterHandle handle("socket", o.machines, 0.0, workdir, runtime::standard_classes());
    std::printf("machines=%zu topology=%s\n", o.machines, handle.topology().c_str());
    std::fflush(stdout);
    std::signal(SIGINT, [](int) { g_stop = 1; });
    std::signal(SIGTERM, [](int) { g_stop = 1; });
    while (!g_stop)
        ::pause();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"remote-object runtime: clusters, demos, benchmarks"};
    app.require_subcommand(1);

    CommonOpts common;

    auto* cluster = app.add_subcommand("cluster", "cluster management");
    auto* cluster_up_cmd = cluster->add_subcommand("up", "launch a socket cluster and wait");
    add_common(cluster_up_cmd, common);

    auto* worker = app.add_subcommand("worker", "serve one machine of a socket cluster");
    std::uint32_t worker_id = 0;
    std::string worker_topology;
    worker->add_option("--machine-id", worker_id)->required();
    worker->add_option("--topology", worker_topology)->required();

    auto* demo = app.add_subcommand("demo", "run a verified demo");
    auto* pagestore_cmd = demo->add_subcommand("pagestore", "page device write/read/sum");
    std::int64_t pages = 10, page_bytes = 1024;
    pagestore_cmd->add_option("--pages", pages);
    pagestore_cmd->add_option("--page-bytes", page_bytes);
    add_common(pagestore_cmd, common);

    auto* sum_cmd = demo->add_subcommand("sum", "distributed array sum vs oracle");
    std::int64_t extent = 32, page = 8;
    std::size_t devices = 4;
    std::string map_name = "linear";
    sum_cmd->add_option("--extent", extent);
    sum_cmd->add_option("--page", page);
    sum_cmd->add_option("--devices", devices);
    sum_cmd->add_option("--map", map_name)->check(CLI::IsMember({"linear", "roundrobin"}));
    add_common(sum_cmd, common);

    auto* fft_cmd = demo->add_subcommand("fft", "distributed FFT roundtrip");
    std::int64_t grid = 16;
    int workers = 4;
    std::size_t fft_devices = 4;
    fft_cmd->add_option("--grid", grid);
    fft_cmd->add_option("--workers", workers);
    fft_cmd->add_option("--devices", fft_devices);
    add_common(fft_cmd, common);

    auto* bench = app.add_subcommand("bench", "measurements");
    auto* pread_cmd = bench->add_subcommand("parallel-read", "sequential vs batched reads");
    std::size_t bench_devices = 8;
    std::int64_t bench_pages = 4, bench_page_bytes = 4096;
    pread_cmd->add_option("--devices", bench_devices);
    pread_cmd->add_option("--pages", bench_pages);
    pread_cmd->add_option("--page-bytes", bench_page_bytes);
    add_common(pread_cmd, common);

    auto* persist_cmd = app.add_subcommand("persist", "manifest utilities");
    std::string manifest_flag;
    auto* list_cmd = persist_cmd->add_subcommand("list", "print manifest entries");
    list_cmd->add_option("--manifest", manifest_flag);
    auto* resolve_cmd = persist_cmd->add_subcommand("resolve", "activate one address");
    std::string address;
    resolve_cmd->add_option("--manifest", manifest_flag);
    resolve_cmd->add_option("--addr", address)->required();
    add_common(resolve_cmd, common);

    // The bench defaults to a visible latency; everything else to zero.
    pread_cmd->callback([&] {
        if (pread_cmd->count("--latency-ms") == 0)
            common.latency_ms = 10.0;
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cluster_up_cmd->parsed())
            return cluster_up(common);
        if (worker->parsed()) {
            runtime::run_worker(worker_id, worker_topology, runtime::standard_classes());
        }
        if (pagestore_cmd->parsed())
            return demo_pagestore(common, pages, page_bytes);
        if (sum_cmd->parsed())
            return demo_sum(common, extent, page, devices, map_name);
        if (fft_cmd->parsed())
            return demo_fft(common, grid, workers, fft_devices);
        if (pread_cmd->parsed())
            return bench_parallel_read(common, bench_devices, bench_pages, bench_page_bytes);
        if (list_cmd->parsed())
            return persist_list(manifest_flag);
        if (resolve_cmd->parsed())
            return persist_resolve(common, manifest_flag, address);
    } catch (const std::exception& e) {
        std::printf("FAIL error=%s\n", e.what());
        return 1;
    }
    std::fprintf(stderr, "no subcommand\n");
    return 2;
}
