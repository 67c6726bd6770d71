#include <doctest.h>

#include <random>

#include "objproc/distarray.hpp"
#include "objproc/pagestore.hpp"
#include "objproc/persist.hpp"
#include "test_support.hpp"

using namespace objproc;
using persist::Manifest;
using wire::Value;

TEST_CASE("symbolic addresses parse into namespace, class and name") {
    auto p = persist::parse_address("objproc://data/PageDevice/34");
    CHECK(p.ns == "data");
    CHECK(p.cls == "PageDevice");
    CHECK(p.name == "34");

    CHECK_THROWS_AS(persist::parse_address("http://data/PageDevice/34"), RemoteError);
    CHECK_THROWS_AS(persist::parse_address("objproc://data/PageDevice"), RemoteError);
    CHECK_THROWS_AS(persist::parse_address("objproc:///PageDevice/34"), RemoteError);
    CHECK_THROWS_AS(persist::parse_address("objproc://a/B/c d"), RemoteError);
}

TEST_CASE("base64 round-trips arbitrary bytes") {
    std::mt19937_64 rng(61);
    for (int len = 0; len < 40; ++len) {
        std::vector<std::uint8_t> data(static_cast<std::size_t>(len));
        for (auto& b : data)
            b = static_cast<std::uint8_t>(rng());
        CHECK(persist::base64_decode(persist::base64_encode(data)) == data);
    }
    CHECK_THROWS_AS(persist::base64_decode("@@@@"), ObjProcError);
    CHECK_THROWS_AS(persist::base64_decode("abc"), ObjProcError);
}

TEST_CASE("persist writes a durable manifest entry and keeps the object live") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    Manifest manifest(dir.file("manifest.txt"));

    auto dev = client.spawn(1, "PageDevice",
                            {Value::str(dir.file("store34")), Value::integer(4),
                             Value::integer(256)});
    manifest.persist(client, dev, "objproc://data/PageDevice/34");

    auto entries = manifest.list();
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].address == "objproc://data/PageDevice/34");
    CHECK(entries[0].class_name == "PageDevice");
    CHECK(entries[0].machine_id == 1);

    // Still live and usable.
    CHECK(client.invoke(dev, "num_pages", {}).as_int() == 4);

    SUBCASE("the same address cannot be persisted twice") {
        CHECK_THROWS_AS(manifest.persist(client, dev, "objproc://data/PageDevice/34"),
                        persist::DuplicateAddressError);
    }
    SUBCASE("classes without reconstruction args are rejected") {
        auto buf = client.spawn(1, "DoubleBuffer", {Value::integer(4)});
        try {
            manifest.persist(client, buf, "objproc://data/DoubleBuffer/1");
            FAIL("expected RemoteError");
        } catch (const RemoteError& e) {
            CHECK(e.code() == ErrorCode::BadArgs);
        }
    }
    SUBCASE("the address class segment must match the object") {
        try {
            manifest.persist(client, dev, "objproc://data/ArrayPageDevice/35");
            FAIL("expected RemoteError");
        } catch (const RemoteError& e) {
            CHECK(e.code() == ErrorCode::BadArgs);
        }
    }
}

TEST_CASE("resolve returns the live instance while one exists") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    Manifest manifest(dir.file("manifest.txt"));

    auto dev = client.spawn(1, "PageDevice",
                            {Value::str(dir.file("live")), Value::integer(2),
                             Value::integer(64)});
    manifest.persist(client, dev, "objproc://data/PageDevice/live");

    auto r1 = manifest.resolve(client, "objproc://data/PageDevice/live");
    auto r2 = manifest.resolve(client, "objproc://data/PageDevice/live");
    CHECK(r1.same_object(dev));
    CHECK(r1.same_object(r2));

    // A write through one ref is visible through the other.
    std::vector<std::uint8_t> page(64, 0x5A);
    client.invoke(r1, "write", {Value::bytes(page), Value::integer(0)});
    CHECK(client.invoke(r2, "read", {Value::integer(0)}).as_bytes() == page);

    CHECK_THROWS_AS(manifest.resolve(client, "objproc://data/PageDevice/nope"),
                    persist::UnknownAddressError);
}

TEST_CASE("unpersist removes the entry but not the object or its file") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    Manifest manifest(dir.file("manifest.txt"));

    auto dev = client.spawn(1, "PageDevice",
                            {Value::str(dir.file("unp")), Value::integer(2),
                             Value::integer(64)});
    manifest.persist(client, dev, "objproc://data/PageDevice/unp");
    manifest.unpersist("objproc://data/PageDevice/unp");

    CHECK_THROWS_AS(manifest.resolve(client, "objproc://data/PageDevice/unp"),
                    persist::UnknownAddressError);
    CHECK_THROWS_AS(manifest.unpersist("objproc://data/PageDevice/unp"),
                    persist::UnknownAddressError);
    CHECK(std::filesystem::exists(dir.file("unp")));
    CHECK(client.invoke(dev, "num_pages", {}).as_int() == 2); // still live

    // The address is free for reuse.
    CHECK_NOTHROW(manifest.persist(client, dev, "objproc://data/PageDevice/unp"));
}

TEST_CASE("a destroyed object with a manifest entry reconstructs from its file") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    Manifest manifest(dir.file("manifest.txt"));

    auto dev = client.spawn(1, "PageDevice",
                            {Value::str(dir.file("recon")), Value::integer(2),
                             Value::integer(64)});
    std::vector<std::uint8_t> page(64, 0x77);
    client.invoke(dev, "write", {Value::bytes(page), Value::integer(1)});
    manifest.persist(client, dev, "objproc://data/PageDevice/recon");
    client.destroy(dev);

    auto back = manifest.resolve(client, "objproc://data/PageDevice/recon");
    CHECK_FALSE(back.object_id == dev.object_id); // a fresh activation
    CHECK(client.invoke(back, "read", {Value::integer(1)}).as_bytes() == page);
}

TEST_CASE("resolve refuses to fabricate a store whose file vanished") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    Manifest manifest(dir.file("manifest.txt"));

    auto dev = client.spawn(1, "PageDevice",
                            {Value::str(dir.file("gone")), Value::integer(2),
                             Value::integer(64)});
    manifest.persist(client, dev, "objproc://data/PageDevice/gone");
    client.destroy(dev);
    std::filesystem::remove(dir.file("gone"));

    try {
        manifest.resolve(client, "objproc://data/PageDevice/gone");
        FAIL("expected RemoteError");
    } catch (const RemoteError& e) {
        CHECK(e.code() == ErrorCode::DeviceError);
    }
}

TEST_CASE("persisted state survives a cluster restart") {
    test::TempDir dir;
    std::mt19937_64 rng(67);
    std::vector<std::uint8_t> page0(128), page2(128);
    for (auto& b : page0)
        b = static_cast<std::uint8_t>(rng());
    for (auto& b : page2)
        b = static_cast<std::uint8_t>(rng());

    {
        auto cluster = test::sim_cluster(3);
        auto client = cluster->make_client();
        Manifest manifest(dir.file("manifest.txt"));
        auto dev = client.spawn(2, "ArrayPageDevice",
                                {Value::str(dir.file("surv")), Value::integer(4),
                                 Value::integer(4), Value::integer(2), Value::integer(2)});
        client.invoke(dev, "write", {Value::bytes(page0), Value::integer(0)});
        client.invoke(dev, "write", {Value::bytes(page2), Value::integer(2)});
        manifest.persist(client, dev, "objproc://data/ArrayPageDevice/surv");
        cluster->shutdown();
    }

    auto cluster = test::sim_cluster(3);
    auto client = cluster->make_client();
    Manifest manifest(dir.file("manifest.txt"));
    auto dev = manifest.resolve(client, "objproc://data/ArrayPageDevice/surv");
    CHECK(dev.machine_id == 2);
    CHECK(client.invoke(dev, "read", {Value::integer(0)}).as_bytes() == page0);
    CHECK(client.invoke(dev, "read", {Value::integer(2)}).as_bytes() == page2);
    CHECK(client.invoke(dev, "read", {Value::integer(1)}).as_bytes() ==
          std::vector<std::uint8_t>(128, 0));
}

TEST_CASE("a whole array persists through its metadata document") {
    test::TempDir dir;
    std::vector<double> vals(8 * 8 * 8);
    for (std::size_t i = 0; i < vals.size(); ++i)
        vals[i] = double(i) * 0.125;
    const distarray::Domain full{0, 8, 0, 8, 0, 8};

    {
        auto cluster = test::sim_cluster(3);
        auto client = cluster->make_client();
        Manifest manifest(dir.file("manifest.txt"));

        distarray::ArraySpec spec;
        spec.N1 = spec.N2 = spec.N3 = 8;
        spec.n1 = spec.n2 = spec.n3 = 4;
        spec.map = distarray::PageMapKind::Linear;
        spec.devices = distarray::spawn_devices(*&client, {1, 2}, 2, dir.file("adev"), 4, 4, 4, 4);

        std::vector<std::string> addrs;
        for (std::size_t i = 0; i < spec.devices.size(); ++i) {
            addrs.push_back("objproc://data/ArrayPageDevice/adev" + std::to_string(i));
            manifest.persist(client, spec.devices[i], addrs.back());
        }

        distarray::Array array(client, spec);
        array.write(full, vals);

        auto meta = client.spawn(0, "ArrayMeta",
                                 {Value::str(distarray::render_metadata(spec, addrs))});
        manifest.persist(client, meta, "objproc://data/ArrayMeta/grid");
        cluster->shutdown();
    }

    auto cluster = test::sim_cluster(3);
    auto client = cluster->make_client();
    Manifest manifest(dir.file("manifest.txt"));
    auto meta = manifest.resolve(client, "objproc://data/ArrayMeta/grid");
    auto text = client.invoke(meta, "text", {}).as_str();
    auto spec = distarray::parse_metadata(
        text, [&](const std::string& addr) { return manifest.resolve(client, addr); });
    distarray::Array array(client, spec);
    CHECK(array.read(full) == vals);
}
