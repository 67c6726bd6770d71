#include <doctest.h>

#include <filesystem>
#include <thread>

#include "objproc/pagestore.hpp"
#include "test_support.hpp"

using namespace objproc;
using wire::Value;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const RemoteError& e) {
        return e.code();
    }
    FAIL("expected a RemoteError");
    return ErrorCode::Internal;
}

} // namespace

TEST_CASE("spawning a page device creates its backing file on the target machine") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    auto ref = client.spawn(1, "PageDevice",
                            {Value::str(dir.file("pagefile")), Value::integer(10),
                             Value::integer(1024)});
    CHECK(ref.machine_id == 1);
    CHECK(ref.object_id != 0);
    CHECK(std::filesystem::file_size(dir.file("pagefile")) == 10 * 1024);
    client.destroy(ref);
}

TEST_CASE("a remote double buffer behaves like a zero-initialized array") {
    auto cluster = test::sim_cluster(3);
    auto client = cluster->make_client();
    auto data = client.spawn(2, "DoubleBuffer", {Value::integer(1024)});

    client.invoke(data, "set", {Value::integer(7), Value::real(3.1415)});
    CHECK(client.invoke(data, "get", {Value::integer(2)}).as_float() == 0.0);
    CHECK(client.invoke(data, "get", {Value::integer(7)}).as_float() == 3.1415);
    CHECK(client.invoke(data, "len", {}).as_int() == 1024);

    CHECK(code_of([&] { client.invoke(data, "get", {Value::integer(5000)}); }) ==
          ErrorCode::OutOfBounds);
    client.destroy(data);
}

TEST_CASE("machine 0 hosts objects like any other machine") {
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    auto local = client.spawn(0, "DoubleBuffer", {Value::integer(8)});
    client.invoke(local, "set", {Value::integer(1), Value::real(2.5)});
    CHECK(client.invoke(local, "get", {Value::integer(1)}).as_float() == 2.5);
    client.destroy(local);
}

TEST_CASE("lifecycle violations yield the documented errors, never wrong answers") {
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    auto ref = client.spawn(1, "DoubleBuffer", {Value::integer(4)});
    client.destroy(ref);

    CHECK(code_of([&] { client.invoke(ref, "get", {Value::integer(0)}); }) ==
          ErrorCode::UnknownObject);
    CHECK(code_of([&] { client.destroy(ref); }) == ErrorCode::UnknownObject);
}

TEST_CASE("spawn and invoke report unknown classes, methods, machines and bad args") {
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();

    CHECK(code_of([&] { client.spawn(1, "NoSuchClass", {}); }) == ErrorCode::UnknownClass);
    CHECK(code_of([&] { client.spawn(7, "DoubleBuffer", {Value::integer(4)}); }) ==
          ErrorCode::UnknownMachine);

    auto ref = client.spawn(1, "DoubleBuffer", {Value::integer(4)});
    CHECK(code_of([&] { client.invoke(ref, "no_such_method", {}); }) ==
          ErrorCode::UnknownMethod);
    CHECK(code_of([&] { client.invoke(ref, "set", {Value::str("x"), Value::real(1.0)}); }) ==
          ErrorCode::BadArgs);
    CHECK(code_of([&] { client.invoke(ref, "set", {Value::integer(0)}); }) ==
          ErrorCode::BadArgs);
    client.destroy(ref);
}

TEST_CASE("constructor failures propagate and leave nothing registered") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();

    CHECK(code_of([&] { client.spawn(1, "DoubleBuffer", {Value::integer(0)}); }) ==
          ErrorCode::BadArgs);

    // A wrong-size existing file fails the device constructor.
    {
        std::ofstream f(dir.file("short"), std::ios::binary);
        f << "not the right size";
    }
    CHECK(code_of([&] {
              client.spawn(1, "PageDevice",
                           {Value::str(dir.file("short")), Value::integer(4),
                            Value::integer(512)});
          }) == ErrorCode::DeviceError);

    // The machine still works and hands out fresh ids.
    auto ok = client.spawn(1, "DoubleBuffer", {Value::integer(4)});
    CHECK(ok.object_id != 0);
    client.destroy(ok);
}

TEST_CASE("registering a class twice is rejected") {
    runtime::ClassRegistry reg;
    runtime::register_builtin_classes(reg);
    CHECK_THROWS_AS(runtime::register_builtin_classes(reg), DuplicateClassError);
}

TEST_CASE("destroying a device closes it but keeps the file contents") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    auto dev = client.spawn(1, "PageDevice",
                            {Value::str(dir.file("keep")), Value::integer(2),
                             Value::integer(16)});
    std::vector<std::uint8_t> page(16, 0xAB);
    client.invoke(dev, "write", {Value::bytes(page), Value::integer(1)});
    client.destroy(dev);

    auto bytes = test::read_file_bytes(dir.file("keep"));
    REQUIRE(bytes.size() == 32);
    CHECK(std::vector<std::uint8_t>(bytes.begin() + 16, bytes.end()) == page);
}

TEST_CASE("object ids are never reused within a cluster lifetime") {
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    auto a = client.spawn(1, "Counter", {});
    client.destroy(a);
    auto b = client.spawn(1, "Counter", {});
    CHECK(b.object_id > a.object_id);
    client.destroy(b);
}

TEST_CASE("per-object serialization holds under real concurrency") {
    auto cluster = test::socket_cluster(2);
    auto root = cluster->make_client();
    auto counter = root.spawn(1, "Counter", {});

    auto hammer = [&](int n) {
        auto client = cluster->make_client();
        for (int i = 0; i < n; ++i)
            client.invoke(counter, "inc", {});
    };
    std::thread t1(hammer, 500);
    std::thread t2(hammer, 500);
    t1.join();
    t2.join();

    CHECK(root.invoke(counter, "get", {}).as_int() == 1000);
    root.destroy(counter);
    cluster->shutdown();
}

TEST_CASE("results do not depend on placement or backend") {
    // The same program, objects on machine 0 vs machine 1, sim vs socket.
    auto run = [](runtime::Cluster& cluster, std::uint32_t machine) {
        test::TempDir dir;
        auto client = cluster.make_client();
        auto dev = client.spawn(machine, "ArrayPageDevice",
                                {Value::str(dir.file("dev")), Value::integer(3),
                                 Value::integer(2), Value::integer(2), Value::integer(2)});
        std::vector<std::uint8_t> page(64);
        for (int e = 0; e < 8; ++e)
            pagestore::store_f64le(page.data() + e * 8, double(e) * 0.5 - 1.0);
        client.invoke(dev, "write", {Value::bytes(page), Value::integer(2)});
        auto sum = client.invoke(dev, "sum", {Value::integer(2)}).as_float();
        auto back = client.invoke(dev, "read", {Value::integer(2)}).as_bytes();
        client.destroy(dev);
        return std::pair{sum, back};
    };

    auto sim0 = test::sim_cluster(2);
    auto sim1 = test::sim_cluster(2);
    auto sock = test::socket_cluster(2);
    auto a = run(*sim0, 0);
    auto b = run(*sim1, 1);
    auto c = run(*sock, 1);
    CHECK(a == b);
    CHECK(a == c);
    sock->shutdown();
}
