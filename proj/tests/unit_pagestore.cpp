#include <doctest.h>

#include <random>

#include "objproc/pagestore.hpp"
#include "test_support.hpp"

using namespace objproc;
using wire::Value;

namespace {

std::vector<std::uint8_t> random_page(std::mt19937_64& rng, std::size_t n) {
    std::vector<std::uint8_t> p(n);
    for (auto& b : p)
        b = static_cast<std::uint8_t>(rng());
    return p;
}

std::vector<std::uint8_t> doubles_page(std::mt19937_64& rng, std::int64_t elements) {
    std::vector<std::uint8_t> p(static_cast<std::size_t>(elements * 8));
    std::uniform_real_distribution<double> dist(-100.0, 100.0);
    for (std::int64_t e = 0; e < elements; ++e)
        pagestore::store_f64le(p.data() + e * 8, dist(rng));
    return p;
}

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

TEST_CASE("write/read roundtrip on the 10-page, 1 KiB device") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    auto dev = client.spawn(1, "PageDevice",
                            {Value::str(dir.file("pagefile")), Value::integer(10),
                             Value::integer(1024)});

    std::mt19937_64 rng(3);
    for (int round = 0; round < 50; ++round) {
        auto index = static_cast<std::int64_t>(rng() % 10);
        auto page = random_page(rng, 1024);
        client.invoke(dev, "write", {Value::bytes(page), Value::integer(index)});
        CHECK(client.invoke(dev, "read", {Value::integer(index)}).as_bytes() == page);
    }
    client.destroy(dev);
}

TEST_CASE("a fresh device reads as zero pages") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(1);
    auto client = cluster->make_client();
    auto dev = client.spawn(0, "PageDevice",
                            {Value::str(dir.file("zero")), Value::integer(3),
                             Value::integer(1024)});
    auto page = client.invoke(dev, "read", {Value::integer(0)}).as_bytes();
    CHECK(page == std::vector<std::uint8_t>(1024, 0));
}

TEST_CASE("page addresses outside the device are rejected") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(1);
    auto client = cluster->make_client();
    auto dev = client.spawn(0, "PageDevice",
                            {Value::str(dir.file("bounds")), Value::integer(10),
                             Value::integer(1024)});
    std::vector<std::uint8_t> page(1024, 1);

    // Address 17 on a 10-page device: rejected, not silently stored.
    CHECK(code_of([&] {
              client.invoke(dev, "write", {Value::bytes(page), Value::integer(17)});
          }) == ErrorCode::OutOfBounds);
    CHECK(code_of([&] { client.invoke(dev, "read", {Value::integer(10)}); }) ==
          ErrorCode::OutOfBounds);
    CHECK(code_of([&] { client.invoke(dev, "read", {Value::integer(-1)}); }) ==
          ErrorCode::OutOfBounds);
    CHECK(code_of([&] {
              client.invoke(dev, "write",
                            {Value::bytes(std::vector<std::uint8_t>(17, 0)),
                             Value::integer(0)});
          }) == ErrorCode::BadArgs);
}

TEST_CASE("writes land at the documented offset and touch nothing else") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(1);
    auto client = cluster->make_client();
    auto dev = client.spawn(0, "PageDevice",
                            {Value::str(dir.file("iso")), Value::integer(10),
                             Value::integer(1024)});
    std::mt19937_64 rng(5);
    auto fill = random_page(rng, 1024);
    for (std::int64_t i = 0; i < 10; ++i)
        client.invoke(dev, "write", {Value::bytes(fill), Value::integer(i)});

    auto before = test::read_file_bytes(dir.file("iso"));
    auto page = random_page(rng, 1024);
    client.invoke(dev, "write", {Value::bytes(page), Value::integer(3)});
    auto after = test::read_file_bytes(dir.file("iso"));

    REQUIRE(after.size() == before.size());
    for (std::size_t off = 0; off < after.size(); ++off) {
        bool inside = off >= 3 * 1024 && off < 4 * 1024;
        if (inside)
            CHECK(after[off] == page[off - 3 * 1024]);
        else
            CHECK(after[off] == before[off]);
    }
}

TEST_CASE("existing files are adopted when the size matches, rejected otherwise") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(1);
    auto client = cluster->make_client();

    auto dev = client.spawn(0, "PageDevice",
                            {Value::str(dir.file("adopt")), Value::integer(4),
                             Value::integer(256)});
    std::mt19937_64 rng(9);
    auto page = random_page(rng, 256);
    client.invoke(dev, "write", {Value::bytes(page), Value::integer(2)});
    client.destroy(dev);

    auto again = client.spawn(0, "PageDevice",
                              {Value::str(dir.file("adopt")), Value::integer(4),
                               Value::integer(256)});
    CHECK(client.invoke(again, "read", {Value::integer(2)}).as_bytes() == page);

    CHECK(code_of([&] {
              client.spawn(0, "PageDevice",
                           {Value::str(dir.file("adopt")), Value::integer(8),
                            Value::integer(256)});
          }) == ErrorCode::DeviceError);
}

TEST_CASE("page sums") {
    pagestore::PageGeometry geom{4, 4, 8};

    SUBCASE("an all-zero page sums to zero") {
        std::vector<std::uint8_t> page(static_cast<std::size_t>(geom.byte_size()), 0);
        CHECK(pagestore::array_page_sum(page, geom) == 0.0);
    }

    SUBCASE("values 1..n sum to n(n+1)/2") {
        const std::int64_t n = geom.elements();
        std::vector<std::uint8_t> page(static_cast<std::size_t>(geom.byte_size()));
        for (std::int64_t e = 0; e < n; ++e)
            pagestore::store_f64le(page.data() + e * 8, double(e + 1));
        CHECK(pagestore::array_page_sum(page, geom) == double(n * (n + 1) / 2));
    }

    SUBCASE("randomized pages match an independent scalar accumulation") {
        std::mt19937_64 rng(13);
        for (int round = 0; round < 10; ++round) {
            auto page = doubles_page(rng, geom.elements());
            double expected = 0.0;
            for (std::int64_t e = 0; e < geom.elements(); ++e)
                expected += pagestore::load_f64le(page.data() + e * 8);
            double got = pagestore::array_page_sum(page, geom);
            CHECK(std::abs(got - expected) <=
                  1e-12 * std::max(1.0, std::abs(expected)));
        }
    }

    SUBCASE("a size mismatch is rejected") {
        std::vector<std::uint8_t> page(16);
        CHECK_THROWS_AS(pagestore::array_page_sum(page, geom), RemoteError);
    }
}

TEST_CASE("device-side sums equal client-side sums of fetched pages, exactly") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    pagestore::PageGeometry geom{8, 8, 8};
    auto dev = client.spawn(1, "ArrayPageDevice",
                            {Value::str(dir.file("blocks")), Value::integer(10),
                             Value::integer(geom.n1), Value::integer(geom.n2),
                             Value::integer(geom.n3)});

    std::mt19937_64 rng(17);
    for (std::int64_t i = 0; i < 10; ++i)
        client.invoke(dev, "write",
                      {Value::bytes(doubles_page(rng, geom.elements())), Value::integer(i)});

    for (std::int64_t i = 0; i < 10; ++i) {
        double remote = client.invoke(dev, "sum", {Value::integer(i)}).as_float();
        auto page = client.invoke(dev, "read", {Value::integer(i)}).as_bytes();
        CHECK(remote == pagestore::array_page_sum(page, geom));
    }

    SUBCASE("a fresh device sums every page to zero") {
        auto fresh = client.spawn(1, "ArrayPageDevice",
                                  {Value::str(dir.file("fresh")), Value::integer(3),
                                   Value::integer(geom.n1), Value::integer(geom.n2),
                                   Value::integer(geom.n3)});
        for (std::int64_t i = 0; i < 3; ++i)
            CHECK(client.invoke(fresh, "sum", {Value::integer(i)}).as_float() == 0.0);
    }
}

TEST_CASE("remote sum moves a scalar; fetching the page moves the page") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    auto* sim = cluster->transport().sim();
    const std::int64_t page_bytes = 8 * 8 * 8 * 8;
    auto dev = client.spawn(1, "ArrayPageDevice",
                            {Value::str(dir.file("wire")), Value::integer(2),
                             Value::integer(8), Value::integer(8), Value::integer(8)});

    auto before_sum = sim->stats().bytes_delivered;
    client.invoke(dev, "sum", {Value::integer(0)});
    auto sum_bytes = sim->stats().bytes_delivered - before_sum;

    auto before_read = sim->stats().bytes_delivered;
    client.invoke(dev, "read", {Value::integer(0)});
    auto read_bytes = sim->stats().bytes_delivered - before_read;

    CHECK(sum_bytes < static_cast<std::uint64_t>(page_bytes));
    CHECK(read_bytes >= static_cast<std::uint64_t>(page_bytes));
}

TEST_CASE("a device wrapped around an existing one adopts its file and layout") {
    test::TempDir dir;
    auto cluster = test::sim_cluster(3);
    auto client = cluster->make_client();
    pagestore::PageGeometry geom{8, 8, 8};

    auto plain = client.spawn(1, "PageDevice",
                              {Value::str(dir.file("wrapped")), Value::integer(10),
                               Value::integer(geom.byte_size())});
    std::mt19937_64 rng(23);
    std::vector<std::vector<std::uint8_t>> pages;
    for (std::int64_t i = 0; i < 10; ++i) {
        pages.push_back(doubles_page(rng, geom.elements()));
        client.invoke(plain, "write", {Value::bytes(pages.back()), Value::integer(i)});
    }

    // Wrap from another machine; both objects coexist on one file.
    auto wrapper = client.spawn(2, "ArrayPageDevice",
                                {Value::ref(plain.wire()), Value::integer(geom.n1),
                                 Value::integer(geom.n2), Value::integer(geom.n3)});
    for (std::int64_t i = 0; i < 10; ++i) {
        double through_wrapper =
            client.invoke(wrapper, "sum", {Value::integer(i)}).as_float();
        auto through_plain = client.invoke(plain, "read", {Value::integer(i)}).as_bytes();
        CHECK(through_wrapper == pagestore::array_page_sum(through_plain, geom));
    }

    // Retiring the original leaves the wrapper fully functional.
    client.destroy(plain);
    for (std::int64_t i = 0; i < 10; ++i)
        CHECK(client.invoke(wrapper, "read", {Value::integer(i)}).as_bytes() == pages[i]);

    SUBCASE("a geometry that does not match the page size is rejected") {
        auto other = client.spawn(1, "PageDevice",
                                  {Value::str(dir.file("other")), Value::integer(4),
                                   Value::integer(1024)});
        CHECK(code_of([&] {
                  client.spawn(2, "ArrayPageDevice",
                               {Value::ref(other.wire()), Value::integer(8),
                                Value::integer(8), Value::integer(8)});
              }) == ErrorCode::BadArgs);
    }
}
