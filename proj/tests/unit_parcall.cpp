#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>

#include "objproc/parcall.hpp"
#include "test_support.hpp"

using namespace objproc;
using namespace std::chrono_literals;
using parcall::BatchInvokeError;
using parcall::Call;
using wire::Value;

TEST_CASE("an empty batch returns an empty result list") {
    auto cluster = test::sim_cluster(1);
    auto client = cluster->make_client();
    CHECK(parcall::batch_invoke(client, {}).empty());
}

TEST_CASE("batches over distinct objects match the sequential loop exactly") {
    auto cluster = test::sim_cluster(4);
    std::mt19937_64 rng(11);

    // Two identically prepared sets of buffers; one driven by the batch, one
    // by the plain loop.
    auto client = cluster->make_client();
    std::vector<runtime::RemoteRef> batch_objs, seq_objs;
    for (int i = 0; i < 12; ++i) {
        auto machine = static_cast<std::uint32_t>(i % 4);
        batch_objs.push_back(client.spawn(machine, "DoubleBuffer", {Value::integer(8)}));
        seq_objs.push_back(client.spawn(machine, "DoubleBuffer", {Value::integer(8)}));
    }

    for (int round = 0; round < 20; ++round) {
        std::vector<Call> calls;
        std::vector<std::size_t> targets;
        // Random calls over pairwise-distinct objects.
        std::vector<std::size_t> pool(batch_objs.size());
        std::iota(pool.begin(), pool.end(), 0);
        std::shuffle(pool.begin(), pool.end(), rng);
        auto n_calls = 1 + rng() % pool.size();
        for (std::size_t k = 0; k < n_calls; ++k) {
            std::size_t obj = pool[k];
            targets.push_back(obj);
            switch (rng() % 3) {
            case 0:
                calls.push_back({batch_objs[obj], "set",
                                 {Value::integer(std::int64_t(rng() % 8)),
                                  Value::real(double(rng() % 1000) / 7.0)}});
                break;
            case 1:
                calls.push_back(
                    {batch_objs[obj], "get", {Value::integer(std::int64_t(rng() % 8))}});
                break;
            default:
                calls.push_back({batch_objs[obj], "len", {}});
            }
        }

        auto batch_results = parcall::batch_invoke(client, calls);

        std::vector<Value> seq_results;
        for (std::size_t k = 0; k < calls.size(); ++k)
            seq_results.push_back(
                client.invoke(seq_objs[targets[k]], calls[k].method, calls[k].args));

        REQUIRE(batch_results.size() == seq_results.size());
        for (std::size_t k = 0; k < calls.size(); ++k)
            CHECK(batch_results[k] == seq_results[k]);
    }
}

TEST_CASE("two batched calls to one object apply in batch order") {
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    auto buf = client.spawn(1, "DoubleBuffer", {Value::integer(4)});
    parcall::batch_invoke(
        client, std::vector<Call>{
                    {buf, "set", {Value::integer(0), Value::real(1.0)}},
                    {buf, "set", {Value::integer(0), Value::real(2.0)}},
                });
    CHECK(client.invoke(buf, "get", {Value::integer(0)}).as_float() == 2.0);
}

TEST_CASE("n batched increments of one counter end at exactly n") {
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    auto counter = client.spawn(1, "Counter", {});
    std::vector<Call> calls(1000, Call{counter, "inc", {}});
    parcall::batch_invoke(client, calls);
    CHECK(client.invoke(counter, "get", {}).as_int() == 1000);
}

TEST_CASE("the first failing call is reported with its index; the batch drains") {
    auto cluster = test::sim_cluster(3);
    auto client = cluster->make_client();
    auto a = client.spawn(1, "DoubleBuffer", {Value::integer(4)});
    auto b = client.spawn(2, "DoubleBuffer", {Value::integer(4)});

    std::vector<Call> calls = {
        {a, "get", {Value::integer(0)}},
        {b, "get", {Value::integer(5000)}}, // out of bounds
        {a, "no_such_method", {}},          // also fails, later index
        {b, "len", {}},
    };
    try {
        parcall::batch_invoke(client, calls);
        FAIL("expected BatchInvokeError");
    } catch (const BatchInvokeError& e) {
        CHECK(e.index() == 1);
        CHECK(e.code() == ErrorCode::OutOfBounds);
    }
    // Connections stay usable after the failure.
    CHECK(client.invoke(a, "len", {}).as_int() == 4);
    CHECK(client.invoke(b, "len", {}).as_int() == 4);
}

TEST_CASE("a batch naming an unknown machine fails before sending") {
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    runtime::RemoteRef bogus{9, 1, "DoubleBuffer"};
    std::vector<Call> calls = {{bogus, "len", {}}};
    try {
        parcall::batch_invoke(client, calls);
        FAIL("expected BatchInvokeError");
    } catch (const BatchInvokeError& e) {
        CHECK(e.index() == 0);
        CHECK(e.code() == ErrorCode::UnknownMachine);
    }
}

TEST_CASE("pipelined batch latency is bounded by one round trip") {
    // 8 devices on 8 distinct machines, 10 ms one-way latency.
    auto cluster = test::sim_cluster(9, 10.0);
    auto client = cluster->make_client();
    auto* sim = cluster->transport().sim();

    std::vector<runtime::RemoteRef> bufs;
    for (std::uint32_t m = 1; m <= 8; ++m)
        bufs.push_back(client.spawn(m, "DoubleBuffer", {Value::integer(4)}));

    auto t0 = sim->now();
    for (auto& b : bufs)
        client.invoke(b, "len", {});
    auto sequential = sim->now() - t0;

    std::vector<Call> calls;
    for (auto& b : bufs)
        calls.push_back({b, "len", {}});
    auto t1 = sim->now();
    parcall::batch_invoke(client, calls);
    auto batched = sim->now() - t1;

    CHECK(sequential >= 2 * 8 * 10ms);
    CHECK(batched <= 20ms + 100us);
    CHECK(double(sequential.count()) / double(batched.count()) >= 4.0);
}

TEST_CASE("a barrier returns only after pending work on every member finished") {
    auto cluster = test::socket_cluster(5);
    auto client = cluster->make_client();
    std::vector<runtime::RemoteRef> group;
    for (std::uint32_t m = 1; m <= 4; ++m)
        group.push_back(client.spawn(m, "Slow", {}));

    // Long-running calls posted without waiting, then the barrier.
    std::vector<std::pair<std::uint32_t, std::uint64_t>> pending;
    for (auto& ref : group) {
        auto rid = client.post(ref.machine_id, wire::Message::invoke(0, ref.wire(), "work",
                                                                     {Value::integer(150)}));
        pending.emplace_back(ref.machine_id, rid);
    }
    auto start = std::chrono::steady_clock::now();
    parcall::barrier(client, group);
    auto waited = std::chrono::steady_clock::now() - start;

    CHECK(waited >= 140ms);
    for (auto& ref : group)
        CHECK(client.invoke(ref, "done", {}).as_int() == 1);
    for (auto& [machine, rid] : pending)
        runtime::Client::check_reply(client.wait(machine, rid), wire::MsgType::InvokeReply);
    cluster->shutdown();
}

TEST_CASE("a barrier over an empty group returns immediately") {
    auto cluster = test::sim_cluster(1);
    auto client = cluster->make_client();
    CHECK_NOTHROW(parcall::barrier(client, {}));
}

TEST_CASE("a barrier reports dead members with their index") {
    auto cluster = test::sim_cluster(2);
    auto client = cluster->make_client();
    auto alive = client.spawn(1, "Counter", {});
    auto dead = client.spawn(1, "Counter", {});
    client.destroy(dead);
    std::vector<runtime::RemoteRef> group = {alive, dead};
    try {
        parcall::barrier(client, group);
        FAIL("expected BatchInvokeError");
    } catch (const BatchInvokeError& e) {
        CHECK(e.index() == 1);
        CHECK(e.code() == ErrorCode::UnknownObject);
    }
}

TEST_CASE("reads after a write batch and barrier observe all writes") {
    auto cluster = test::sim_cluster(3);
    auto client = cluster->make_client();
    std::vector<runtime::RemoteRef> bufs;
    for (int i = 0; i < 4; ++i)
        bufs.push_back(client.spawn(static_cast<std::uint32_t>(1 + i % 2), "DoubleBuffer",
                                    {Value::integer(2)}));

    std::vector<Call> writes;
    for (std::size_t i = 0; i < bufs.size(); ++i)
        writes.push_back({bufs[i], "set", {Value::integer(0), Value::real(double(i) + 0.5)}});
    parcall::batch_invoke(client, writes);
    parcall::barrier(client, bufs);

    std::vector<Call> reads;
    for (auto& b : bufs)
        reads.push_back({b, "get", {Value::integer(0)}});
    auto vals = parcall::batch_invoke(client, reads);
    for (std::size_t i = 0; i < bufs.size(); ++i)
        CHECK(vals[i].as_float() == double(i) + 0.5);
}

TEST_CASE("deep copy of a published group") {
    auto cluster = test::sim_cluster(3);
    auto client = cluster->make_client();

    SUBCASE("members survive the holder and stay invokable") {
        std::vector<runtime::RemoteRef> members;
        wire::Value::List refs;
        for (int i = 0; i < 4; ++i) {
            members.push_back(
                client.spawn(static_cast<std::uint32_t>(i % 3), "Counter", {}));
            refs.push_back(Value::ref(members.back().wire()));
        }
        auto holder = client.spawn(0, "RefList", {Value::list(refs)});
        auto copied = parcall::deep_copy_group(client, holder);
        REQUIRE(copied.size() == members.size());
        for (std::size_t i = 0; i < members.size(); ++i)
            CHECK(copied[i].same_object(members[i]));

        client.destroy(holder);
        for (auto& m : copied)
            CHECK(client.invoke(m, "inc", {}).as_int() == 1);
    }

    SUBCASE("a group of one is just the caller") {
        auto only = client.spawn(1, "Counter", {});
        auto holder = client.spawn(0, "RefList",
                                   {Value::list({Value::ref(only.wire())})});
        auto copied = parcall::deep_copy_group(client, holder);
        REQUIRE(copied.size() == 1);
        CHECK(copied[0].same_object(only));
    }

    SUBCASE("holders without the list interface are rejected") {
        auto counter = client.spawn(1, "Counter", {}); // no len/get
        try {
            parcall::deep_copy_group(client, counter);
            FAIL("expected RemoteError");
        } catch (const RemoteError& e) {
            CHECK(e.code() == ErrorCode::BadArgs);
        }

        auto buffer = client.spawn(1, "DoubleBuffer", {Value::integer(4)}); // get returns Float
        try {
            parcall::deep_copy_group(client, buffer);
            FAIL("expected RemoteError");
        } catch (const RemoteError& e) {
            CHECK(e.code() == ErrorCode::BadArgs);
        }

        auto gone = client.spawn(1, "RefList", {Value::list({})});
        client.destroy(gone);
        try {
            parcall::deep_copy_group(client, gone);
            FAIL("expected RemoteError");
        } catch (const RemoteError& e) {
            CHECK(e.code() == ErrorCode::UnknownObject);
        }
    }
}
