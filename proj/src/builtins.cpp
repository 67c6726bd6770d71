#include "objproc/argcheck.hpp"
#include "objproc/runtime.hpp"

// Built-in classes. DoubleBuffer is the remote primitive block of doubles;
// RefList publishes a group of remote refs so peers can deep-copy it.

namespace objproc::runtime {

namespace {

class DoubleBuffer final : public Instance {
public:
    explicit DoubleBuffer(std::int64_t n) : data_(static_cast<std::size_t>(n), 0.0) {}

    double get(std::int64_t i) const {
        check(i);
        return data_[static_cast<std::size_t>(i)];
    }

    void set(std::int64_t i, double v) {
        check(i);
        data_[static_cast<std::size_t>(i)] = v;
    }

    std::int64_t len() const { return static_cast<std::int64_t>(data_.size()); }

private:
    void check(std::int64_t i) const {
        if (i < 0 || i >= len())
            raise(ErrorCode::OutOfBounds, "index " + std::to_string(i) + " outside buffer of " +
                                              std::to_string(data_.size()) + " doubles");
    }

    std::vector<double> data_;
};

class RefList final : public Instance {
public:
    explicit RefList(std::vector<wire::Ref> refs) : refs_(std::move(refs)) {}

    std::int64_t len() const { return static_cast<std::int64_t>(refs_.size()); }

    wire::Ref get(std::int64_t i) const {
        if (i < 0 || i >= len())
            raise(ErrorCode::OutOfBounds, "index " + std::to_string(i) + " outside list of " +
                                              std::to_string(refs_.size()) + " refs");
        return refs_[static_cast<std::size_t>(i)];
    }

private:
    std::vector<wire::Ref> refs_;
};

template <class T> T& self(Instance& obj) {
    auto* p = dynamic_cast<T*>(&obj);
    if (!p)
        raise(ErrorCode::Internal, "instance class mismatch");
    return *p;
}

} // namespace

void register_builtin_classes(ClassRegistry& reg) {
    {
        ClassDef def;
        def.ctor = [](InvokeContext&, const wire::Value::List& args) {
            expect_args(args, 1, "DoubleBuffer(n)");
            return std::make_unique<DoubleBuffer>(positive_int(args[0], "n"));
        };
        def.methods["get"] = [](Instance& obj, InvokeContext&, const wire::Value::List& args) {
            expect_args(args, 1, "get(i)");
            return wire::Value::real(self<DoubleBuffer>(obj).get(args[0].as_int()));
        };
        def.methods["set"] = [](Instance& obj, InvokeContext&, const wire::Value::List& args) {
            expect_args(args, 2, "set(i, v)");
            self<DoubleBuffer>(obj).set(args[0].as_int(), args[1].as_float());
            return wire::Value::unit();
        };
        def.methods["len"] = [](Instance& obj, InvokeContext&, const wire::Value::List& args) {
            expect_args(args, 0, "len()");
            return wire::Value::integer(self<DoubleBuffer>(obj).len());
        };
        reg.register_class("DoubleBuffer", std::move(def));
    }
    {
        ClassDef def;
        def.ctor = [](InvokeContext&, const wire::Value::List& args) {
            expect_args(args, 1, "RefList(refs)");
            std::vector<wire::Ref> refs;
            for (const auto& v : args[0].as_list())
                refs.push_back(v.as_ref());
            return std::make_unique<RefList>(std::move(refs));
        };
        def.methods["len"] = [](Instance& obj, InvokeContext&, const wire::Value::List& args) {
            expect_args(args, 0, "len()");
            return wire::Value::integer(self<RefList>(obj).len());
        };
        def.methods["get"] = [](Instance& obj, InvokeContext&, const wire::Value::List& args) {
            expect_args(args, 1, "get(i)");
            return wire::Value::ref(self<RefList>(obj).get(args[0].as_int()));
        };
        reg.register_class("RefList", std::move(def));
    }
}

} // namespace objproc::runtime
