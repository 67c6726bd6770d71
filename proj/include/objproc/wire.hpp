#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "objproc/errors.hpp"

// Message format and value encoding shared by every backend. The frame layout
// is documented bit-exactly in docs/protocol.md; golden frames live under
// tests/golden/.

namespace objproc::wire {

// Remote object handle as it travels on the wire.
struct Ref {
    std::uint32_t machine_id = 0;
    std::uint64_t object_id = 0;

    bool operator==(const Ref&) const = default;
};

// Lists nested deeper than this are rejected on both encode and decode.
inline constexpr int kMaxListDepth = 16;

// Tagged value. Tags match the wire encoding.
class Value {
public:
    enum class Kind : std::uint8_t {
        Int = 0x01,
        Float = 0x02,
        Bytes = 0x03,
        Str = 0x04,
        Ref = 0x05,
        List = 0x06,
        Unit = 0x07,
    };

    using List = std::vector<Value>;

    Value() : rep_(Unit{}) {}

    static Value integer(std::int64_t v) { return Value(Rep(v)); }
    static Value real(double v) { return Value(Rep(v)); }
    static Value bytes(std::vector<std::uint8_t> v) { return Value(Rep(std::move(v))); }
    static Value str(std::string v) { return Value(Rep(std::move(v))); }
    static Value ref(Ref v) { return Value(Rep(v)); }
    static Value list(List v) { return Value(Rep(std::move(v))); }
    static Value unit() { return Value(); }

    Kind kind() const noexcept;

    // Accessors raise BadArgs on a kind mismatch; server-side argument
    // parsing relies on this.
    std::int64_t as_int() const;
    double as_float() const;
    const std::vector<std::uint8_t>& as_bytes() const;
    const std::string& as_str() const;
    Ref as_ref() const;
    const List& as_list() const;

    // Structural equality; Float compares by bit pattern so NaNs and signed
    // zeros round-trip exactly.
    bool operator==(const Value& other) const;

private:
    struct Unit {
        bool operator==(const Unit&) const = default;
    };
    using Rep = std::variant<std::int64_t, double, std::vector<std::uint8_t>, std::string, Ref,
                             List, Unit>;

    explicit Value(Rep rep) : rep_(std::move(rep)) {}

    Rep rep_;
};

enum class MsgType : std::uint8_t {
    Spawn = 0,
    SpawnReply = 1,
    Invoke = 2,
    InvokeReply = 3,
    Destroy = 4,
    DestroyReply = 5,
    Error = 6,
};

const char* msg_type_name(MsgType t) noexcept;

// One protocol unit. Only the fields relevant to `type` are meaningful; the
// rest stay default so whole-struct comparison works in tests.
//
//   Spawn        class_name, args (List)
//   SpawnReply   target
//   Invoke       target, method_name, args (List)
//   InvokeReply  result
//   Destroy      target
//   DestroyReply (no payload fields; the body carries a Unit)
//   Error        error_code, error_detail
struct Message {
    MsgType type = MsgType::Error;
    std::uint64_t request_id = 0;

    std::string class_name;
    std::string method_name;
    Ref target;
    Value args = Value::list({});
    Value result;
    std::int64_t error_code = 0;
    std::string error_detail;

    bool operator==(const Message&) const = default;

    static Message spawn(std::uint64_t rid, std::string cls, Value::List ctor_args);
    static Message spawn_reply(std::uint64_t rid, Ref ref);
    static Message invoke(std::uint64_t rid, Ref ref, std::string method, Value::List call_args);
    static Message invoke_reply(std::uint64_t rid, Value result);
    static Message destroy(std::uint64_t rid, Ref ref);
    static Message destroy_reply(std::uint64_t rid);
    static Message error(std::uint64_t rid, ErrorCode code, std::string detail);
};

// Full frame: 4-byte little-endian payload length, then the payload.
std::vector<std::uint8_t> encode_message(const Message& m);

// Inverse of encode_message on one complete frame (length prefix included).
Message decode_message(std::span<const std::uint8_t> frame);

// Value-level encoding, exposed for the persistence manifest.
void encode_value(const Value& v, std::vector<std::uint8_t>& out);
Value decode_value(std::span<const std::uint8_t> bytes);

// Splits a concatenation of frames on their length prefixes. Rejects trailing
// garbage and truncated frames.
std::vector<std::span<const std::uint8_t>> split_frames(std::span<const std::uint8_t> bytes);

bool valid_utf8(std::string_view s) noexcept;

} // namespace objproc::wire
