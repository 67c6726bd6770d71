#include "objproc/wire.hpp"

#include <bit>
#include <cstring>
#include <limits>

namespace objproc::wire {

namespace {

constexpr std::uint64_t kMaxPayload = 0xFFFFFFFFull;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    std::span<const std::uint8_t> raw(std::size_t n) {
        need(n);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const noexcept { return pos_ == data_.size(); }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (remaining() < n)
            throw DecodeError("truncated payload");
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

void encode_value_impl(const Value& v, std::vector<std::uint8_t>& out, int depth) {
    out.push_back(static_cast<std::uint8_t>(v.kind()));
    switch (v.kind()) {
    case Value::Kind::Int:
        put_u64(out, static_cast<std::uint64_t>(v.as_int()));
        break;
    case Value::Kind::Float:
        put_u64(out, std::bit_cast<std::uint64_t>(v.as_float()));
        break;
    case Value::Kind::Bytes: {
        const auto& b = v.as_bytes();
        if (b.size() > kMaxPayload)
            throw EncodeError("byte string too long");
        put_u32(out, static_cast<std::uint32_t>(b.size()));
        out.insert(out.end(), b.begin(), b.end());
        break;
    }
    case Value::Kind::Str: {
        const auto& s = v.as_str();
        if (s.size() > kMaxPayload)
            throw EncodeError("string too long");
        if (!valid_utf8(s))
            throw EncodeError("string is not valid UTF-8");
        put_u32(out, static_cast<std::uint32_t>(s.size()));
        out.insert(out.end(), s.begin(), s.end());
        break;
    }
    case Value::Kind::Ref: {
        Ref r = v.as_ref();
        put_u32(out, r.machine_id);
        put_u64(out, r.object_id);
        break;
    }
    case Value::Kind::List: {
        if (depth + 1 > kMaxListDepth)
            throw EncodeError("list nesting exceeds depth 16");
        const auto& items = v.as_list();
        if (items.size() > kMaxPayload)
            throw EncodeError("list too long");
        put_u32(out, static_cast<std::uint32_t>(items.size()));
        for (const auto& item : items)
            encode_value_impl(item, out, depth + 1);
        break;
    }
    case Value::Kind::Unit:
        break;
    }
}

Value decode_value_impl(Reader& r, int depth) {
    auto tag = r.u8();
    switch (static_cast<Value::Kind>(tag)) {
    case Value::Kind::Int:
        return Value::integer(static_cast<std::int64_t>(r.u64()));
    case Value::Kind::Float:
        return Value::real(std::bit_cast<double>(r.u64()));
    case Value::Kind::Bytes: {
        auto n = r.u32();
        auto raw = r.raw(n);
        return Value::bytes(std::vector<std::uint8_t>(raw.begin(), raw.end()));
    }
    case Value::Kind::Str: {
        auto n = r.u32();
        auto raw = r.raw(n);
        std::string s(raw.begin(), raw.end());
        if (!valid_utf8(s))
            throw DecodeError("string is not valid UTF-8");
        return Value::str(std::move(s));
    }
    case Value::Kind::Ref: {
        Ref ref;
        ref.machine_id = r.u32();
        ref.object_id = r.u64();
        return Value::ref(ref);
    }
    case Value::Kind::List: {
        if (depth + 1 > kMaxListDepth)
            throw DecodeError("list nesting exceeds depth 16");
        auto n = r.u32();
        Value::List items;
        items.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i)
            items.push_back(decode_value_impl(r, depth + 1));
        return Value::list(std::move(items));
    }
    case Value::Kind::Unit:
        return Value::unit();
    }
    throw DecodeError("unknown value tag " + std::to_string(tag));
}

std::string decode_name(Reader& r) {
    Value v = decode_value_impl(r, 0);
    if (v.kind() != Value::Kind::Str)
        throw DecodeError("expected string field");
    return v.as_str();
}

Ref decode_ref_field(Reader& r) {
    Value v = decode_value_impl(r, 0);
    if (v.kind() != Value::Kind::Ref)
        throw DecodeError("expected ref field");
    return v.as_ref();
}

Value decode_list_field(Reader& r) {
    Value v = decode_value_impl(r, 0);
    if (v.kind() != Value::Kind::List)
        throw DecodeError("expected list field");
    return v;
}

} // namespace

Value::Kind Value::kind() const noexcept {
    switch (rep_.index()) {
    case 0: return Kind::Int;
    case 1: return Kind::Float;
    case 2: return Kind::Bytes;
    case 3: return Kind::Str;
    case 4: return Kind::Ref;
    case 5: return Kind::List;
    default: return Kind::Unit;
    }
}

namespace {
[[noreturn]] void kind_mismatch(const char* wanted, Value::Kind got) {
    raise(ErrorCode::BadArgs,
          std::string("expected ") + wanted + ", got value kind " +
              std::to_string(static_cast<int>(got)));
}
} // namespace

std::int64_t Value::as_int() const {
    if (auto* p = std::get_if<std::int64_t>(&rep_))
        return *p;
    kind_mismatch("Int", kind());
}

double Value::as_float() const {
    if (auto* p = std::get_if<double>(&rep_))
        return *p;
    kind_mismatch("Float", kind());
}

const std::vector<std::uint8_t>& Value::as_bytes() const {
    if (auto* p = std::get_if<std::vector<std::uint8_t>>(&rep_))
        return *p;
    kind_mismatch("Bytes", kind());
}

const std::string& Value::as_str() const {
    if (auto* p = std::get_if<std::string>(&rep_))
        return *p;
    kind_mismatch("Str", kind());
}

Ref Value::as_ref() const {
    if (auto* p = std::get_if<Ref>(&rep_))
        return *p;
    kind_mismatch("Ref", kind());
}

const Value::List& Value::as_list() const {
    if (auto* p = std::get_if<List>(&rep_))
        return *p;
    kind_mismatch("List", kind());
}

bool Value::operator==(const Value& other) const {
    if (kind() != other.kind())
        return false;
    if (kind() == Kind::Float)
        return std::bit_cast<std::uint64_t>(as_float()) ==
               std::bit_cast<std::uint64_t>(other.as_float());
    return rep_ == other.rep_;
}

const char* msg_type_name(MsgType t) noexcept {
    switch (t) {
    case MsgType::Spawn: return "Spawn";
    case MsgType::SpawnReply: return "SpawnReply";
    case MsgType::Invoke: return "Invoke";
    case MsgType::InvokeReply: return "InvokeReply";
    case MsgType::Destroy: return "Destroy";
    case MsgType::DestroyReply: return "DestroyReply";
    case MsgType::Error: return "Error";
    }
    return "?";
}

Message Message::spawn(std::uint64_t rid, std::string cls, Value::List ctor_args) {
    Message m;
    m.type = MsgType::Spawn;
    m.request_id = rid;
    m.class_name = std::move(cls);
    m.args = Value::list(std::move(ctor_args));
    return m;
}

Message Message::spawn_reply(std::uint64_t rid, Ref ref) {
    Message m;
    m.type = MsgType::SpawnReply;
    m.request_id = rid;
    m.target = ref;
    return m;
}

Message Message::invoke(std::uint64_t rid, Ref ref, std::string method, Value::List call_args) {
    Message m;
    m.type = MsgType::Invoke;
    m.request_id = rid;
    m.target = ref;
    m.method_name = std::move(method);
    m.args = Value::list(std::move(call_args));
    return m;
}

Message Message::invoke_reply(std::uint64_t rid, Value result) {
    Message m;
    m.type = MsgType::InvokeReply;
    m.request_id = rid;
    m.result = std::move(result);
    return m;
}

Message Message::destroy(std::uint64_t rid, Ref ref) {
    Message m;
    m.type = MsgType::Destroy;
    m.request_id = rid;
    m.target = ref;
    return m;
}

Message Message::destroy_reply(std::uint64_t rid) {
    Message m;
    m.type = MsgType::DestroyReply;
    m.request_id = rid;
    return m;
}

Message Message::error(std::uint64_t rid, ErrorCode code, std::string detail) {
    Message m;
    m.type = MsgType::Error;
    m.request_id = rid;
    m.error_code = static_cast<std::int64_t>(code);
    m.error_detail = std::move(detail);
    return m;
}

void encode_value(const Value& v, std::vector<std::uint8_t>& out) {
    encode_value_impl(v, out, 0);
}

Value decode_value(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    Value v = decode_value_impl(r, 0);
    if (!r.done())
        throw DecodeError("trailing bytes after value");
    return v;
}

std::vector<std::uint8_t> encode_message(const Message& m) {
    std::vector<std::uint8_t> payload;
    payload.push_back(static_cast<std::uint8_t>(m.type));
    put_u64(payload, m.request_id);

    switch (m.type) {
    case MsgType::Spawn:
        encode_value_impl(Value::str(m.class_name), payload, 0);
        if (m.args.kind() != Value::Kind::List)
            throw EncodeError("Spawn args must be a List");
        encode_value_impl(m.args, payload, 0);
        break;
    case MsgType::SpawnReply:
        encode_value_impl(Value::ref(m.target), payload, 0);
        break;
    case MsgType::Invoke:
        encode_value_impl(Value::ref(m.target), payload, 0);
        encode_value_impl(Value::str(m.method_name), payload, 0);
        if (m.args.kind() != Value::Kind::List)
            throw EncodeError("Invoke args must be a List");
        encode_value_impl(m.args, payload, 0);
        break;
    case MsgType::InvokeReply:
        encode_value_impl(m.result, payload, 0);
        break;
    case MsgType::Destroy:
        encode_value_impl(Value::ref(m.target), payload, 0);
        break;
    case MsgType::DestroyReply:
        encode_value_impl(Value::unit(), payload, 0);
        break;
    case MsgType::Error:
        encode_value_impl(Value::integer(m.error_code), payload, 0);
        encode_value_impl(Value::str(m.error_detail), payload, 0);
        break;
    }

    if (payload.size() > kMaxPayload)
        throw EncodeError("payload exceeds 2^32-1 bytes");

    std::vector<std::uint8_t> frame;
    frame.reserve(4 + payload.size());
    put_u32(frame, static_cast<std::uint32_t>(payload.size()));
    frame.insert(frame.end(), payload.begin(), payload.end());
    return frame;
}

Message decode_message(std::span<const std::uint8_t> frame) {
    if (frame.size() < 4)
        throw DecodeError("frame shorter than length prefix");
    Reader prefix(frame.first(4));
    std::uint32_t declared = prefix.u32();
    if (frame.size() - 4 != declared)
        throw DecodeError("frame length mismatch: declared " + std::to_string(declared) +
                          ", got " + std::to_string(frame.size() - 4));

    Reader r(frame.subspan(4));
    auto tag = r.u8();
    if (tag > static_cast<std::uint8_t>(MsgType::Error))
        throw DecodeError("unknown message type tag " + std::to_string(tag));

    Message m;
    m.type = static_cast<MsgType>(tag);
    m.request_id = r.u64();

    switch (m.type) {
    case MsgType::Spawn:
        m.class_name = decode_name(r);
        m.args = decode_list_field(r);
        break;
    case MsgType::SpawnReply:
        m.target = decode_ref_field(r);
        break;
    case MsgType::Invoke:
        m.target = decode_ref_field(r);
        m.method_name = decode_name(r);
        m.args = decode_list_field(r);
        break;
    case MsgType::InvokeReply:
        m.result = decode_value_impl(r, 0);
        break;
    case MsgType::Destroy:
        m.target = decode_ref_field(r);
        break;
    case MsgType::DestroyReply: {
        Value v = decode_value_impl(r, 0);
        if (v.kind() != Value::Kind::Unit)
            throw DecodeError("DestroyReply body must be Unit");
        break;
    }
    case MsgType::Error: {
        Value code = decode_value_impl(r, 0);
        if (code.kind() != Value::Kind::Int)
            throw DecodeError("Error code must be Int");
        m.error_code = code.as_int();
        m.error_detail = decode_name(r);
        break;
    }
    }

    if (!r.done())
        throw DecodeError("trailing bytes after message body");
    return m;
}

std::vector<std::span<const std::uint8_t>> split_frames(std::span<const std::uint8_t> bytes) {
    std::vector<std::span<const std::uint8_t>> frames;
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        if (bytes.size() - pos < 4)
            throw DecodeError("truncated frame header");
        std::uint32_t len = 0;
        for (int i = 0; i < 4; ++i)
            len |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        if (bytes.size() - pos - 4 < len)
            throw DecodeError("truncated frame payload");
        frames.push_back(bytes.subspan(pos, 4 + std::size_t(len)));
        pos += 4 + std::size_t(len);
    }
    return frames;
}

bool valid_utf8(std::string_view s) noexcept {
    const auto* p = reinterpret_cast<const unsigned char*>(s.data());
    const auto* end = p + s.size();
    while (p < end) {
        unsigned char c = *p;
        if (c < 0x80) {
            ++p;
            continue;
        }
        int extra;
        std::uint32_t cp;
        if ((c & 0xE0) == 0xC0) {
            extra = 1;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            extra = 2;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            extra = 3;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (end - p < extra + 1)
            return false;
        for (int i = 1; i <= extra; ++i) {
            if ((p[i] & 0xC0) != 0x80)
                return false;
            cp = (cp << 6) | (p[i] & 0x3F);
        }
        // Overlong forms, surrogates and values past U+10FFFF are invalid.
        static constexpr std::uint32_t min_cp[4] = {0, 0x80, 0x800, 0x10000};
        if (cp < min_cp[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
            return false;
        p += extra + 1;
    }
    return true;
}

} // namespace objproc::wire
