#!/usr/bin/env python3
"""Builds the golden protocol frames byte by byte, independently of the C++
encoder. Run from this directory to (re)generate the .bin files; the test
suites assert that the library produces exactly these bytes.

Frame: 4-byte LE payload length | payload.
Payload: 1-byte message type | 8-byte LE request id | body of tagged values.
Tags: Int=0x01 (+8B LE two's-complement), Float=0x02 (+8B LE IEEE-754),
Bytes=0x03 (+4B LE length + raw), Str=0x04 (+4B LE length + UTF-8),
Ref=0x05 (+4B LE machine + 8B LE object), List=0x06 (+4B LE count + items),
Unit=0x07.
"""

import struct

SPAWN, SPAWN_REPLY, INVOKE, INVOKE_REPLY, DESTROY, DESTROY_REPLY, ERROR = range(7)


def v_int(n):
    return b"\x01" + struct.pack("<q", n)


def v_float(x):
    return b"\x02" + struct.pack("<d", x)


def v_bytes(b):
    return b"\x03" + struct.pack("<I", len(b)) + b


def v_str(s):
    raw = s.encode("utf-8")
    return b"\x04" + struct.pack("<I", len(raw)) + raw


def v_ref(machine, obj):
    return b"\x05" + struct.pack("<I", machine) + struct.pack("<Q", obj)


def v_list(items):
    return b"\x06" + struct.pack("<I", len(items)) + b"".join(items)


V_UNIT = b"\x07"


def frame(msg_type, request_id, body):
    payload = bytes([msg_type]) + struct.pack("<Q", request_id) + body
    return struct.pack("<I", len(payload)) + payload


FRAMES = {
    "spawn.bin": frame(
        SPAWN, 1,
        v_str("PageDevice") + v_list([v_str("pagefile"), v_int(10), v_int(1024)])),
    "spawn_reply.bin": frame(SPAWN_REPLY, 1, v_ref(1, 1)),
    "invoke.bin": frame(
        INVOKE, 2,
        v_ref(1, 1) + v_str("write") + v_list([v_bytes(b"\xde\xad\xbe\xef"), v_int(3)])),
    "invoke_reply.bin": frame(INVOKE_REPLY, 2, v_float(3.1415)),
    "destroy.bin": frame(DESTROY, 3, v_ref(1, 1)),
    "destroy_reply.bin": frame(DESTROY_REPLY, 0, V_UNIT),
    "error.bin": frame(ERROR, 7, v_int(6) + v_str("page index 17 out of range")),
}


def main():
    for name, data in FRAMES.items():
        with open(name, "wb") as f:
            f.write(data)
        print(f"{name}: {len(data)} bytes: {data.hex(' ')}")
    # sanity: the DestroyReply frame must be 4 (length) + 10 (payload) bytes
    assert len(FRAMES["destroy_reply.bin"]) == 14
    assert FRAMES["destroy_reply.bin"][:4] == b"\x0a\x00\x00\x00"


if __name__ == "__main__":
    main()
