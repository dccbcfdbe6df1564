"""Round-trip and malformed-input checks for the binary record layer."""

import math
import struct

import pytest

from grainflow.mesh import NULL_ID, PNODE, LNODE, SNODE, BND_TANGENT_X
from grainflow.wire import (
    WIRE_VERSION, RT_ELEMENT, MODE_ARMS, MODE_CHAIN, WireError,
    Pair, Triplet, NodePayload, ElementPacket, TempNodeRequest,
    TempNodeReply, FlipNotice, encode_records, decode_records,
)


def roundtrip(records):
    buf = encode_records(records)
    out = decode_records(buf)
    assert encode_records(out) == buf
    return out


def test_empty_stream():
    assert decode_records(b"") == []
    assert encode_records([]) == b""


def test_pair_triplet_flip_roundtrip():
    recs = [Pair(7, 105), Pair(NULL_ID, 0), Triplet(4, 9, 2),
            Triplet(11, 11, 0), FlipNotice(42), FlipNotice(NULL_ID)]
    assert roundtrip(recs) == recs


def test_temp_request_roundtrip():
    recs = [TempNodeRequest(MODE_CHAIN, 3, 17, 28),
            TempNodeRequest(MODE_CHAIN, 3, 17),
            TempNodeRequest(MODE_ARMS, NULL_ID, 99)]
    assert roundtrip(recs) == recs


def test_temp_reply_float_bits_survive():
    # values with no short decimal form; bit patterns must be preserved
    x = math.pi
    y = float.fromhex("0x1.fffffffffffffp-3")
    tiny = 5e-324
    recs = [TempNodeReply(MODE_CHAIN, 6, 2, ((10, x, y), (11, tiny, -0.0))),
            TempNodeReply(MODE_ARMS, NULL_ID, 2, ())]
    out = roundtrip(recs)
    (_, rx, ry), (_, rt, rz) = out[0].samples
    assert struct.pack("<d", rx) == struct.pack("<d", x)
    assert struct.pack("<d", ry) == struct.pack("<d", y)
    assert struct.pack("<d", rt) == struct.pack("<d", tiny)
    assert math.copysign(1.0, rz) == -1.0


def test_element_packet_roundtrip():
    nodes = (
        NodePayload(5, 0.25, 0.5, SNODE, 12, -1),
        NodePayload(6, 1.0 / 3.0, 0.1, LNODE, 4, -1, shared=(0, 2),
                    prv=9, nxt=NULL_ID, line=4),
        NodePayload(7, 0.0, 0.0, PNODE, 3, BND_TANGENT_X, shared=(1,),
                    connections=((4, 6), (8, NULL_ID))),
    )
    recs = [ElementPacket(40, 12, nodes), ElementPacket(41, 12, nodes[:1] * 3)]
    out = roundtrip(recs)
    assert out == recs
    assert out[0].nodes[1].shared == (0, 2)
    assert out[0].nodes[2].connections == ((4, 6), (8, NULL_ID))


def test_mixed_stream_preserves_order():
    recs = [Pair(1, 2), ElementPacket(3, 4, ()), FlipNotice(5),
            TempNodeReply(MODE_CHAIN, 1, 2, ((3, 0.5, 0.25),)),
            Triplet(6, 7, 1)]
    assert roundtrip(recs) == recs


def test_bad_version_rejected():
    buf = bytearray(encode_records([Pair(1, 2)]))
    buf[0] = WIRE_VERSION + 1
    with pytest.raises(WireError, match="version"):
        decode_records(bytes(buf))


def test_truncated_header_rejected():
    buf = encode_records([Pair(1, 2)])
    with pytest.raises(WireError, match="truncated"):
        decode_records(buf[:3])


def test_truncated_payload_rejected():
    buf = encode_records([Pair(1, 2)])
    with pytest.raises(WireError, match="truncated"):
        decode_records(buf[:-1])


def test_unknown_record_type_rejected():
    body = struct.pack("<qq", 1, 2)
    buf = struct.pack("<BBI", WIRE_VERSION, 200, len(body)) + body
    with pytest.raises(WireError, match="unknown record type"):
        decode_records(buf)


def test_trailing_bytes_in_element_rejected():
    buf = bytearray(encode_records([ElementPacket(1, 2, ())]))
    # grow the declared payload and append junk inside the frame
    _, _, length = struct.unpack_from("<BBI", buf)
    struct.pack_into("<BBI", buf, 0, WIRE_VERSION, RT_ELEMENT, length + 2)
    buf += b"\x00\x00"
    with pytest.raises(WireError, match="trailing"):
        decode_records(bytes(buf))


def test_short_fixed_payload_rejected():
    body = struct.pack("<q", 1)  # Pair needs two i64
    buf = struct.pack("<BBI", WIRE_VERSION, 1, len(body)) + body
    with pytest.raises(WireError, match="malformed"):
        decode_records(buf)
