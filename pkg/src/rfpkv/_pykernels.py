"""Pure-Python hot kernels: frame codec and latency bucketing.

``rfpkv._kernels`` (Cython) implements the same functions; ``rfpkv.kernels``
picks whichever is available.  Both must stay byte-for-byte identical.
"""

import math
import struct

from rfpkv.errors import FrameTooLarge, MalformedFrame, ProtocolCorruption

__all__ = [
    "encode_request", "parse_request", "encode_get_body", "encode_status_body",
    "decode_body", "response_header", "fetch_size", "hist_bucket",
]

OP_GET = 0
OP_PUT = 1

ST_OK = 0
ST_NOT_FOUND = 1
ST_ERROR = 2

FLAG = 0x8000
LEN_MASK = 0x7FFF
MAX_BODY = 0x7FFF

# GET responses drop the status byte; these val_len values stand in for it
VLEN_NOT_FOUND = 0xFFFF
VLEN_ERROR = 0xFFFE

_HDR = struct.Struct(">H")
_REQ_HEAD = struct.Struct(">HBH")
_STATUS_HEAD = struct.Struct(">BH")

HIST_MIN_NS = 100.0
HIST_GROWTH = 1.02
HIST_BUCKETS = int(math.ceil(math.log(1e8 / HIST_MIN_NS) / math.log(HIST_GROWTH)))
_LOG_GROWTH = math.log(HIST_GROWTH)


def encode_request(opcode, key, value, capacity):
    klen = len(key)
    if opcode == OP_GET:
        if value is not None:
            raise ValueError("GET requests carry no value")
        blen = 3 + klen
        if blen + 3 > capacity or blen > MAX_BODY:
            raise FrameTooLarge(f"{blen + 3}-byte frame exceeds {capacity}-byte buffer")
        return _REQ_HEAD.pack(FLAG | blen, OP_GET, klen) + key + b"\x01"
    if opcode == OP_PUT:
        if value is None:
            raise ValueError("PUT requests need a value")
        vlen = len(value)
        blen = 5 + klen + vlen
        if blen + 3 > capacity or blen > MAX_BODY:
            raise FrameTooLarge(f"{blen + 3}-byte frame exceeds {capacity}-byte buffer")
        return _REQ_HEAD.pack(FLAG | blen, OP_PUT, klen) + key + _HDR.pack(vlen) + value + b"\x01"
    raise ValueError(f"unknown opcode {opcode}")


def parse_request(buf, capacity):
    """Decode a request buffer.

    Returns ``None`` unless both the arrival flag and the tail byte are set,
    otherwise ``(opcode, key, value, frame_length)``.
    """
    if len(buf) < 2:
        raise MalformedFrame("buffer shorter than a frame header")
    hdr = (buf[0] << 8) | buf[1]
    if not hdr & FLAG:
        return None
    blen = hdr & LEN_MASK
    if blen < 3 or blen + 3 > capacity or blen + 3 > len(buf):
        if buf[1] == 0:        # low header byte may not have landed yet
            return None
        raise MalformedFrame(f"body length {blen} does not fit a {capacity}-byte buffer")
    tail = buf[2 + blen]
    if tail == 0:
        return None
    if tail != 1:
        raise MalformedFrame(f"tail byte is {tail}, expected 1")
    opcode = buf[2]
    klen = (buf[3] << 8) | buf[4]
    if opcode == OP_GET:
        if blen != 3 + klen:
            raise MalformedFrame("GET body length disagrees with key length")
        return OP_GET, bytes(buf[5:5 + klen]), None, blen + 3
    if opcode == OP_PUT:
        if 5 + klen > blen:
            raise MalformedFrame("PUT key runs past the body")
        voff = 5 + klen
        vlen = (buf[voff] << 8) | buf[voff + 1]
        if blen != 5 + klen + vlen:
            raise MalformedFrame("PUT body length disagrees with key/value lengths")
        return OP_PUT, bytes(buf[5:5 + klen]), bytes(buf[voff + 2:voff + 2 + vlen]), blen + 3
    raise MalformedFrame(f"unknown opcode {opcode}")


def encode_get_body(status, value):
    if status == ST_OK:
        return _HDR.pack(len(value)) + value
    if status == ST_NOT_FOUND:
        return b"\xff\xff"
    return b"\xff\xfe"


def encode_status_body(status, value=b""):
    return _STATUS_HEAD.pack(status, len(value)) + value


def decode_body(body, is_get):
    """Return ``(status, value)``; value is None unless status is ok."""
    n = len(body)
    if is_get:
        if n < 2:
            raise ProtocolCorruption("GET response body shorter than its length field")
        vlen = (body[0] << 8) | body[1]
        if vlen == VLEN_NOT_FOUND:
            return ST_NOT_FOUND, None
        if vlen == VLEN_ERROR:
            return ST_ERROR, None
        if n != 2 + vlen:
            raise ProtocolCorruption("GET response size disagrees with value length")
        return ST_OK, bytes(body[2:])
    if n < 3:
        raise ProtocolCorruption("response body shorter than status + length")
    vlen = (body[1] << 8) | body[2]
    if n != 3 + vlen:
        raise ProtocolCorruption("response size disagrees with value length")
    return body[0], (bytes(body[3:]) if body[0] == ST_OK and vlen else None)


def response_header(size):
    return _HDR.pack(FLAG | size)


def fetch_size(data, slot_capacity):
    """Body size announced by a fetched slot header, or -1 if not done."""
    if len(data) < 2:
        raise ProtocolCorruption("fetched fewer than two header bytes")
    hdr = (data[0] << 8) | data[1]
    if not hdr & FLAG:
        return -1
    size = hdr & LEN_MASK
    if size > slot_capacity - 2:
        raise ProtocolCorruption(f"done flag with body size {size} > slot capacity")
    return size


def hist_bucket(ns):
    """Log bucket index; 0 holds everything below HIST_MIN_NS."""
    if ns < HIST_MIN_NS:
        return 0
    i = int(math.log(ns / HIST_MIN_NS) / _LOG_GROWTH) + 1
    return i if i <= HIST_BUCKETS else HIST_BUCKETS + 1
