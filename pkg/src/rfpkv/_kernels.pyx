# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled frame codec and latency bucketing; mirrors ``rfpkv._pykernels``."""

from libc.math cimport log
from libc.string cimport memcpy
from cpython.bytes cimport (
    PyBytes_AS_STRING, PyBytes_CheckExact, PyBytes_FromStringAndSize, PyBytes_GET_SIZE,
)
from cpython.bytearray cimport (
    PyByteArray_AS_STRING, PyByteArray_CheckExact, PyByteArray_GET_SIZE,
)

from rfpkv.errors import FrameTooLarge, MalformedFrame, ProtocolCorruption
from rfpkv._pykernels import HIST_BUCKETS as _HB, HIST_GROWTH as _HG, HIST_MIN_NS as _HM

BACKEND = "cython"

__all__ = [
    "encode_request", "parse_request", "encode_get_body", "encode_status_body",
    "decode_body", "response_header", "fetch_size", "hist_bucket",
]

cdef enum:
    OP_GET = 0
    OP_PUT = 1
    ST_OK = 0
    ST_NOT_FOUND = 1
    ST_ERROR = 2
    FLAG = 0x8000
    LEN_MASK = 0x7FFF
    MAX_BODY = 0x7FFF
    VLEN_NOT_FOUND = 0xFFFF
    VLEN_ERROR = 0xFFFE

cdef double HIST_MIN_NS = _HM
cdef double LOG_GROWTH = log(_HG)
cdef long HIST_BUCKETS = _HB


cdef inline void _put16(char* p, unsigned int v):
    p[0] = <char>((v >> 8) & 0xFF)
    p[1] = <char>(v & 0xFF)


cdef inline const unsigned char* _view(object obj, Py_ssize_t* n) except NULL:
    # direct access for bytes/bytearray; anything else goes through the buffer protocol
    if PyBytes_CheckExact(obj):
        n[0] = PyBytes_GET_SIZE(obj)
        return <const unsigned char*>PyBytes_AS_STRING(obj)
    if PyByteArray_CheckExact(obj):
        n[0] = PyByteArray_GET_SIZE(obj)
        return <const unsigned char*>PyByteArray_AS_STRING(obj)
    raise TypeError(f"expected bytes or bytearray, not {type(obj).__name__}")


cdef inline bytes _slice(const unsigned char* p, Py_ssize_t n):
    return PyBytes_FromStringAndSize(<const char*>p, n)


def encode_request(int opcode, bytes key, value, Py_ssize_t capacity):
    cdef Py_ssize_t klen = len(key), vlen, blen
    cdef bytes out
    cdef char* p
    cdef const unsigned char* vbuf
    if opcode == OP_GET:
        if value is not None:
            raise ValueError("GET requests carry no value")
        blen = 3 + klen
        if blen + 3 > capacity or blen > MAX_BODY:
            raise FrameTooLarge(f"{blen + 3}-byte frame exceeds {capacity}-byte buffer")
        out = PyBytes_FromStringAndSize(NULL, blen + 3)
        p = PyBytes_AS_STRING(out)
        _put16(p, FLAG | blen)
        p[2] = OP_GET
        _put16(p + 3, klen)
        memcpy(p + 5, PyBytes_AS_STRING(key), klen)
        p[5 + klen] = 1
        return out
    if opcode == OP_PUT:
        if value is None:
            raise ValueError("PUT requests need a value")
        vbuf = _view(value, &vlen)
        blen = 5 + klen + vlen
        if blen + 3 > capacity or blen > MAX_BODY:
            raise FrameTooLarge(f"{blen + 3}-byte frame exceeds {capacity}-byte buffer")
        out = PyBytes_FromStringAndSize(NULL, blen + 3)
        p = PyBytes_AS_STRING(out)
        _put16(p, FLAG | blen)
        p[2] = OP_PUT
        _put16(p + 3, klen)
        memcpy(p + 5, PyBytes_AS_STRING(key), klen)
        _put16(p + 5 + klen, vlen)
        if vlen:
            memcpy(p + 7 + klen, vbuf, vlen)
        p[7 + klen + vlen] = 1
        return out
    raise ValueError(f"unknown opcode {opcode}")


def parse_request(object buffer, Py_ssize_t capacity):
    cdef Py_ssize_t size
    cdef const unsigned char* buf = _view(buffer, &size)
    cdef unsigned int hdr
    cdef Py_ssize_t blen, klen, vlen, voff
    cdef unsigned char tail, opcode
    if size < 2:
        raise MalformedFrame("buffer shorter than a frame header")
    hdr = (buf[0] << 8) | buf[1]
    if not hdr & FLAG:
        return None
    blen = hdr & LEN_MASK
    if blen < 3 or blen + 3 > capacity or blen + 3 > size:
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
        return OP_GET, _slice(buf + 5, klen), None, blen + 3
    if opcode == OP_PUT:
        if 5 + klen > blen:
            raise MalformedFrame("PUT key runs past the body")
        voff = 5 + klen
        vlen = (buf[voff] << 8) | buf[voff + 1]
        if blen != 5 + klen + vlen:
            raise MalformedFrame("PUT body length disagrees with key/value lengths")
        return OP_PUT, _slice(buf + 5, klen), _slice(buf + voff + 2, vlen), blen + 3
    raise MalformedFrame(f"unknown opcode {opcode}")


def encode_get_body(int status, bytes value):
    cdef Py_ssize_t n
    cdef bytes out
    if status == ST_OK:
        if value is None:
            raise TypeError("an ok GET body needs a value")
        n = len(value)
        out = PyBytes_FromStringAndSize(NULL, n + 2)
        _put16(PyBytes_AS_STRING(out), n)
        memcpy(PyBytes_AS_STRING(out) + 2, PyBytes_AS_STRING(value), n)
        return out
    if status == ST_NOT_FOUND:
        return b"\xff\xff"
    return b"\xff\xfe"


def encode_status_body(int status, bytes value=b""):
    cdef Py_ssize_t n = len(value)
    cdef bytes out = PyBytes_FromStringAndSize(NULL, n + 3)
    cdef char* p = PyBytes_AS_STRING(out)
    p[0] = <char>status
    _put16(p + 1, n)
    if n:
        memcpy(p + 3, PyBytes_AS_STRING(value), n)
    return out


def decode_body(object data, bint is_get):
    cdef Py_ssize_t n
    cdef const unsigned char* body = _view(data, &n)
    cdef unsigned int vlen
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
        return ST_OK, _slice(body + 2, vlen)
    if n < 3:
        raise ProtocolCorruption("response body shorter than status + length")
    vlen = (body[1] << 8) | body[2]
    if n != 3 + vlen:
        raise ProtocolCorruption("response size disagrees with value length")
    return body[0], (_slice(body + 3, vlen) if body[0] == ST_OK and vlen else None)


def response_header(unsigned int size):
    cdef char out[2]
    _put16(out, FLAG | size)
    return PyBytes_FromStringAndSize(out, 2)


def fetch_size(object buffer, Py_ssize_t slot_capacity):
    cdef Py_ssize_t n
    cdef const unsigned char* data = _view(buffer, &n)
    cdef unsigned int hdr
    cdef Py_ssize_t size
    if n < 2:
        raise ProtocolCorruption("fetched fewer than two header bytes")
    hdr = (data[0] << 8) | data[1]
    if not hdr & FLAG:
        return -1
    size = hdr & LEN_MASK
    if size > slot_capacity - 2:
        raise ProtocolCorruption(f"done flag with body size {size} > slot capacity")
    return size


def hist_bucket(double ns):
    cdef long i
    if ns < HIST_MIN_NS:
        return 0
    i = <long>(log(ns / HIST_MIN_NS) / LOG_GROWTH) + 1
    return i if i <= HIST_BUCKETS else HIST_BUCKETS + 1
