import pytest

from rfpkv import kernels as K
from rfpkv.errors import FrameTooLarge, InFlightViolation, ProtocolError, ResultTooLarge
from rfpkv.protocol import (
    GET, NOT_READY, PUT, ServerEndpoint, client_fetch, client_send_request, encode_request,
    response_body, server_poll, server_publish, session_setup,
)
from rfpkv.rdma import Emulator, Status, TornDelivery


def setup(rfs=36, ring=8, slot=1040, torn=None, workers=1):
    emu = Emulator(torn=torn)
    snic, cnic = emu.add_nic("s", issuers=workers), emu.add_nic("c")
    ep = ServerEndpoint(emu, snic, workers)
    conn = emu.connect(cnic, snic)
    cs = session_setup(ep, conn, 0, ring, slot, 1040, rfs)
    return emu, ep, cs, cs.server_session


def serve(ep, ss, store):
    req = server_poll(ep, ss)
    if req is NOT_READY:
        return False
    if req.op == GET:
        v = store.get(req.key)
        body = response_body(GET, K.ST_OK if v is not None else K.ST_NOT_FOUND, v)
    else:
        store[req.key] = req.value
        body = response_body(PUT, K.ST_OK)
    server_publish(ep, ss, body)
    return True


def test_session_setup_regions():
    emu, ep, cs, ss = setup()
    assert cs.ring_region.length == 8 * 1040 == 8320            # [oracle] R x slot
    assert cs.request_region.length == 1040
    assert cs.local_crbp == 0 and ss.ring.crbp == 0
    with pytest.raises(ValueError):
        setup(rfs=2000, slot=1040)
    with pytest.raises(ValueError):
        setup(rfs=2)
    with pytest.raises(ValueError):
        setup(ring=1)


def test_sessions_are_isolated():
    emu = Emulator()
    snic, cnic = emu.add_nic("s"), emu.add_nic("c")
    ep = ServerEndpoint(emu, snic)
    a = session_setup(ep, emu.connect(cnic, snic))
    b = session_setup(ep, emu.connect(cnic, snic))
    assert a.ring_region is not b.ring_region
    ev, _ = emu.rdma_read(a.conn, b.ring_region, 0, 36)
    assert ev.status is Status.ACCESS_DENIED
    assert emu.rdma_write(a.conn, b.request_region, 0, b"x").status is Status.ACCESS_DENIED
    # the client may not read its own request buffer nor write its ring
    assert emu.rdma_read(a.conn, a.request_region, 0, 4)[0].status is Status.ACCESS_DENIED
    assert emu.rdma_write(a.conn, a.ring_region, 0, b"x").status is Status.ACCESS_DENIED


def test_send_is_one_inline_write_of_exact_length():
    emu, ep, cs, ss = setup()
    frame = encode_request(PUT, b"k" * 16, b"v" * 32)
    ev = client_send_request(cs, frame)
    assert ev.op.kind == "write" and ev.op.length == 56 and ev.op.inline
    assert cs.round_trips == 1
    with pytest.raises(InFlightViolation):
        cs.send(frame)
    emu2, ep2, cs2, _ = setup()
    assert client_send_request(cs2, encode_request(GET, b"k" * 16)).op.length == 22


def test_send_rejects_oversize_frame():
    emu, ep, cs, ss = setup()
    with pytest.raises(FrameTooLarge):
        encode_request(PUT, b"k", b"v" * 2000, 1040)
    with pytest.raises(FrameTooLarge):
        cs.send(b"x" * 2000)


def test_poll_consumes_and_zeroes():
    emu, ep, cs, ss = setup()
    assert server_poll(ep, ss) is NOT_READY
    frame = encode_request(PUT, b"k" * 16, b"v" * 32)
    client_send_request(cs, frame)
    req = server_poll(ep, ss)
    assert (req.op, req.key, req.value) == (PUT, b"k" * 16, b"v" * 32)
    assert ss.request_region.buf == bytes(1040)
    with pytest.raises(ProtocolError):
        server_poll(ep, ss, worker=3)


def test_torn_header_first_is_not_ready():
    frame = encode_request(PUT, b"k" * 16, b"v" * 32)
    emu, ep, cs, ss = setup(torn=TornDelivery(split=2))
    cs.send(frame)
    emu.advance()                          # header landed, tail still zero
    assert ss.request_region.buf[:2] == frame[:2]
    assert server_poll(ep, ss) is NOT_READY
    emu.advance()
    assert server_poll(ep, ss).value == b"v" * 32


def test_publish_order_and_wraparound():
    emu, ep, cs, ss = setup()
    ring = ss.ring
    ring.region.buf[1040:1042] = b"\xff\xff"        # stale header in slot 1
    body = b"\x00" + b"\x00\x22" + b"v" * 34        # 37-byte body
    server_publish(ep, ss, body)
    assert ring.header(1) == (False, 0)
    assert ring.header(0) == (True, 37)
    assert ring.crbp == 1
    ring.crbp = 7
    ring.region.buf[0:2] = b"\xff\xff"
    server_publish(ep, ss, b"\x00\x00\x00")
    assert ring.header(0) == (False, 0) and ring.crbp == 0
    assert ep.nic.outbound_ops == 0                 # local stores only
    with pytest.raises(ResultTooLarge):
        server_publish(ep, ss, b"x" * 1039)


def test_publish_issues_no_rdma():
    emu, ep, cs, ss = setup()
    before = (ep.nic.outbound_ops, emu.pending)
    server_publish(ep, ss, response_body(GET, K.ST_OK, b"v" * 32))
    assert (ep.nic.outbound_ops, emu.pending) == before


def roundtrip(emu, ep, cs, ss, store, op, key, value=None):
    client_send_request(cs, encode_request(op, key, value))
    serve(ep, ss, store)
    return client_fetch(cs)


def test_get_hit_fits_rfs_36_in_two_round_trips():
    emu, ep, cs, ss = setup(rfs=36)
    store = {b"k" * 16: b"v" * 32}
    r = roundtrip(emu, ep, cs, ss, store, GET, b"k" * 16)
    assert (r.status, r.value, r.round_trips) == ("ok", b"v" * 32, 2)


def test_64_byte_value_needs_a_second_read():
    emu, ep, cs, ss = setup(rfs=36)
    store = {b"k" * 16: bytes(range(64))}
    r = roundtrip(emu, ep, cs, ss, store, GET, b"k" * 16)
    assert (r.value, r.round_trips) == (bytes(range(64)), 3)


@pytest.mark.parametrize("vlen", [0, 1, 31, 32, 33, 64, 129, 1024])
@pytest.mark.parametrize("rfs", [3, 36, 132])
def test_round_trip_law(vlen, rfs):
    emu, ep, cs, ss = setup(rfs=rfs)
    value = bytes(vlen)
    store = {b"key": value}
    r = roundtrip(emu, ep, cs, ss, store, GET, b"key")
    # [oracle] independent count of RDMA ops issued by the client NIC
    issued = cs.conn.client_nic.outbound_ops
    body = 2 + vlen
    assert r.round_trips == 2 + (1 if body > rfs - 2 else 0) == issued
    assert r.value == value


def test_not_ready_counts_extra_round_trips():
    emu, ep, cs, ss = setup()
    client_send_request(cs, encode_request(GET, b"key"))
    assert client_fetch(cs) is NOT_READY
    assert client_fetch(cs) is NOT_READY
    assert cs.local_crbp == 0
    serve(ep, ss, {b"key": b"val"})
    r = client_fetch(cs)
    assert r.round_trips == 4 and r.value == b"val"
    assert cs.local_crbp == ss.ring.crbp == 1


def test_fetch_without_request_is_an_error():
    emu, ep, cs, ss = setup()
    with pytest.raises(ProtocolError):
        client_fetch(cs)


def test_put_and_not_found():
    emu, ep, cs, ss = setup()
    store = {}
    r = roundtrip(emu, ep, cs, ss, store, PUT, b"a", b"1")
    assert (r.status, r.value, r.round_trips) == ("ok", None, 2)
    r = roundtrip(emu, ep, cs, ss, store, GET, b"b")
    assert (r.status, r.value) == ("not_found", None)


def test_lockstep_and_freshness_over_many_requests():
    emu, ep, cs, ss = setup(ring=4)
    store = {}
    for i in range(10 * 4 + 3):
        v = i.to_bytes(4, "big")
        roundtrip(emu, ep, cs, ss, store, PUT, b"k", v)
        assert cs.local_crbp == ss.ring.crbp
        r = roundtrip(emu, ep, cs, ss, store, GET, b"k")
        assert r.value == v
        assert cs.local_crbp == ss.ring.crbp
