"""Remote-fetching request/response protocol.

A client writes a request frame into its private request buffer on the
server with one RDMA write.  A server worker polls that buffer, executes
the request and stores the result in a local response ring; it never
issues an RDMA operation.  The client then reads the current ring slot
with a single RDMA read of ``rfs`` bytes, which carries both the done flag
and, when it fits, the whole result.

Wire layouts (big-endian, see ``docs/wire_format.md``)::

    request:   [flag|body_len:2][opcode:1][key_len:2][key][val_len:2][value][tail=1]
    response:  [done|body_len:2][body]
    GET body:  [val_len:2][value]          val_len 0xFFFF = not found
    PUT body:  [status:1][val_len:2][value]
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Callable, NamedTuple

from rfpkv import kernels as K
from rfpkv.errors import (
    FrameTooLarge, InFlightViolation, ProtocolError, ResultTooLarge, TransportError,
)
from rfpkv.rdma import Connection, Emulator, MemoryRegion, Nic

GET = K.OP_GET
PUT = K.OP_PUT

STATUS_NAMES = {K.ST_OK: "ok", K.ST_NOT_FOUND: "not_found", K.ST_ERROR: "error"}

DEFAULT_RING_DEPTH = 8
DEFAULT_SLOT_CAPACITY = 1040
DEFAULT_REQUEST_CAPACITY = 1040
DEFAULT_RFS = 36


@dataclass(frozen=True)
class Ready:
    status: str
    value: bytes | None
    round_trips: int


class _NotReady:
    __slots__ = ()

    def __repr__(self):
        return "NOT_READY"

    def __bool__(self):
        return False


NOT_READY = _NotReady()


class Request(NamedTuple):
    op: int
    key: bytes
    value: bytes | None


def encode_request(op: int, key: bytes, value: bytes | None = None,
                   capacity: int = DEFAULT_REQUEST_CAPACITY) -> bytes:
    """Build a complete request frame (arrival flag and tail set)."""
    return K.encode_request(op, key, value, capacity)


def response_body(op: int, status: int, value: bytes | None = None) -> bytes:
    """Response body for a request of kind ``op``."""
    if op == GET:
        return K.encode_get_body(status, value)
    return K.encode_status_body(status, value or b"")


class ResponseRing:
    """``depth`` fixed-size response slots in one server-local region."""

    def __init__(self, region: MemoryRegion, depth: int, slot_capacity: int):
        self.region = region
        self.depth = depth
        self.slot_capacity = slot_capacity
        self.crbp = 0

    def slot_offset(self, index: int) -> int:
        return index * self.slot_capacity

    def header(self, index: int) -> tuple[bool, int]:
        off = index * self.slot_capacity
        hdr = (self.region.buf[off] << 8) | self.region.buf[off + 1]
        return bool(hdr & K.FLAG), hdr & K.LEN_MASK


class ServerSession:
    """Server-side state for one (client thread, server worker) pair."""

    __slots__ = ("id", "conn", "worker", "request_region", "request_capacity",
                 "ring", "reply_region")

    def __init__(self, session_id, conn, worker, request_region, request_capacity,
                 ring=None, reply_region=None):
        self.id = session_id
        self.conn = conn
        self.worker = worker
        self.request_region = request_region
        self.request_capacity = request_capacity
        self.ring = ring
        self.reply_region = reply_region


class ServerEndpoint:
    """A server NIC plus the sessions its workers poll."""

    def __init__(self, emulator: Emulator, nic: Nic, workers: int = 1):
        if workers < 1:
            raise ValueError("need at least one worker")
        self.emulator = emulator
        self.nic = nic
        self.workers = workers
        self.sessions: list[ServerSession] = []
        self.by_worker: list[list[ServerSession]] = [[] for _ in range(workers)]

    def _add(self, session: ServerSession) -> None:
        self.sessions.append(session)
        self.by_worker[session.worker].append(session)

    def _pick_worker(self, worker: int | None) -> int:
        if worker is None:
            return len(self.sessions) % self.workers
        if not 0 <= worker < self.workers:
            raise ValueError(f"worker {worker} out of range")
        return worker


class ClientSession:
    """Client-side mirror of one server session (single outstanding request)."""

    def __init__(self, emulator, conn, server_session, request_region, ring_region,
                 ring_depth, slot_capacity, request_capacity, rfs):
        self.emulator = emulator
        self.conn = conn
        self.server_session = server_session
        self.request_region = request_region
        self.ring_region = ring_region
        self.ring_depth = ring_depth
        self.slot_capacity = slot_capacity
        self.request_capacity = request_capacity
        self.rfs = rfs
        self.local_crbp = 0
        self.round_trips = 0
        self.in_flight = False
        self._is_get = False

    @property
    def worker(self) -> int:
        return self.server_session.worker

    def send(self, frame: bytes, callback: Callable | None = None):
        """Post the request write; ``callback(CompletionEvent)`` on completion."""
        if self.in_flight:
            raise InFlightViolation("a request is already outstanding on this session")
        if len(frame) > self.request_capacity:
            raise FrameTooLarge(f"{len(frame)}-byte frame exceeds {self.request_capacity}")
        self.in_flight = True
        self.round_trips = 1
        self._is_get = frame[2] == GET
        return self.emulator.post_write(self.conn, self.request_region, 0, frame,
                                        callback=callback)

    def fetch(self, callback: Callable) -> None:
        """Read the current slot; ``callback`` gets a :class:`Ready` or ``NOT_READY``."""
        if not self.in_flight:
            raise ProtocolError("fetch without an outstanding request")
        self.round_trips += 1
        self.emulator.post_read(self.conn, self.ring_region,
                                self.local_crbp * self.slot_capacity, self.rfs,
                                partial(self._on_fetch, callback))

    def _on_fetch(self, callback, event):
        if not event.ok:
            raise TransportError(event)
        data = event.data
        size = K.fetch_size(data, self.slot_capacity)
        if size < 0:
            callback(NOT_READY)
            return
        inline = self.rfs - 2
        if size <= inline:
            self._finish(callback, data[2:2 + size])
            return
        self.round_trips += 1
        self.emulator.post_read(
            self.conn, self.ring_region,
            self.local_crbp * self.slot_capacity + self.rfs, size - inline,
            partial(self._on_rest, callback, data[2:]),
        )

    def _on_rest(self, callback, head, event):
        if not event.ok:
            raise TransportError(event)
        self._finish(callback, head + event.data)

    def _finish(self, callback, body):
        status, value = K.decode_body(body, self._is_get)
        self.local_crbp = (self.local_crbp + 1) % self.ring_depth
        self.in_flight = False
        callback(Ready(STATUS_NAMES[status], value, self.round_trips))


def session_setup(endpoint: ServerEndpoint, conn: Connection, worker: int | None = None,
                  ring_depth: int = DEFAULT_RING_DEPTH,
                  slot_capacity: int = DEFAULT_SLOT_CAPACITY,
                  request_capacity: int = DEFAULT_REQUEST_CAPACITY,
                  rfs: int = DEFAULT_RFS) -> ClientSession:
    """Register a request buffer and a response ring for one client connection."""
    if rfs < 3:
        raise ValueError("rfs must cover the 2-byte header and at least one body byte")
    if rfs > slot_capacity:
        raise ValueError(f"rfs {rfs} exceeds slot capacity {slot_capacity}")
    if ring_depth < 2:
        # with one slot the previous result's done flag is never cleared in time
        raise ValueError("ring depth must be at least 2")
    if request_capacity < 4:
        raise ValueError("request buffer too small for any frame")
    emu = endpoint.emulator
    worker = endpoint._pick_worker(worker)
    req = emu.register_region(endpoint.nic, request_capacity, [conn], access="w")
    ring_region = emu.register_region(endpoint.nic, ring_depth * slot_capacity, [conn], access="r")
    ring = ResponseRing(ring_region, ring_depth, slot_capacity)
    server = ServerSession(len(endpoint.sessions), conn, worker, req, request_capacity, ring=ring)
    endpoint._add(server)
    return ClientSession(emu, conn, server, req, ring_region, ring_depth, slot_capacity,
                         request_capacity, rfs)


def client_send_request(session: ClientSession, frame: bytes):
    """Send and wait for the write to complete; returns its completion event."""
    box = []
    session.send(frame, box.append)
    session.emulator.run_until(lambda: box)
    if not box[0].ok:
        raise TransportError(box[0])
    return box[0]


def client_fetch(session: ClientSession):
    """One remote check/fetch of the current slot: :class:`Ready` or ``NOT_READY``."""
    box = []
    session.fetch(box.append)
    session.emulator.run_until(lambda: box)
    return box[0]


def server_poll(endpoint: ServerEndpoint, session: ServerSession,
                worker: int | None = None):
    """Take a complete request out of the session's buffer, if one has arrived."""
    if worker is not None and worker != session.worker:
        raise ProtocolError(f"session {session.id} is owned by worker {session.worker}")
    buf = session.request_region.buf
    parsed = K.parse_request(buf, session.request_capacity)
    if parsed is None:
        return NOT_READY
    op, key, value, length = parsed
    buf[0:length] = bytes(length)
    return Request(op, key, value)


def server_publish(endpoint: ServerEndpoint, session: ServerSession, body: bytes) -> None:
    """Store a result in the current ring slot using local memory writes only."""
    ring = session.ring
    size = len(body)
    if size > ring.slot_capacity - 2 or size > K.MAX_BODY:
        raise ResultTooLarge(f"{size}-byte result exceeds slot capacity {ring.slot_capacity}")
    buf = ring.region.buf
    cap = ring.slot_capacity
    nxt = ((ring.crbp + 1) % ring.depth) * cap
    buf[nxt] = 0
    buf[nxt + 1] = 0
    off = ring.crbp * cap
    buf[off + 2:off + 2 + size] = body
    buf[off:off + 2] = K.response_header(size)
    ring.crbp = (ring.crbp + 1) % ring.depth
