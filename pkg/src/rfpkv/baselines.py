"""Comparison paradigms sharing the store and transport with RFP.

ServerReply
    Identical request path; the server answers with an out-bound RDMA
    write into a reply slot registered on the client's NIC.

Bypass
    Clients resolve GETs themselves by reading an exposed bucketized index
    and then the value extent.  PUTs go through the server-reply path.
    This is a small model for round-trip accounting, not a full
    self-verifying cuckoo table.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from functools import partial
from typing import Callable

from rfpkv import kernels as K
from rfpkv.errors import (
    FrameTooLarge, InFlightViolation, ProtocolCorruption, ProtocolError, ResultTooLarge,
    RetryExhausted, TransportError,
)
from rfpkv.kvstore import key_hash, partition_for_key
from rfpkv.protocol import (
    DEFAULT_REQUEST_CAPACITY, DEFAULT_SLOT_CAPACITY, GET, NOT_READY, STATUS_NAMES, Ready,
    ServerEndpoint,
    ServerSession,
)
from rfpkv.rdma import Connection, Emulator, MemoryRegion, Nic


class ParadigmKind(str, enum.Enum):
    RFP = "rfp"
    SERVER_REPLY = "server_reply"
    BYPASS = "bypass"

    @classmethod
    def parse(cls, text: str) -> "ParadigmKind":
        return cls(text.replace("-", "_").lower())


# -- server reply ------------------------------------------------------------

class ReplySession:
    """Client side of a server-reply session.

    ``reply_region`` lives on the client NIC; the server writes a response
    frame (same layout as an RFP slot) at offset 0.
    """

    def __init__(self, emulator, conn, server_session, request_region, reply_region,
                 request_capacity):
        self.emulator = emulator
        self.conn = conn
        self.server_session = server_session
        self.request_region = request_region
        self.reply_region = reply_region
        self.request_capacity = request_capacity
        self.round_trips = 0
        self.in_flight = False
        self._is_get = False
        self._waiter = None
        reply_region.watchers.append(self._on_reply_write)

    @property
    def worker(self) -> int:
        return self.server_session.worker

    def send(self, frame: bytes, callback: Callable | None = None):
        if self.in_flight:
            raise InFlightViolation("a request is already outstanding on this session")
        if len(frame) > self.request_capacity:
            raise FrameTooLarge(f"{len(frame)}-byte frame exceeds {self.request_capacity}")
        self.in_flight = True
        self.round_trips = 1
        self._is_get = frame[2] == GET
        return self.emulator.post_write(self.conn, self.request_region, 0, frame,
                                        callback=callback)

    def poll(self):
        """Check the local reply slot: :class:`Ready` (slot consumed) or ``NOT_READY``."""
        buf = self.reply_region.buf
        size = K.fetch_size(buf, self.reply_region.length)
        if size < 0:
            return NOT_READY
        body = bytes(buf[2:2 + size])
        buf[0] = 0
        buf[1] = 0
        status, value = K.decode_body(body, self._is_get)
        self.in_flight = False
        # the client's request write plus the server's reply write
        return Ready(STATUS_NAMES[status], value, self.round_trips + 1)

    def wait(self, callback: Callable) -> None:
        """``callback(Ready)`` once the server's reply lands (sim mode)."""
        if not self.in_flight:
            raise ProtocolError("wait without an outstanding request")
        result = self.poll()
        if result is NOT_READY:
            self._waiter = callback
        else:
            callback(result)

    def _on_reply_write(self, region, op):
        if self._waiter is None:
            return
        result = self.poll()
        if result is not NOT_READY:
            callback, self._waiter = self._waiter, None
            callback(result)


def serverreply_setup(endpoint: ServerEndpoint, conn: Connection, worker: int | None = None,
                      request_capacity: int = DEFAULT_REQUEST_CAPACITY,
                      reply_capacity: int = DEFAULT_SLOT_CAPACITY) -> ReplySession:
    emu = endpoint.emulator
    worker = endpoint._pick_worker(worker)
    req = emu.register_region(endpoint.nic, request_capacity, [conn], access="w")
    reply = emu.register_region(conn.client_nic, reply_capacity, [conn], access="w")
    server = ServerSession(len(endpoint.sessions), conn, worker, req, request_capacity,
                           reply_region=reply)
    endpoint._add(server)
    return ReplySession(emu, conn, server, req, reply, request_capacity)


def server_reply(endpoint: ServerEndpoint, session: ServerSession, body: bytes):
    """Send a result back with one out-bound RDMA write from the server NIC."""
    size = len(body)
    if size > session.reply_region.length - 2 or size > K.MAX_BODY:
        raise ResultTooLarge(f"{size}-byte result exceeds reply slot")
    frame = K.response_header(size) + body
    return endpoint.emulator.post_write(session.conn, session.reply_region, 0, frame)


def serverreply_request(session: ReplySession, frame: bytes) -> Ready:
    """Send a request and wait for the server's reply write.

    The server side must be running (see :class:`rfpkv.cluster.Server`).
    """
    box = []
    session.send(frame)
    session.wait(box.append)
    session.emulator.run_until(lambda: box)
    return box[0]


# -- bypass --------------------------------------------------------------------

BUCKET_SLOTS = 4
_SLOT = struct.Struct(">QIII")          # fingerprint, version, offset, length
SLOT_BYTES = _SLOT.size
BUCKET_BYTES = BUCKET_SLOTS * SLOT_BYTES
_ENTRY_HEAD = struct.Struct(">IHH")     # version, key_len, val_len
_ENTRY_TAIL = struct.Struct(">I")       # version again
ENTRY_OVERHEAD = _ENTRY_HEAD.size + _ENTRY_TAIL.size


MAX_DISPLACEMENTS = 500


class IndexFull(Exception):
    pass


def fingerprint(key: bytes) -> int:
    return key_hash(key, seed=0x5EED) or 1


class ExposedIndex:
    """Server-owned bucket index plus value heap, readable by every client.

    Updates never modify a live extent in place: a new extent is written,
    the bucket slot is repointed, and only then is the old extent
    invalidated (its versions zeroed) and recycled.  A client that read a
    stale slot therefore sees a version mismatch and retries.
    """

    def __init__(self, emulator: Emulator, nic: Nic, nbuckets: int, heap_bytes: int,
                 probe_depth: int = 3, seed: int = 0):
        if probe_depth < 1 or nbuckets < 1:
            raise ValueError("need at least one bucket and one probe")
        self.nbuckets = nbuckets
        self.probe_depth = probe_depth
        self.seed = seed
        self.index_region = emulator.register_region(nic, nbuckets * BUCKET_BYTES, access="r")
        self.heap_region = emulator.register_region(nic, heap_bytes, access="r")
        self._bump = 0
        self._free: dict[int, list[int]] = {}
        self._version = 0
        self._where: dict[bytes, tuple[int, int, int]] = {}   # key -> (slot_off, off, len)
        self._owner: dict[int, bytes] = {}                      # slot_off -> key
        self._walk = seed & 0xFFFFFFFF
        self.relocations = 0
        self.displacements = 0

    @classmethod
    def sized(cls, emulator, nic, keys: int, entry_bytes: int, probe_depth: int = 3,
              load: float = 0.5, seed: int = 0) -> "ExposedIndex":
        nbuckets = max(1, math.ceil(keys / (BUCKET_SLOTS * load)))
        heap = max(4096, int(keys * (entry_bytes + ENTRY_OVERHEAD) * 1.5) + 4096)
        return cls(emulator, nic, nbuckets, heap, probe_depth, seed)

    def allow(self, conn: Connection) -> None:
        self.index_region.allow(conn)
        self.heap_region.allow(conn)

    def candidates(self, key: bytes) -> list[int]:
        return [key_hash(key, self.seed + 0x1000 + i) % self.nbuckets
                for i in range(self.probe_depth)]

    def __len__(self):
        return len(self._where)

    def _alloc(self, size: int) -> int:
        free = self._free.get(size)
        if free:
            return free.pop()
        if self._bump + size > self.heap_region.length:
            raise IndexFull("value heap exhausted")
        off = self._bump
        self._bump += size
        return off

    def _release(self, off: int, size: int) -> None:
        buf = self.heap_region.buf
        buf[off:off + 4] = bytes(4)
        buf[off + size - 4:off + size] = bytes(4)
        self._free.setdefault(size, []).append(off)

    def upsert(self, key: bytes, value: bytes) -> None:
        old = self._where.get(key)
        if old is None:
            slot_off = self._free_slot(key)
        else:
            slot_off = old[0]
        self._version = (self._version + 1) & 0xFFFFFFFF or 1
        ver = self._version
        size = ENTRY_OVERHEAD + len(key) + len(value)
        off = self._alloc(size)
        heap = self.heap_region.buf
        heap[off:off + size] = (_ENTRY_HEAD.pack(ver, len(key), len(value)) + key + value
                                + _ENTRY_TAIL.pack(ver))
        self.index_region.buf[slot_off:slot_off + SLOT_BYTES] = _SLOT.pack(
            fingerprint(key), ver, off, size)
        self._where[key] = (slot_off, off, size)
        self._owner[slot_off] = key
        if old is not None:
            self.relocations += 1
            self._release(old[1], old[2])

    def _empty_in(self, buckets) -> int | None:
        buf = self.index_region.buf
        for bucket in buckets:
            base = bucket * BUCKET_BYTES
            for s in range(BUCKET_SLOTS):
                off = base + s * SLOT_BYTES
                if not any(buf[off:off + 8]):
                    return off
        return None

    def _free_slot(self, key: bytes) -> int:
        """Find a slot for a new key, displacing residents cuckoo-style if needed.

        A displaced entry's slot is copied before the old one is cleared, but
        a concurrent reader can still miss a key while it moves.  Only
        inserts of new keys displace; updates never do.
        """
        cands = self.candidates(key)
        slot = self._empty_in(cands)
        if slot is not None:
            return slot
        path = []                     # (resident key, its slot) from the new key outward
        current = cands
        for _ in range(MAX_DISPLACEMENTS):
            self._walk = (self._walk * 1103515245 + 12345) & 0x7FFFFFFF
            bucket = current[self._walk % len(current)]
            victim_slot = bucket * BUCKET_BYTES + (self._walk >> 8) % BUCKET_SLOTS * SLOT_BYTES
            if any(victim_slot == v for _, v in path):
                continue
            victim = self._owner[victim_slot]
            path.append((victim, victim_slot))
            current = [b for b in self.candidates(victim) if b != bucket]
            if not current:
                break
            empty = self._empty_in(current)
            if empty is not None:
                for victim, victim_slot in reversed(path):
                    self._move(victim, victim_slot, empty)
                    empty = victim_slot
                return empty
        raise IndexFull("all candidate buckets are full")

    def _move(self, key: bytes, src: int, dst: int) -> None:
        buf = self.index_region.buf
        buf[dst:dst + SLOT_BYTES] = buf[src:src + SLOT_BYTES]
        buf[src:src + SLOT_BYTES] = bytes(SLOT_BYTES)
        _, off, size = self._where[key]
        self._where[key] = (dst, off, size)
        del self._owner[src]
        self._owner[dst] = key
        self.displacements += 1

    def probes_for(self, key: bytes) -> int | None:
        """Bucket reads a lookup of ``key`` needs, or None if absent."""
        loc = self._where.get(key)
        if loc is None:
            return None
        return self.candidates(key).index(loc[0] // BUCKET_BYTES) + 1


@dataclass
class BypassStats:
    gets: int = 0
    probes: int = 0
    retries: int = 0


class BypassClient:
    """Client-side GET resolution against exposed indexes, one per partition."""

    def __init__(self, emulator: Emulator, conn: Connection, indexes: list[ExposedIndex],
                 max_attempts: int = 8, seed: int = 0):
        self.emulator = emulator
        self.conn = conn
        self.indexes = indexes
        self.max_attempts = max_attempts
        self.seed = seed
        self.stats = BypassStats()

    def get(self, key: bytes, callback: Callable) -> None:
        """Resolve ``key``; ``callback`` receives :class:`Ready` (ok or not_found)."""
        index = self.indexes[partition_for_key(key, len(self.indexes), self.seed)]
        self.stats.gets += 1
        state = _Lookup(key, index, index.candidates(key), fingerprint(key), callback)
        self._probe(state)

    def _probe(self, st: "_Lookup") -> None:
        st.round_trips += 1
        self.stats.probes += 1
        bucket = st.candidates[st.probe]
        self.emulator.post_read(self.conn, st.index.index_region, bucket * BUCKET_BYTES,
                                BUCKET_BYTES, partial(self._on_bucket, st))

    def _on_bucket(self, st: "_Lookup", event) -> None:
        if not event.ok:
            raise TransportError(event)
        data = event.data
        for s in range(BUCKET_SLOTS):
            fp, ver, off, size = _SLOT.unpack_from(data, s * SLOT_BYTES)
            if fp == st.fp and ver:
                st.round_trips += 1
                self.emulator.post_read(self.conn, st.index.heap_region, off, size,
                                        partial(self._on_extent, st, ver))
                return
        st.probe += 1
        if st.probe == len(st.candidates):
            st.callback(Ready("not_found", None, st.round_trips))
            return
        self._probe(st)

    def _on_extent(self, st: "_Lookup", ver: int, event) -> None:
        if not event.ok:
            raise TransportError(event)
        data = event.data
        head, klen, vlen = _ENTRY_HEAD.unpack_from(data, 0)
        size = len(data)
        tail = _ENTRY_TAIL.unpack_from(data, size - 4)[0] if size >= ENTRY_OVERHEAD else 0
        hs = _ENTRY_HEAD.size
        if (head != ver or tail != ver or ENTRY_OVERHEAD + klen + vlen != size
                or data[hs:hs + klen] != st.key):
            # extent was relocated or recycled after the bucket was read
            st.attempts += 1
            self.stats.retries += 1
            if st.attempts >= self.max_attempts:
                raise RetryExhausted(f"bypass GET gave up after {st.attempts} attempts")
            st.probe = 0
            self._probe(st)
            return
        value = bytes(data[hs + klen:hs + klen + vlen])
        st.callback(Ready("ok", value, st.round_trips))


class _Lookup:
    __slots__ = ("key", "index", "candidates", "fp", "callback", "probe", "round_trips",
                 "attempts")

    def __init__(self, key, index, candidates, fp, callback):
        self.key = key
        self.index = index
        self.candidates = candidates
        self.fp = fp
        self.callback = callback
        self.probe = 0
        self.round_trips = 0
        self.attempts = 0


def bypass_get(client: BypassClient, key: bytes) -> Ready:
    box = []
    client.get(key, box.append)
    client.emulator.run_until(lambda: box)
    return box[0]


def bypass_put(session: ReplySession, frame: bytes) -> Ready:
    """PUTs under bypass use the server-reply path."""
    if frame[2] == GET:
        raise ProtocolCorruption("bypass_put needs a PUT frame")
    return serverreply_request(session, frame)
