"""Emulated RDMA Reliable Connection transport.

Two modes, fixed at construction:

``sim``
    Single-threaded discrete-event mode.  Operations are queued on the
    issuer NIC's out-bound engine, then on the target NIC's in-bound FIFO,
    and complete when the target has serviced them.  Memory effects happen
    at service completion; nothing happens until the virtual clock is
    advanced with :meth:`Emulator.advance` or :meth:`Emulator.run`.

``live``
    Functional mode for real threads.  Operations complete immediately and
    no cost model is applied.

Regions are plain ``bytearray`` objects.  The side that owns a region
accesses ``region.buf`` directly (local memory); remote peers must go
through :meth:`Emulator.post_read` / :meth:`Emulator.post_write`.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Iterable

from rfpkv.nic import NicProfile, default_profile


class Status(str, enum.Enum):
    OK = "ok"
    ACCESS_DENIED = "access_denied"
    OUT_OF_BOUNDS = "out_of_bounds"


class RdmaError(Exception):
    pass


class ConnectionClosed(RdmaError):
    pass


class _Exhausted:
    def __repr__(self):
        return "EXHAUSTED"

    def __bool__(self):
        return False


EXHAUSTED = _Exhausted()


@dataclass(frozen=True)
class TornDelivery:
    """Make writes longer than ``split`` land as two visible pieces.

    Bytes ``[0, split)`` become visible when the target starts servicing
    the write, the rest when it finishes.  ``regions`` restricts injection
    to the given region ids.
    """

    split: int
    regions: frozenset | None = None

    def applies(self, op: "RdmaOp") -> bool:
        return (
            op.kind == "write"
            and 0 < self.split < op.length
            and (self.regions is None or op.region.id in self.regions)
        )


class Nic:
    __slots__ = (
        "id", "name", "issuers", "in_free", "out_free",
        "inbound_ops", "outbound_ops",
        "in_busy_iops", "in_busy_bw", "out_busy_iops", "out_busy_bw",
        "_in_overhead", "_out_overhead", "_ns_per_byte", "_surcharge",
    )

    def __init__(self, nic_id: int, name: str, issuers: int, profile: NicProfile):
        if issuers < 1:
            raise ValueError("a NIC needs at least one issuer thread")
        self.id = nic_id
        self.name = name
        self.issuers = issuers
        self.in_free = 0.0
        self.out_free = 0.0
        self.inbound_ops = 0
        self.outbound_ops = 0
        self.in_busy_iops = 0.0
        self.in_busy_bw = 0.0
        self.out_busy_iops = 0.0
        self.out_busy_bw = 0.0
        self._in_overhead = 1e9 / profile.inbound_rate
        # the out-bound engine is shared: n threads each see n/r(n), so the
        # engine itself advances by 1/r(n) per op
        self._out_overhead = 1e9 / profile.outbound_rate(issuers)
        self._ns_per_byte = profile.ns_per_byte
        self._surcharge = profile.noninline_surcharge_ns

    def __repr__(self):
        return f"Nic({self.name!r}, issuers={self.issuers})"


class Connection:
    __slots__ = ("id", "client_nic", "server_nic", "state")

    def __init__(self, conn_id: int, client_nic: Nic, server_nic: Nic):
        self.id = conn_id
        self.client_nic = client_nic
        self.server_nic = server_nic
        self.state = "connected"

    def peer_of(self, nic: Nic) -> Nic | None:
        if nic is self.server_nic:
            return self.client_nic
        if nic is self.client_nic:
            return self.server_nic
        return None

    def __repr__(self):
        return f"Connection({self.id}, {self.client_nic.name}->{self.server_nic.name}, {self.state})"


class MemoryRegion:
    __slots__ = ("id", "nic", "base", "length", "allowed", "access", "buf", "watchers")

    def __init__(self, region_id, nic, base, length, allowed, access):
        self.id = region_id
        self.nic = nic
        self.base = base
        self.length = length
        self.allowed = set(allowed)
        self.access = access
        self.buf = bytearray(length)
        # called after a remote write lands; lets the event loop wake a
        # simulated poller instead of spinning it
        self.watchers: list[Callable] = []

    def allow(self, conn: Connection) -> None:
        self.allowed.add(conn.id)

    def __repr__(self):
        return f"MemoryRegion({self.id}, nic={self.nic.name}, length={self.length})"


class RdmaOp:
    __slots__ = (
        "id", "kind", "conn", "region", "offset", "length", "payload", "inline",
        "issue_time", "issuer", "target", "status", "callback",
    )

    def __repr__(self):
        return (f"RdmaOp({self.id}, {self.kind}, conn={self.conn.id}, "
                f"region={self.region.id}, off={self.offset}, len={self.length})")


class CompletionEvent:
    __slots__ = ("op", "completion_time", "status", "data")

    def __init__(self, op, completion_time, status, data=None):
        self.op = op
        self.completion_time = completion_time
        self.status = status
        self.data = data

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    def __repr__(self):
        return f"CompletionEvent(op={self.op.id}, t={self.completion_time:.1f}, {self.status.value})"


@dataclass(frozen=True)
class PartialDelivery:
    """A torn write's prefix became visible."""

    op: RdmaOp
    time: float
    upto: int


@dataclass(frozen=True)
class TimerEvent:
    time: float
    result: object


class Emulator:
    """RDMA fabric with a virtual clock (``sim``) or immediate completion (``live``)."""

    def __init__(self, profile: NicProfile | None = None, mode: str = "sim",
                 torn: TornDelivery | None = None):
        if mode not in ("sim", "live"):
            raise ValueError(f"mode must be 'sim' or 'live', not {mode!r}")
        self.profile = profile or default_profile()
        self.mode = mode
        self.torn = torn
        self.now = 0.0
        self.nics: list[Nic] = []
        self._heap: list = []
        self._seq = itertools.count()
        self._op_ids = itertools.count()
        self._conns: list[Connection] = []
        self._regions: list[MemoryRegion] = []
        self._next_base = 0
        self._lock = threading.Lock()

    @property
    def live(self) -> bool:
        return self.mode == "live"

    # -- topology ------------------------------------------------------------

    def add_nic(self, name: str, issuers: int = 1) -> Nic:
        nic = Nic(len(self.nics), name, issuers, self.profile)
        self.nics.append(nic)
        return nic

    def connect(self, client_nic: Nic, server_nic: Nic) -> Connection:
        with self._lock:
            conn = Connection(len(self._conns), client_nic, server_nic)
            self._conns.append(conn)
        return conn

    def close(self, conn: Connection) -> None:
        conn.state = "closed"

    def register_region(self, nic: Nic, length: int,
                        allowed: Iterable[Connection] = (), access: str = "rw") -> MemoryRegion:
        """Register ``length`` zeroed bytes on ``nic`` for the given connections.

        ``access`` is the remote permission: ``"r"``, ``"w"`` or ``"rw"``.
        """
        if length <= 0:
            raise ValueError("region length must be positive")
        if access not in ("r", "w", "rw"):
            raise ValueError(f"bad access mode {access!r}")
        with self._lock:
            region = MemoryRegion(len(self._regions), nic, self._next_base, length,
                                  (c.id for c in allowed), access)
            self._regions.append(region)
            self._next_base += length
        return region

    # -- posting -------------------------------------------------------------

    def _make_op(self, kind, conn, region, offset, length, payload, inline, callback):
        if conn.state != "connected":
            raise ConnectionClosed(f"connection {conn.id} is closed")
        op = RdmaOp()
        op.id = next(self._op_ids)
        op.kind = kind
        op.conn = conn
        op.region = region
        op.offset = offset
        op.length = length
        op.payload = payload
        op.inline = inline
        op.issue_time = self.now
        op.callback = callback
        target = region.nic
        issuer = conn.peer_of(target)
        op.target = target
        op.issuer = issuer
        if issuer is None or conn.id not in region.allowed or kind[0] not in region.access:
            op.status = Status.ACCESS_DENIED
        elif offset < 0 or offset + length > region.length:
            op.status = Status.OUT_OF_BOUNDS
        else:
            op.status = Status.OK
        return op

    def post_write(self, conn: Connection, region: MemoryRegion, offset: int, payload,
                   inline: bool | None = None, callback: Callable | None = None) -> RdmaOp:
        """Issue a one-sided write; ``callback(CompletionEvent)`` fires on completion."""
        length = len(payload)
        threshold = self.profile.inline_threshold
        if inline is None:
            inline = length <= threshold
        elif inline and length > threshold:
            raise ValueError(f"inline write of {length} B exceeds threshold {threshold} B")
        op = self._make_op("write", conn, region, offset, length, bytes(payload), inline, callback)
        self._post(op)
        return op

    def post_read(self, conn: Connection, region: MemoryRegion, offset: int, length: int,
                  callback: Callable | None = None) -> RdmaOp:
        """Issue a one-sided read; the completion event carries the bytes."""
        op = self._make_op("read", conn, region, offset, length, None, False, callback)
        self._post(op)
        return op

    def _post(self, op: RdmaOp) -> None:
        if self.mode == "live":
            with self._lock:
                if op.issuer is not None:
                    op.issuer.outbound_ops += 1
                op.target.inbound_ops += 1
            self._complete(op)
            return
        issuer = op.issuer
        if issuer is None:
            # no path to the target at all; fail in issue order
            heapq.heappush(self._heap, (self.now, next(self._seq), self._complete, op))
            return
        issuer.outbound_ops += 1
        slot = issuer._out_overhead
        if op.kind == "write" and not op.inline:
            slot += issuer._surcharge
        bw = op.length * issuer._ns_per_byte
        if bw > slot:
            issuer.out_busy_bw += bw
            slot = bw
        else:
            issuer.out_busy_iops += slot
        start = issuer.out_free if issuer.out_free > self.now else self.now
        finish = start + slot
        issuer.out_free = finish
        # the target's service overlaps the tail of the issuer's slot, so an
        # uncontended op completes exactly one issuer slot after it starts
        target = op.target
        in_slot = target._in_overhead
        if bw > in_slot:
            in_slot = bw
        arrive = finish - in_slot if finish - in_slot > start else start
        heapq.heappush(self._heap, (arrive, next(self._seq), self._arrive, op))

    def _arrive(self, op: RdmaOp):
        target = op.target
        target.inbound_ops += 1
        slot = target._in_overhead
        bw = op.length * target._ns_per_byte
        if bw > slot:
            target.in_busy_bw += bw
            slot = bw
        else:
            target.in_busy_iops += slot
        now = self.now
        start = target.in_free if target.in_free > now else now
        finish = start + slot
        target.in_free = finish
        if self.torn is not None and op.status is Status.OK and self.torn.applies(op):
            heapq.heappush(self._heap, (start, next(self._seq), self._deliver_prefix, op))
        heapq.heappush(self._heap, (finish, next(self._seq), self._complete, op))
        return None

    def _deliver_prefix(self, op: RdmaOp):
        split = self.torn.split
        region = op.region
        region.buf[op.offset:op.offset + split] = op.payload[:split]
        for watcher in region.watchers:
            watcher(region, op)
        return PartialDelivery(op, self.now, split)

    def _complete(self, op: RdmaOp):
        data = None
        if op.status is Status.OK:
            region = op.region
            if op.kind == "write":
                region.buf[op.offset:op.offset + op.length] = op.payload
                for watcher in region.watchers:
                    watcher(region, op)
            else:
                data = bytes(region.buf[op.offset:op.offset + op.length])
        event = CompletionEvent(op, self.now, op.status, data)
        if op.callback is not None:
            op.callback(event)
        return event

    # -- synchronous convenience ----------------------------------------------

    def rdma_write(self, conn, region, offset, payload, inline=None) -> CompletionEvent:
        """Write and wait for completion (advances the clock in ``sim`` mode)."""
        box = []
        self.post_write(conn, region, offset, payload, inline, box.append)
        self.run_until(lambda: box)
        return box[0]

    def rdma_read(self, conn, region, offset, length) -> tuple[CompletionEvent, bytes | None]:
        box = []
        self.post_read(conn, region, offset, length, box.append)
        self.run_until(lambda: box)
        return box[0], box[0].data

    # -- virtual clock -------------------------------------------------------

    def schedule(self, delay: float, fn: Callable, arg=None) -> None:
        """Call ``fn(arg)`` at ``now + delay``; a non-None return is surfaced by advance()."""
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._heap, (self.now + delay, next(self._seq), fn, arg))

    def advance(self):
        """Pop events until one is observable; return it or ``EXHAUSTED``.

        Observable events are completions, torn-write prefix deliveries and
        timers whose callback returned a value.
        """
        heap = self._heap
        while heap:
            t, _, fn, arg = heapq.heappop(heap)
            self.now = t
            event = fn(arg)
            if event is not None:
                if isinstance(event, (CompletionEvent, PartialDelivery)):
                    return event
                return TimerEvent(t, event)
        return EXHAUSTED

    def run(self, until: float | None = None) -> None:
        """Process events until the queue drains, or up to virtual time ``until``."""
        heap = self._heap
        pop = heapq.heappop
        while heap:
            if until is not None and heap[0][0] > until:
                break
            t, _, fn, arg = pop(heap)
            self.now = t
            fn(arg)
        if until is not None and until > self.now:
            self.now = until

    def run_until(self, predicate: Callable[[], object]) -> None:
        if self.mode == "live":
            if not predicate():
                raise RdmaError("live-mode operation did not complete synchronously")
            return
        heap = self._heap
        pop = heapq.heappop
        while not predicate():
            if not heap:
                raise RdmaError("event queue exhausted before the awaited completion")
            t, _, fn, arg = pop(heap)
            self.now = t
            fn(arg)

    @property
    def pending(self) -> int:
        return len(self._heap)
