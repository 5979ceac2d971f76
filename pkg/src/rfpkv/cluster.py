"""Server workers and paradigm-aware clients over one emulator."""

from __future__ import annotations

import time
from collections import deque
from functools import partial
from typing import Callable

from rfpkv import kernels as K
from rfpkv.baselines import (
    BypassClient, ExposedIndex, ParadigmKind, ReplySession, server_reply, serverreply_setup,
)
from rfpkv.errors import TransportError
from rfpkv.kvstore import Store, partition_for_key
from rfpkv.protocol import (
    DEFAULT_REQUEST_CAPACITY, DEFAULT_RFS, DEFAULT_RING_DEPTH, DEFAULT_SLOT_CAPACITY, GET,
    NOT_READY, PUT, ClientSession, ServerEndpoint, ServerSession, encode_request,
    response_body, server_poll, server_publish, session_setup,
)
from rfpkv.rdma import Emulator, Nic


class Server:
    """Workers that poll their sessions and execute requests on their own partition.

    In ``sim`` mode a worker is woken by request-buffer writes instead of
    spinning; each executed request costs ``cpu_ns`` of that worker's time.
    In ``live`` mode call :meth:`poll_once` from one thread per worker.
    """

    def __init__(self, emulator: Emulator, nic: Nic, paradigm: ParadigmKind | str,
                 workers: int, store: Store | None = None, cpu_ns: float = 0.0,
                 seed: int = 0):
        self.emulator = emulator
        self.nic = nic
        self.paradigm = ParadigmKind(paradigm)
        self.endpoint = ServerEndpoint(emulator, nic, workers)
        self.store = store or Store(workers, seed=seed)
        if len(self.store.partitions) != workers:
            raise ValueError("one partition per worker is required")
        self.seed = self.store.seed
        self.cpu_ns = cpu_ns
        self.indexes: list[ExposedIndex] = []
        self.served = [0] * workers
        self.busy_ns = [0.0] * workers
        self._pending = [deque() for _ in range(workers)]
        self._queued: list[bool] = []
        self._busy = [False] * workers

    @property
    def workers(self) -> int:
        return self.endpoint.workers

    def expose_index(self, keys_per_partition: int, entry_bytes: int,
                     probe_depth: int = 3) -> None:
        """Create the bypass index; must precede client creation and preload."""
        self.indexes = [
            ExposedIndex.sized(self.emulator, self.nic, keys_per_partition, entry_bytes,
                               probe_depth, seed=self.seed)
            for _ in range(self.workers)
        ]

    def preload(self, key: bytes, value: bytes) -> None:
        part = self.store.partition_of(key)
        part.put(key, value, placed=True)
        if self.indexes:
            self.indexes[part.index].upsert(key, value)

    def register(self, session: ServerSession) -> None:
        self._queued.append(False)
        if self.emulator.mode == "sim":
            session.request_region.watchers.append(partial(self._on_request, session))

    def serve(self, session: ServerSession) -> bool:
        """Poll one session; execute and answer a request if one is complete."""
        req = server_poll(self.endpoint, session)
        if req is NOT_READY:
            return False
        w = session.worker
        part = self.store.partitions[w]
        status, value = self.store.execute(part, req.op, req.key, req.value)
        if self.indexes and req.op == PUT and status == K.ST_OK:
            self.indexes[w].upsert(req.key, req.value)
        body = response_body(req.op, status, value)
        if self.paradigm is ParadigmKind.RFP:
            server_publish(self.endpoint, session, body)
        else:
            server_reply(self.endpoint, session, body)
        self.served[w] += 1
        return True

    def poll_once(self, worker: int) -> int:
        """One pass over a worker's sessions; returns requests served."""
        return sum(self.serve(s) for s in self.endpoint.by_worker[worker])

    # discrete-event worker model

    def _on_request(self, session, region, op):
        w = session.worker
        if not self._queued[session.id]:
            self._queued[session.id] = True
            self._pending[w].append(session)
        if not self._busy[w]:
            self._busy[w] = True
            self.emulator.schedule(self.cpu_ns, self._step, w)

    def _step(self, w):
        pending = self._pending[w]
        session = pending.popleft()
        self._queued[session.id] = False
        if self.serve(session):
            self.busy_ns[w] += self.cpu_ns
        if pending:
            self.emulator.schedule(self.cpu_ns, self._step, w)
        else:
            self._busy[w] = False


class Client:
    """One client thread with a session to every server worker."""

    def __init__(self, server: Server, nic: Nic, rfs: int = DEFAULT_RFS,
                 ring_depth: int = DEFAULT_RING_DEPTH,
                 slot_capacity: int = DEFAULT_SLOT_CAPACITY,
                 request_capacity: int = DEFAULT_REQUEST_CAPACITY,
                 max_bypass_attempts: int = 8):
        self.server = server
        self.emulator = server.emulator
        self.nic = nic
        self.paradigm = server.paradigm
        self.partitions = server.workers
        self.seed = server.seed
        self.conn = self.emulator.connect(nic, server.nic)
        endpoint = server.endpoint
        self.sessions: list[ClientSession | ReplySession] = []
        for w in range(server.workers):
            if self.paradigm is ParadigmKind.RFP:
                s = session_setup(endpoint, self.conn, w, ring_depth, slot_capacity,
                                  request_capacity, rfs)
            else:
                s = serverreply_setup(endpoint, self.conn, w, request_capacity, slot_capacity)
            server.register(s.server_session)
            self.sessions.append(s)
        self.bypass = None
        self.live_backoff_s = 0.0
        if self.paradigm is ParadigmKind.BYPASS:
            if not server.indexes:
                raise ValueError("bypass clients need Server.expose_index() first")
            for index in server.indexes:
                index.allow(self.conn)
            self.bypass = BypassClient(self.emulator, self.conn, server.indexes,
                                       max_bypass_attempts, self.seed)

    def session_for(self, key: bytes):
        return self.sessions[partition_for_key(key, self.partitions, self.seed)]

    def request(self, op: int, key: bytes, value: bytes | None, callback: Callable) -> None:
        """Start one request; ``callback(Ready)`` when the result is in hand."""
        if self.bypass is not None and op == GET:
            self.bypass.get(key, callback)
            return
        s = self.session_for(key)
        frame = encode_request(op, key, value, s.request_capacity)
        if self.paradigm is ParadigmKind.RFP:
            s.send(frame, partial(_sent, s, callback))
        else:
            s.send(frame)
            s.wait(callback)

    def call(self, op: int, key: bytes, value: bytes | None = None):
        """Blocking request.  Advances the virtual clock in ``sim`` mode."""
        if self.emulator.live:
            return self._call_live(op, key, value)
        box = []
        self.request(op, key, value, box.append)
        self.emulator.run_until(lambda: box)
        return box[0]

    def _call_live(self, op, key, value):
        box = []
        if self.bypass is not None and op == GET:
            self.bypass.get(key, box.append)
            return box[0]
        s = self.session_for(key)
        frame = encode_request(op, key, value, s.request_capacity)
        delay = self.live_backoff_s
        if self.paradigm is ParadigmKind.RFP:
            s.send(frame, box.append)
            if not box[0].ok:
                raise TransportError(box[0])
            while True:
                box.clear()
                s.fetch(box.append)
                if box[0] is not NOT_READY:
                    return box[0]
                time.sleep(delay)
        s.send(frame)
        while True:
            result = s.poll()
            if result is not NOT_READY:
                return result
            time.sleep(delay)

    def get(self, key: bytes):
        return self.call(GET, key)

    def put(self, key: bytes, value: bytes):
        return self.call(PUT, key, value)


def _sent(session, callback, event):
    if not event.ok:
        raise TransportError(event)
    session.fetch(partial(_fetched, session, callback))


def _fetched(session, callback, result):
    if result is NOT_READY:
        session.fetch(partial(_fetched, session, callback))
    else:
        callback(result)
