"""Discrete-event benchmark harness.

Client threads are closed-loop state machines stepped by the emulator's
virtual clock.  Threads are dealt round-robin onto ``client_machines``
NICs; each NIC's out-bound engine is shared by the threads placed on it.
The key space is preloaded into server memory before the clock starts, so
measurement begins at virtual time zero.
"""

from __future__ import annotations

from dataclasses import replace

from rfpkv.baselines import ParadigmKind
from rfpkv.bench.config import ConfigError, RunConfig
from rfpkv.bench.report import UTILIZATION_KEYS, LatencyHistogram, RunReport, bottleneck_label
from rfpkv.cluster import Client, Server
from rfpkv.kvstore import Store
from rfpkv.protocol import GET, PUT
from rfpkv.rdma import Emulator
from rfpkv.workload import (
    TraceError, key_bytes, load_trace, op_arrays, rng_for, value_bytes,
)


class Workload:
    """Per-client operation source plus the preload image."""

    def __init__(self, config: RunConfig):
        self.config = config
        spec = config.workload
        if config.trace:
            try:
                self.records = list(load_trace(config.trace))
            except OSError as exc:
                raise ConfigError(f"cannot read trace {config.trace}: {exc}") from exc
            except TraceError as exc:
                raise ConfigError(f"bad trace {config.trace}: {exc}") from exc
            if not self.records:
                raise ConfigError(f"trace {config.trace} has no records")
            self.key_count = len(self.records)
            self.max_key = max(len(r.key) for r in self.records)
            self.max_value = max(len(r.value) for r in self.records)
        else:
            self.records = None
            self.key_count = spec.key_count
            self.max_key = spec.key_size
            self.max_value = spec.value_size

    @property
    def slot_capacity(self) -> int:
        return max(self.config.slot_capacity, self.max_value + 7)

    @property
    def request_capacity(self) -> int:
        return max(self.config.request_capacity, self.max_key + self.max_value + 8)

    def preload(self):
        if self.records is not None:
            yield from self.records
            return
        spec = self.config.workload
        for k in range(spec.key_count):
            yield key_bytes(k, spec.key_size), value_bytes(k, spec.value_size)

    def quota(self, client: int) -> int:
        n, c = self.config.duration_ops, self.config.client_threads
        return n // c + (client < n % c)

    def stream(self, client: int):
        """List of ``(op, key, value)`` for one client."""
        spec = self.config.workload
        n = self.quota(client)
        if self.records is not None:
            # replay in file order, cycling; global op j goes to client j % clients
            rng = rng_for(spec.seed, client)
            is_get = (rng.random(n) < spec.get_fraction).tolist()
            recs, c = self.records, self.config.client_threads
            picks = (recs[(client + i * c) % len(recs)] for i in range(n))
            return [(GET, r.key, None) if g else (PUT, r.key, r.value)
                    for g, r in zip(is_get, picks)]
        is_get, index = op_arrays(spec, client, n)
        ks, vs = spec.key_size, spec.value_size
        tag = client << 40
        return [(GET, key_bytes(k, ks), None) if g else (PUT, key_bytes(k, ks),
                                                          value_bytes(tag | i, vs))
                for i, (g, k) in enumerate(zip(is_get.tolist(), index.tolist()))]


class _Driver:
    """One closed-loop client thread."""

    __slots__ = ("client", "emu", "ops", "i", "t0", "hist", "rts", "vbytes", "vcount",
                 "errors", "finish", "gets", "puts", "_cb")

    def __init__(self, client: Client, ops: list):
        self.client = client
        self.emu = client.emulator
        self.ops = ops
        self.i = 0
        self.t0 = 0.0
        self.hist = LatencyHistogram()
        self.rts: dict[int, int] = {}
        self.vbytes = 0
        self.vcount = 0
        self.errors = 0
        self.finish = 0.0
        self.gets = 0
        self.puts = 0
        self._cb = self._done

    def start(self):
        if self.ops:
            self._issue()

    def _issue(self):
        op, key, value = self.ops[self.i]
        self.t0 = self.emu.now
        self.client.request(op, key, value, self._cb)

    def _done(self, ready):
        now = self.emu.now
        self.hist.record(now - self.t0)
        rts = self.rts
        rts[ready.round_trips] = rts.get(ready.round_trips, 0) + 1
        op, _, value = self.ops[self.i]
        if op == GET:
            self.gets += 1
            if ready.value is not None:
                self.vbytes += len(ready.value)
                self.vcount += 1
        else:
            self.puts += 1
            self.vbytes += len(value)
            self.vcount += 1
        if ready.status == "error":
            self.errors += 1
        self.i += 1
        if self.i < len(self.ops):
            self._issue()
        else:
            self.finish = now


def build(config: RunConfig, emulator: Emulator, workload: Workload):
    """Create the server (preloaded) and one :class:`Client` per client thread."""
    server_nic = emulator.add_nic("server", issuers=config.server_workers)
    per_machine = [0] * config.client_machines
    for c in range(config.client_threads):
        per_machine[c % config.client_machines] += 1
    nics = [emulator.add_nic(f"client{m}", issuers=max(1, n))
            for m, n in enumerate(per_machine)]
    seed = config.workload.seed
    store = Store(config.server_workers, seed=seed)
    server = Server(emulator, server_nic, config.paradigm, config.server_workers, store,
                    cpu_ns=config.worker_cpu_ns, seed=seed)
    if server.paradigm is ParadigmKind.BYPASS:
        per_part = -(-workload.key_count // config.server_workers)
        server.expose_index(int(per_part * 1.25) + 16, workload.max_key + workload.max_value)
    for key, value in workload.preload():
        server.preload(key, value)
    clients = [
        Client(server, nics[c % config.client_machines], rfs=config.rfs,
               ring_depth=config.ring_depth, slot_capacity=workload.slot_capacity,
               request_capacity=workload.request_capacity)
        for c in range(config.client_threads)
    ]
    return server, clients, nics


def run_sim(config: RunConfig) -> RunReport:
    profile = config.load_nic_profile()
    workload = Workload(config)
    emu = Emulator(profile, mode="sim")
    server, clients, nics = build(config, emu, workload)
    drivers = [_Driver(c, workload.stream(i)) for i, c in enumerate(clients)]
    t0 = emu.now
    for d in drivers:
        d.start()
    emu.run()
    return _report(config, workload, server, nics, drivers, t0)


def _report(config, workload, server, nics, drivers, t0) -> RunReport:
    hist = LatencyHistogram()
    rts: dict[int, int] = {}
    for d in drivers:
        hist.merge(d.hist)
        for k, v in d.rts.items():
            rts[k] = rts.get(k, 0) + v
    elapsed = max(d.finish for d in drivers) - t0
    snic = server.nic
    util = dict.fromkeys(UTILIZATION_KEYS, 0.0)
    if elapsed > 0:
        util["server_inbound_iops"] = snic.in_busy_iops / elapsed
        util["server_inbound_bandwidth"] = snic.in_busy_bw / elapsed
        util["server_outbound_iops"] = snic.out_busy_iops / elapsed
        util["server_outbound_bandwidth"] = snic.out_busy_bw / elapsed
        busiest = max(nics, key=lambda n: (n.out_busy_iops + n.out_busy_bw, -n.id))
        util["client_outbound_iops"] = busiest.out_busy_iops / elapsed
        util["client_outbound_bandwidth"] = busiest.out_busy_bw / elapsed
        util["server_cpu"] = max(server.busy_ns) / elapsed
    echo = config.echo()
    if workload.records is not None:
        echo = {**echo, "key_count": workload.key_count}
    return RunReport(
        config=echo,
        completed=hist.total,
        gets=sum(d.gets for d in drivers),
        puts=sum(d.puts for d in drivers),
        elapsed_ns=elapsed,
        latency=hist,
        round_trips=dict(sorted(rts.items())),
        server_nic_ops=snic.outbound_ops,
        server_inbound_ops=snic.inbound_ops,
        utilization=util,
        bottleneck=bottleneck_label(util),
        value_bytes=sum(d.vbytes for d in drivers),
        value_count=sum(d.vcount for d in drivers),
        extra={"errors": sum(d.errors for d in drivers)},
    )


def run(config: RunConfig) -> RunReport:
    """Execute one run in the configured mode."""
    if config.mode == "live":
        from rfpkv.bench.live import run_live
        return run_live(config)
    return run_sim(config)


SWEEP_AXES = ("get_fraction", "value_size", "client_threads", "rfs", "distribution")


def apply_point(base: RunConfig, axis: str, point) -> RunConfig:
    from rfpkv.workload import parse_distribution
    if axis == "get_fraction":
        return base.with_workload(get_fraction=float(point))
    if axis == "value_size":
        return base.with_workload(value_size=int(point))
    if axis == "client_threads":
        return base.with_(client_threads=int(point))
    if axis == "rfs":
        return base.with_(rfs=int(point))
    if axis == "distribution":
        name, theta = parse_distribution(str(point))
        return replace(base, workload=replace(base.workload, distribution=name, theta=theta))
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")


def sweep(base: RunConfig, axis: str, points) -> list[RunReport]:
    configs = [apply_point(base, axis, p) for p in points]   # validate all first
    return [run(c) for c in configs]
