"""Real-time harness: one OS thread per client and per server worker.

Latency and IOPS are wall-clock and host-dependent; the emulator applies
no cost model in this mode.
"""

from __future__ import annotations

import sys
import threading
import time

from rfpkv.bench.config import RunConfig
from rfpkv.bench.report import UTILIZATION_KEYS, LatencyHistogram, RunReport
from rfpkv.bench.sim import Workload, build
from rfpkv.protocol import GET
from rfpkv.rdma import Emulator

# an idle poller must actually yield the CPU, or a single-core host convoys on the GIL
IDLE_SLEEP_S = 1e-6


def run_live(config: RunConfig) -> RunReport:
    profile = config.load_nic_profile()
    workload = Workload(config)
    emu = Emulator(profile, mode="live")
    server, clients, _ = build(config, emu, workload)
    for c in clients:
        c.live_backoff_s = IDLE_SLEEP_S
    streams = [workload.stream(i) for i in range(len(clients))]
    stop = threading.Event()
    results = [None] * len(clients)
    failures: list[BaseException] = []

    def worker(w):
        try:
            while not stop.is_set():
                if not server.poll_once(w):
                    time.sleep(IDLE_SLEEP_S)
        except BaseException as exc:      # reported after join
            failures.append(exc)
            stop.set()

    def client(i):
        hist = LatencyHistogram()
        rts: dict[int, int] = {}
        vbytes = vcount = 0
        c = clients[i]
        try:
            for op, key, value in streams[i]:
                if stop.is_set():
                    break
                t0 = time.perf_counter_ns()
                ready = c.call(op, key, value)
                hist.record(time.perf_counter_ns() - t0)
                rts[ready.round_trips] = rts.get(ready.round_trips, 0) + 1
                v = ready.value if op == GET else value
                if v is not None:
                    vbytes += len(v)
                    vcount += 1
        except BaseException as exc:
            failures.append(exc)
            stop.set()
        results[i] = (hist, rts, vbytes, vcount)

    workers = [threading.Thread(target=worker, args=(w,), daemon=True)
               for w in range(config.server_workers)]
    threads = [threading.Thread(target=client, args=(i,)) for i in range(len(clients))]
    # pollers spin; a short switch interval keeps hand-offs from dominating latency
    old_interval = sys.getswitchinterval()
    sys.setswitchinterval(50e-6)
    try:
        for t in workers:
            t.start()
        start = time.perf_counter_ns()
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        elapsed = time.perf_counter_ns() - start
        stop.set()
        for t in workers:
            t.join()
    finally:
        sys.setswitchinterval(old_interval)
    if failures:
        raise failures[0]

    hist = LatencyHistogram()
    rts: dict[int, int] = {}
    for h, r, _, _ in results:
        hist.merge(h)
        for k, v in r.items():
            rts[k] = rts.get(k, 0) + v
    gets = sum(1 for s in streams for op, _, _ in s if op == GET)
    return RunReport(
        config=config.echo(),
        completed=hist.total,
        gets=gets,
        puts=hist.total - gets,
        elapsed_ns=float(elapsed),
        latency=hist,
        round_trips=dict(sorted(rts.items())),
        server_nic_ops=server.nic.outbound_ops,
        server_inbound_ops=server.nic.inbound_ops,
        utilization=dict.fromkeys(UTILIZATION_KEYS, 0.0),
        bottleneck="unmodeled",
        value_bytes=sum(r[2] for r in results),
        value_count=sum(r[3] for r in results),
    )
