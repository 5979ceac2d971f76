"""Run reports: latency histogram, percentiles, and CSV/JSON emission.

Column and field meanings are documented in ``docs/report_schema.md``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

from rfpkv import kernels as K


class EmptyHistogram(ValueError):
    pass


def bucket_upper_edge(index: int) -> float:
    """Exclusive upper bound (ns) of histogram bucket ``index``."""
    if index <= 0:
        return K.HIST_MIN_NS
    if index > K.HIST_BUCKETS:
        return math.inf
    return K.HIST_MIN_NS * K.HIST_GROWTH ** index


class LatencyHistogram:
    """Log-bucketed latency counts: 2% wide buckets from 100 ns to 100 ms."""

    __slots__ = ("counts", "max_ns")

    def __init__(self):
        self.counts = [0] * (K.HIST_BUCKETS + 2)
        self.max_ns = 0.0

    def record(self, ns: float) -> None:
        self.counts[K.hist_bucket(ns)] += 1
        if ns > self.max_ns:
            self.max_ns = ns

    def merge(self, other: "LatencyHistogram") -> None:
        for i, c in enumerate(other.counts):
            self.counts[i] += c
        self.max_ns = max(self.max_ns, other.max_ns)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def sparse(self) -> dict[int, int]:
        return {i: c for i, c in enumerate(self.counts) if c}

    @classmethod
    def from_sparse(cls, items: dict, max_ns: float = 0.0) -> "LatencyHistogram":
        h = cls()
        for i, c in items.items():
            h.counts[int(i)] = int(c)
        h.max_ns = max_ns
        return h

    def percentile(self, q: float) -> float:
        """Upper edge of the first bucket whose cumulative share reaches ``q``."""
        if not 0.0 < q <= 1.0:
            raise ValueError("q must lie in (0, 1]")
        total = self.total
        if total == 0:
            raise EmptyHistogram("histogram is empty")
        need = q * total
        seen = 0
        for i, c in enumerate(self.counts):
            seen += c
            if c and seen >= need - 1e-9 * total:
                edge = bucket_upper_edge(i)
                return self.max_ns if math.isinf(edge) else edge
        raise AssertionError("unreachable")


def percentile(report: "RunReport", q: float) -> float:
    return report.latency.percentile(q)


@dataclass
class RunReport:
    config: dict
    completed: int
    gets: int
    puts: int
    elapsed_ns: float
    latency: LatencyHistogram
    round_trips: dict[int, int]
    server_nic_ops: int
    server_inbound_ops: int
    utilization: dict[str, float]
    bottleneck: str
    value_bytes: int = 0
    value_count: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def paradigm(self) -> str:
        return self.config["paradigm"]

    @property
    def iops(self) -> float:
        return self.completed * 1e9 / self.elapsed_ns if self.elapsed_ns > 0 else 0.0

    @property
    def mean_round_trips(self) -> float:
        n = sum(self.round_trips.values())
        return sum(k * v for k, v in self.round_trips.items()) / n if n else 0.0

    @property
    def mean_value_size(self) -> float:
        return self.value_bytes / self.value_count if self.value_count else 0.0

    def percentiles(self) -> dict[str, float]:
        h = self.latency
        return {"p15": h.percentile(0.15), "p50": h.percentile(0.50),
                "p99": h.percentile(0.99), "p100": h.percentile(1.0)}

    # -- serialization ------------------------------------------------------------

    def to_row(self) -> dict[str, str]:
        row = {k: _fmt(v) for k, v in self.config.items()}
        pct = self.percentiles()
        row.update({
            "iops": _fmt(self.iops),
            "elapsed_ns": _fmt(self.elapsed_ns),
            "completed": str(self.completed),
            "gets": str(self.gets),
            "puts": str(self.puts),
            "mean_round_trips": _fmt(self.mean_round_trips),
            "p15_ns": _fmt(pct["p15"]),
            "p50_ns": _fmt(pct["p50"]),
            "p99_ns": _fmt(pct["p99"]),
            "p100_ns": _fmt(pct["p100"]),
            "server_nic_ops": str(self.server_nic_ops),
            "server_inbound_ops": str(self.server_inbound_ops),
            "bottleneck": self.bottleneck,
            "mean_value_size": _fmt(self.mean_value_size),
        })
        for name in UTILIZATION_KEYS:
            row[f"util_{name}"] = _fmt(self.utilization.get(name, 0.0))
        row["round_trip_hist"] = ";".join(f"{k}:{v}" for k, v in sorted(self.round_trips.items()))
        row["latency_hist"] = ";".join(f"{k}:{v}" for k, v in self.latency.sparse().items())
        return row

    def to_dict(self) -> dict:
        pct = self.percentiles()
        return {
            "config": self.config,
            "iops": round(self.iops, 3),
            "elapsed_ns": round(self.elapsed_ns, 3),
            "completed": self.completed,
            "gets": self.gets,
            "puts": self.puts,
            "mean_round_trips": round(self.mean_round_trips, 6),
            "percentiles_ns": {k: round(v, 3) for k, v in pct.items()},
            "round_trip_histogram": {str(k): v for k, v in sorted(self.round_trips.items())},
            "latency_histogram": {
                "min_ns": K.HIST_MIN_NS,
                "growth": K.HIST_GROWTH,
                "max_observed_ns": round(self.latency.max_ns, 3),
                "buckets": {str(k): v for k, v in self.latency.sparse().items()},
            },
            "server_nic_ops": self.server_nic_ops,
            "server_inbound_ops": self.server_inbound_ops,
            "utilization": {k: round(self.utilization.get(k, 0.0), 6) for k in UTILIZATION_KEYS},
            "bottleneck": self.bottleneck,
            "mean_value_size": round(self.mean_value_size, 3),
        }


UTILIZATION_KEYS = (
    "server_inbound_iops", "server_inbound_bandwidth",
    "server_outbound_iops", "server_outbound_bandwidth",
    "client_outbound_iops", "client_outbound_bandwidth", "server_cpu",
)


def bottleneck_label(util: dict[str, float]) -> str:
    """Busiest engine, named by whichever of its IOPS or bandwidth share dominates."""
    engines = {
        "server_inbound": (util["server_inbound_iops"], util["server_inbound_bandwidth"]),
        "server_outbound": (util["server_outbound_iops"], util["server_outbound_bandwidth"]),
        "client_outbound": (util["client_outbound_iops"], util["client_outbound_bandwidth"]),
        "server_cpu": (util["server_cpu"], 0.0),
    }
    name = max(engines, key=lambda k: sum(engines[k]))
    if name == "server_cpu":
        return name
    iops, bw = engines[name]
    return f"{name}_bandwidth" if bw > iops else f"{name}_iops"

CSV_COLUMNS = (
    "paradigm", "mode", "server_workers", "client_threads", "client_machines", "rfs",
    "ring_depth", "key_count", "key_size", "value_size", "get_fraction", "distribution",
    "ops", "seed", "trace", "worker_cpu_ns",
    "iops", "elapsed_ns", "completed", "gets", "puts", "mean_round_trips",
    "p15_ns", "p50_ns", "p99_ns", "p100_ns", "server_nic_ops", "server_inbound_ops",
    "bottleneck", "mean_value_size",
    *(f"util_{k}" for k in UTILIZATION_KEYS),
    "round_trip_hist", "latency_hist",
)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def render(reports: list[RunReport], fmt: str) -> str:
    if fmt == "csv":
        out = io.StringIO()
        writer = csv.DictWriter(out, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in reports:
            writer.writerow(r.to_row())
        return out.getvalue()
    if fmt == "json":
        payload = [r.to_dict() for r in reports]
        return json.dumps(payload[0] if len(payload) == 1 else payload, indent=2,
                          sort_keys=True) + "\n"
    raise ValueError(f"unknown format {fmt!r}; use csv or json")


def emit(reports: RunReport | list[RunReport], path: str | os.PathLike, fmt: str = "csv") -> None:
    """Write reports atomically: a failed write leaves no partial file."""
    if isinstance(reports, RunReport):
        reports = [reports]
    text = render(reports, fmt)
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".report-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
