"""Run configuration for the benchmark harness."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from rfpkv.baselines import ParadigmKind
from rfpkv.nic import NicProfile, default_profile, load_profile
from rfpkv.protocol import DEFAULT_REQUEST_CAPACITY, DEFAULT_SLOT_CAPACITY
from rfpkv.workload import WorkloadSpec

MODES = ("sim", "live")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    paradigm: ParadigmKind = ParadigmKind.RFP
    server_workers: int = 4
    client_threads: int = 35
    client_machines: int = 7
    rfs: int = 36
    ring_depth: int = 8
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    trace: str | None = None
    nic_profile: str | None = None
    mode: str = "sim"
    duration_ops: int = 1_000_000
    output: str | None = None
    # per-request server CPU time in virtual ns
    worker_cpu_ns: float = 200.0
    # overrides nic_profile when set (used for rescaled-profile experiments)
    profile: NicProfile | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "paradigm", ParadigmKind.parse(str(getattr(
            self.paradigm, "value", self.paradigm))))
        if self.client_threads < 1:
            raise ConfigError("client_threads must be >= 1")
        if self.client_machines < 1:
            raise ConfigError("client_machines must be >= 1")
        if self.server_workers < 1:
            raise ConfigError("server_workers must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.duration_ops < 1:
            raise ConfigError("duration_ops must be >= 1")
        if self.ring_depth < 2:
            raise ConfigError("ring_depth must be >= 2")
        if not 3 <= self.rfs <= self.slot_capacity:
            raise ConfigError(f"rfs must lie in [3, {self.slot_capacity}]")
        if self.worker_cpu_ns < 0:
            raise ConfigError("worker_cpu_ns must be >= 0")

    @property
    def slot_capacity(self) -> int:
        # PUT replies need 3 + value bytes, GET replies 2 + value, plus the header
        need = self.workload.value_size + 5
        return max(DEFAULT_SLOT_CAPACITY, need, self.rfs)

    @property
    def request_capacity(self) -> int:
        need = 3 + 5 + self.workload.key_size + self.workload.value_size
        return max(DEFAULT_REQUEST_CAPACITY, need)

    def load_nic_profile(self) -> NicProfile:
        if self.profile is not None:
            return self.profile
        if self.nic_profile is None:
            return default_profile()
        try:
            return load_profile(self.nic_profile)
        except OSError as exc:
            raise ConfigError(f"cannot read NIC profile {self.nic_profile}: {exc}") from exc

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def with_workload(self, **changes) -> "RunConfig":
        return replace(self, workload=replace(self.workload, **changes))

    def echo(self) -> dict:
        w = self.workload
        dist = "uniform" if w.distribution == "uniform" else f"zipf:{w.theta:g}"
        return {
            "paradigm": self.paradigm.value,
            "mode": self.mode,
            "server_workers": self.server_workers,
            "client_threads": self.client_threads,
            "client_machines": self.client_machines,
            "rfs": self.rfs,
            "ring_depth": self.ring_depth,
            "key_count": w.key_count,
            "key_size": w.key_size,
            "value_size": w.value_size,
            "get_fraction": w.get_fraction,
            "distribution": dist,
            "ops": self.duration_ops,
            "seed": w.seed,
            "trace": self.trace or "",
            "worker_cpu_ns": self.worker_cpu_ns,
        }
