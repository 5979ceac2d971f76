"""NIC calibration profiles and the per-operation cost model.

A profile captures the asymmetry between operations a NIC *serves*
(in-bound) and operations it *issues* (out-bound).  In-bound service is a
single aggregate rate; out-bound throughput depends on how many threads
share the NIC, given as a lookup table that is allowed to go down as well
as up.

Profile files are plain ``key = value`` text::

    # rates in operations/second, bandwidth in bytes/second
    inbound_rate = 11260000
    outbound_curve = 1:620000, 2:1120000, 4:2110000, 8:1500000
    bandwidth = 5000000000
    inline_threshold = 256
    bandwidth_crossover = 1536
    noninline_surcharge_ns = 0
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace
from os import PathLike

KINDS = ("inbound_read", "inbound_write", "outbound_read", "outbound_write")


class ProfileError(ValueError):
    """Raised for an invalid or unparsable NIC profile."""


@dataclass(frozen=True)
class NicProfile:
    inbound_rate: float
    outbound_curve: tuple[tuple[int, float], ...]
    bandwidth: float
    inline_threshold: int = 256
    bandwidth_crossover: int = 1536
    noninline_surcharge_ns: float = 0.0
    _xs: tuple[int, ...] = field(init=False, repr=False, compare=False)
    _ys: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        curve = tuple(sorted((int(n), float(r)) for n, r in self.outbound_curve))
        if not curve:
            raise ProfileError("outbound_curve must have at least one point")
        if len({n for n, _ in curve}) != len(curve):
            raise ProfileError("outbound_curve has duplicate thread counts")
        if any(n < 1 or r <= 0 for n, r in curve):
            raise ProfileError("outbound_curve needs thread counts >= 1 and positive rates")
        if self.inbound_rate <= 0 or self.bandwidth <= 0:
            raise ProfileError("inbound_rate and bandwidth must be positive")
        if self.inbound_rate <= max(r for _, r in curve):
            raise ProfileError("inbound_rate must exceed every out-bound curve rate")
        if self.inline_threshold < 0:
            raise ProfileError("inline_threshold must be >= 0")
        object.__setattr__(self, "outbound_curve", curve)
        object.__setattr__(self, "_xs", tuple(n for n, _ in curve))
        object.__setattr__(self, "_ys", tuple(r for _, r in curve))

    def outbound_rate(self, issuers: float) -> float:
        """Aggregate out-bound ops/s with ``issuers`` active threads.

        Piecewise-linear between table points, clamped at both ends.
        """
        xs, ys = self._xs, self._ys
        if issuers <= xs[0]:
            return ys[0]
        if issuers >= xs[-1]:
            return ys[-1]
        i = bisect.bisect_right(xs, issuers)
        x0, x1 = xs[i - 1], xs[i]
        y0, y1 = ys[i - 1], ys[i]
        return y0 + (y1 - y0) * (issuers - x0) / (x1 - x0)

    @property
    def peak_outbound_rate(self) -> float:
        return max(self._ys)

    @property
    def ns_per_byte(self) -> float:
        return 1e9 / self.bandwidth

    def scaled(self, outbound: float = 1.0, inbound: float = 1.0,
               bandwidth: float = 1.0) -> "NicProfile":
        """Copy with rates multiplied; used for bottleneck-attribution runs."""
        return replace(
            self,
            inbound_rate=self.inbound_rate * inbound,
            outbound_curve=tuple((n, r * outbound) for n, r in self.outbound_curve),
            bandwidth=self.bandwidth * bandwidth,
        )

    def to_text(self) -> str:
        curve = ", ".join(f"{n}:{r:g}" for n, r in self.outbound_curve)
        return (
            f"inbound_rate = {self.inbound_rate:g}\n"
            f"outbound_curve = {curve}\n"
            f"bandwidth = {self.bandwidth:g}\n"
            f"inline_threshold = {self.inline_threshold}\n"
            f"bandwidth_crossover = {self.bandwidth_crossover}\n"
            f"noninline_surcharge_ns = {self.noninline_surcharge_ns:g}\n"
        )


def default_profile() -> NicProfile:
    """40 Gbps ConnectX-3 class NIC.

    The 16-thread point extends the measured table to the 16-threads-per-
    machine client configuration (0.886 MOPS per client NIC).
    """
    return NicProfile(
        inbound_rate=11.26e6,
        outbound_curve=((1, 0.62e6), (2, 1.12e6), (4, 2.11e6), (8, 1.50e6), (16, 0.886e6)),
        bandwidth=5e9,
        inline_threshold=256,
        bandwidth_crossover=1536,
    )


def service_time(profile: NicProfile, kind: str, length: int, active_issuers: int = 1) -> float:
    """Virtual ns one operation occupies from the point of view of its issuer.

    Out-bound kinds charge each of ``active_issuers`` threads
    ``active_issuers / outbound_rate(active_issuers)``; in-bound kinds take
    one slot of the NIC's aggregate in-bound FIFO.  Large transfers are
    bounded by ``length / bandwidth`` instead.
    """
    if active_issuers < 1:
        raise ValueError("active_issuers must be >= 1")
    if kind.startswith("outbound"):
        overhead = active_issuers * 1e9 / profile.outbound_rate(active_issuers)
    elif kind.startswith("inbound"):
        overhead = 1e9 / profile.inbound_rate
    else:
        raise ValueError(f"unknown operation kind {kind!r}; expected one of {KINDS}")
    return max(overhead, length * profile.ns_per_byte)


_FIELDS = {
    "inbound_rate": float,
    "bandwidth": float,
    "inline_threshold": int,
    "bandwidth_crossover": int,
    "noninline_surcharge_ns": float,
}


def parse_profile(text: str) -> NicProfile:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ProfileError(f"line {lineno}: expected 'key = value'")
        key, _, value = (s.strip() for s in line.partition("="))
        try:
            if key == "outbound_curve":
                pairs = []
                for item in value.split(","):
                    n, _, rate = item.strip().partition(":")
                    pairs.append((int(n), float(rate)))
                values[key] = tuple(pairs)
            elif key in _FIELDS:
                values[key] = _FIELDS[key](float(value)) if _FIELDS[key] is int else float(value)
            else:
                raise ProfileError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ProfileError):
                raise
            raise ProfileError(f"line {lineno}: bad value for {key}: {value!r}") from None
    missing = {"inbound_rate", "outbound_curve", "bandwidth"} - values.keys()
    if missing:
        raise ProfileError(f"missing required keys: {', '.join(sorted(missing))}")
    return NicProfile(**values)


def load_profile(path: str | PathLike) -> NicProfile:
    with open(path, encoding="utf-8") as fh:
        return parse_profile(fh.read())
