"""Key-value workloads: uniform / Zipf key choice, GET-PUT mixes and trace replay.

Every stream is driven by a PCG64 generator derived from ``(seed, stream)``,
so a given WorkloadSpec always yields the same operations.  Keys are the 0-based
key number as a big-endian integer, left-padded to ``key_size`` bytes.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from os import PathLike
from typing import Iterator, NamedTuple

import numpy as np

from rfpkv.kvstore import max_value_len
from rfpkv.protocol import GET, PUT


@dataclass(frozen=True)
class WorkloadSpec:
    key_count: int = 1_000_000
    key_size: int = 16
    value_size: int = 32
    get_fraction: float = 0.95
    distribution: str = "uniform"
    theta: float = 0.99
    ops: int = 1_000_000
    seed: int = 1

    def __post_init__(self):
        if not 0.0 <= self.get_fraction <= 1.0:
            raise ValueError("get_fraction must be within [0, 1]")
        if self.distribution not in ("uniform", "zipf"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.distribution == "zipf" and self.theta <= 0:
            raise ValueError("zipf theta must be > 0")
        if self.key_count < 1 or self.ops < 0:
            raise ValueError("key_count must be >= 1 and ops >= 0")
        if self.key_size < 1:
            raise ValueError("key_size must be >= 1")
        if self.value_size < 0 or self.value_size > max_value_len(self.key_size):
            raise ValueError(f"value_size {self.value_size} out of range")


def parse_distribution(text: str) -> tuple[str, float]:
    """``"uniform"`` or ``"zipf:THETA"`` (``"zipf"`` alone means 0.99)."""
    name, _, arg = text.partition(":")
    name = name.strip().lower()
    if name == "uniform" and not arg:
        return "uniform", 0.99
    if name == "zipf":
        theta = float(arg) if arg else 0.99
        if theta <= 0:
            raise ValueError("zipf theta must be > 0")
        return "zipf", theta
    raise ValueError(f"bad distribution {text!r}; use uniform or zipf:THETA")


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def key_bytes(index: int, key_size: int = 16) -> bytes:
    if key_size >= 8:
        return index.to_bytes(8, "big").rjust(key_size, b"\0")
    return (index % (1 << (8 * key_size))).to_bytes(key_size, "big")


def value_bytes(tag: int, size: int) -> bytes:
    """Deterministic value whose first bytes encode ``tag``."""
    head = struct.pack(">Q", tag & 0xFFFFFFFFFFFFFFFF)
    if size <= 8:
        return head[8 - size:]
    return head + b"v" * (size - 8)


# -- Zipf ----------------------------------------------------------------------

class ZipfTable:
    """Exact inverse-CDF sampler for ranks 1..n with P(k) proportional to k^-theta."""

    def __init__(self, n: int, theta: float):
        if n < 1:
            raise ValueError("n must be >= 1")
        if theta <= 0:
            raise ValueError("theta must be > 0")
        self.n = n
        self.theta = theta
        weights = np.arange(1, n + 1, dtype=np.float64) ** -theta
        self.norm = math.fsum(weights)
        self.pmf = weights / self.norm
        cdf = np.cumsum(self.pmf)
        cdf[-1] = 1.0
        self.cdf = cdf

    def sample(self, rng: np.random.Generator, size: int | None = None):
        u = rng.random(size)
        ranks = np.searchsorted(self.cdf, u, side="right") + 1
        if size is None:
            return int(min(ranks, self.n))
        return np.minimum(ranks, self.n)

    def top_probability(self) -> float:
        return 1.0 / self.norm


@lru_cache(maxsize=8)
def zipf_table(n: int, theta: float) -> ZipfTable:
    return ZipfTable(n, theta)


def zipf_sample(theta: float, n: int, rng: np.random.Generator) -> int:
    """One rank in [1, n]."""
    if n == 1:
        return 1
    return zipf_table(n, theta).sample(rng)


# -- synthetic streams -----------------------------------------------------------

def op_arrays(spec: WorkloadSpec, stream: int = 0, ops: int | None = None):
    """``(is_get, key_index)`` numpy arrays for one stream."""
    n = spec.ops if ops is None else ops
    rng = rng_for(spec.seed, stream)
    is_get = rng.random(n) < spec.get_fraction
    if spec.distribution == "zipf":
        index = zipf_table(spec.key_count, spec.theta).sample(rng, n) - 1
    else:
        index = rng.integers(0, spec.key_count, size=n)
    return is_get, index.astype(np.int64)


def generate(spec: WorkloadSpec, stream: int = 0) -> Iterator[tuple[int, bytes, bytes | None]]:
    """Yield ``(op, key, value)``; value is None for GETs."""
    is_get, index = op_arrays(spec, stream)
    ks, vs = spec.key_size, spec.value_size
    for i, (g, k) in enumerate(zip(is_get.tolist(), index.tolist())):
        if g:
            yield GET, key_bytes(k, ks), None
        else:
            yield PUT, key_bytes(k, ks), value_bytes((stream << 40) | i, vs)


def preload_items(spec: WorkloadSpec) -> Iterator[tuple[bytes, bytes]]:
    for k in range(spec.key_count):
        yield key_bytes(k, spec.key_size), value_bytes(k, spec.value_size)


# -- traces ----------------------------------------------------------------------

class TraceRecord(NamedTuple):
    key: bytes
    value: bytes


class TraceError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MalformedLine(TraceError):
    pass


class TraceValueTooLarge(TraceError):
    pass


def load_trace(path: str | PathLike, max_value: int | None = None) -> Iterator[TraceRecord]:
    """Stream ``key<TAB>value`` records in file order.

    ``OSError`` propagates for unreadable files.  Values longer than
    ``max_value`` (default: the largest value a request frame can carry)
    raise :class:`TraceValueTooLarge` with the 1-based line number.
    """
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.endswith("\r"):
                line = line[:-1]
            key, tab, value = line.partition("\t")
            if not tab or not key:
                raise MalformedLine("expected key<TAB>value", lineno)
            kb = key.encode("utf-8")
            vb = value.encode("utf-8")
            limit = max_value_len(len(kb)) if max_value is None else max_value
            if len(vb) > limit:
                raise TraceValueTooLarge(f"value of {len(vb)} B exceeds {limit} B", lineno)
            yield TraceRecord(kb, vb)


def key_digest(user_token: bytes, time_token: bytes) -> bytes:
    """16-byte key: MD5 of user id followed by publish time."""
    return hashlib.md5(user_token + time_token).digest()


_TEXT = np.frombuffer(b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,!?",
                      dtype=np.uint8)


def synthesize_trace(path: str | PathLike, records: int = 10_000, seed: int = 7,
                     mean_size: int = 43, max_size: int = 899, users: int = 93_633) -> None:
    """Write a microblog-like trace: md5(user+time) keys, short text values.

    Sizes are log-normal, clipped to ``[1, max_size]``, then nudged so the
    mean is exactly ``mean_size`` (rounded to whole bytes) and the largest
    value is exactly ``max_size``.
    """
    if records < 2:
        raise ValueError("need at least two records")
    rng = rng_for(seed, 0)
    sigma = 0.8
    mu = math.log(mean_size) - sigma * sigma / 2
    sizes = np.clip(np.rint(rng.lognormal(mu, sigma, records)), 1, max_size).astype(np.int64)
    sizes[0] = max_size
    target = round(mean_size * records)
    diff = target - int(sizes.sum())
    order = rng.permutation(np.arange(1, records))
    step = 1 if diff > 0 else -1
    i = 0
    while diff:
        j = order[i % len(order)]
        if 1 <= sizes[j] + step < max_size:
            sizes[j] += step
            diff -= step
        i += 1
    user_ids = rng.integers(0, users, size=records)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for n, (size, uid) in enumerate(zip(sizes.tolist(), user_ids.tolist())):
            key = key_digest(str(uid).encode(), str(1_400_000_000 + n).encode()).hex()
            text = _TEXT[rng.integers(0, len(_TEXT), size=size)].tobytes().decode("ascii")
            fh.write(f"{key}\t{text}\n")
