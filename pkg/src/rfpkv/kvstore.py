"""Hash-partitioned in-memory key-value store.

Each partition is owned by exactly one server worker (exclusive read,
exclusive write), so partitions need no locking.  Placement uses a seeded
64-bit BLAKE2b hash of the key, modulo the partition count; clients use
the same function to choose which worker to send a request to.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

from rfpkv import kernels as K
from rfpkv.errors import PlacementError, ValueTooLarge

MAX_KEY = 0xFFFF


_blake2b = hashlib.blake2b
_from_bytes = int.from_bytes


@lru_cache(maxsize=64)
def _salt(seed: int) -> bytes:
    return seed.to_bytes(16, "little") if seed else b""


def key_hash(key: bytes, seed: int = 0) -> int:
    return _from_bytes(_blake2b(key, digest_size=8, salt=_salt(seed)).digest(), "little")


def partition_for_key(key: bytes, partitions: int, seed: int = 0) -> int:
    if partitions < 1:
        raise ValueError("partition count must be >= 1")
    if partitions == 1:
        return 0
    return key_hash(key, seed) % partitions


def max_value_len(key_len: int) -> int:
    # a PUT frame body is opcode + key_len + key + val_len + value and must
    # fit the 15-bit length field; this is tighter than the response bound
    return min(K.MAX_BODY - 3, K.MAX_BODY - 5 - key_len)


class Partition:
    """One shard.  ``capacity_bytes`` enables FIFO eviction (oldest insert first)."""

    def __init__(self, index: int, partitions: int, owner_worker: int | None = None,
                 capacity_bytes: int | None = None, seed: int = 0):
        self.index = index
        self.partitions = partitions
        self.owner_worker = index if owner_worker is None else owner_worker
        self.capacity_bytes = capacity_bytes
        self.seed = seed
        self.table: dict[bytes, bytes] = {}
        self.used_bytes = 0
        self.evictions = 0

    def __len__(self):
        return len(self.table)

    def __contains__(self, key):
        return key in self.table

    def get(self, key: bytes) -> bytes | None:
        return self.table.get(key)

    def put(self, key: bytes, value: bytes, placed: bool = False) -> None:
        """Insert or update.  ``placed=True`` skips the placement re-check."""
        if not key:
            raise ValueError("keys must be non-empty")
        if len(key) > MAX_KEY:
            raise ValueError(f"key of {len(key)} B exceeds {MAX_KEY} B")
        if len(value) > max_value_len(len(key)):
            raise ValueTooLarge(f"value of {len(value)} B exceeds {max_value_len(len(key))} B")
        if not placed and partition_for_key(key, self.partitions, self.seed) != self.index:
            raise PlacementError(f"key belongs to another partition, not {self.index}")
        table = self.table
        old = table.pop(key, None)
        if old is not None:
            self.used_bytes -= len(key) + len(old)
        table[key] = value
        self.used_bytes += len(key) + len(value)
        if self.capacity_bytes is not None:
            self._evict()

    def _evict(self) -> None:
        table = self.table
        while self.used_bytes > self.capacity_bytes and len(table) > 1:
            victim = next(iter(table))
            self.used_bytes -= len(victim) + len(table.pop(victim))
            self.evictions += 1

    def delete(self, key: bytes) -> bool:
        old = self.table.pop(key, None)
        if old is None:
            return False
        self.used_bytes -= len(key) + len(old)
        return True


def get(partition: Partition, key: bytes) -> bytes | None:
    return partition.get(key)


def put(partition: Partition, key: bytes, value: bytes) -> None:
    partition.put(key, value)


class Store:
    """All partitions of one server; partition ``i`` is owned by worker ``i``."""

    def __init__(self, partitions: int, capacity_bytes: int | None = None, seed: int = 0):
        if partitions < 1:
            raise ValueError("partition count must be >= 1")
        self.seed = seed
        per_part = None if capacity_bytes is None else capacity_bytes // partitions
        self.partitions = [Partition(i, partitions, capacity_bytes=per_part, seed=seed)
                           for i in range(partitions)]

    def __len__(self):
        return sum(len(p) for p in self.partitions)

    def partition_of(self, key: bytes) -> Partition:
        return self.partitions[partition_for_key(key, len(self.partitions), self.seed)]

    def execute(self, partition: Partition, op: int, key: bytes, value: bytes | None):
        """Run one request against its partition; returns ``(status, value)``."""
        if op == K.OP_GET:
            found = partition.table.get(key)
            if found is None:
                return K.ST_NOT_FOUND, None
            return K.ST_OK, found
        if op == K.OP_PUT:
            try:
                partition.put(key, value)
            except (ValueError, PlacementError):
                return K.ST_ERROR, None
            return K.ST_OK, None
        return K.ST_ERROR, None
