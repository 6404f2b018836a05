"""Membership and near-duplicate lookup over sets of 256-bit hashes.

Two complementary structures:

* `BloomFilter` -- compact probabilistic membership for exact hashes; no
  false negatives, tunable false-positive rate.
* `MihIndex` -- exact fixed-radius Hamming search by multi-index hashing:
  the 256 bits split into 32 byte-wide chunks, one exact-match bucket table
  per chunk. Any hash within distance <= 31 of a query must agree with it
  on at least one whole chunk (pigeonhole), so probing 32 buckets finds
  every candidate; full-hash verification then removes false candidates.

Both are build-then-freeze: construct single-threaded, then share freely
across readers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

from .errors import (
    ConfigurationError,
    DuplicateIdError,
    UnsupportedRadiusError,
)
from .pdq import PdqHash

CHUNK_COUNT = 32
CHUNK_BITS = 8
MAX_RADIUS = CHUNK_COUNT - 1

MIH_MAGIC = b"MIH1"
BLOOM_MAGIC = b"BLM1"

MAX_U64 = (1 << 64) - 1


def hamming(a: PdqHash, b: PdqHash) -> int:
    """Number of differing bit positions between two 256-bit hashes."""
    return (a.bits ^ b.bits).bit_count()


@dataclass(frozen=True)
class MatchResult:
    id: int
    distance: int


# -- Bloom filter ---------------------------------------------------------------


class BloomFilter:
    """Bloom filter over 32-byte fingerprints with double-hashed indices.

    The i-th probe index is (h1 + seed_i * h2) mod m, with h1 and h2 the two
    64-bit halves of SHA-256 of the fingerprint and seeds defaulting to
    0..k-1.
    """

    def __init__(self, m: int, k: int, n: int = 0, seeds=None, bits: bytearray = None):
        # m is the index modulus; the byte-aligned array never allocates
        # fewer than 8 physical bits
        if m < 1:
            raise ConfigurationError(f"bit array length m={m} must be >= 1")
        if not (1 <= k <= 16):
            raise ConfigurationError(f"hash count k={k} must be in [1, 16]")
        self.m = m
        self.k = k
        self.n = n
        self.seeds = tuple(seeds) if seeds is not None else tuple(range(k))
        if len(self.seeds) != k:
            raise ConfigurationError("need exactly k index-derivation seeds")
        self.bits = bits if bits is not None else bytearray((m + 7) // 8)
        if len(self.bits) != (m + 7) // 8:
            raise ConfigurationError("bit array does not match m")

    @classmethod
    def create(cls, expected_n: int, target_fpr: float) -> "BloomFilter":
        """Size the filter with the textbook optima for n items at rate p."""
        if expected_n < 1:
            raise ConfigurationError(f"expected_n={expected_n} must be >= 1")
        if not (0.0 < target_fpr < 1.0):
            raise ConfigurationError(f"target_fpr={target_fpr} must be in (0, 1)")
        m = math.ceil(-expected_n * math.log(target_fpr) / (math.log(2) ** 2))
        k = round((m / expected_n) * math.log(2))
        k = max(1, min(16, k))
        return cls(m=m, k=k)

    def _indices(self, h: PdqHash):
        digest = hashlib.sha256(h.to_bytes()).digest()
        h1 = int.from_bytes(digest[0:8], "little")
        h2 = int.from_bytes(digest[8:16], "little") | 1
        m = self.m
        return [(h1 + s * h2) % m for s in self.seeds]

    def insert(self, h: PdqHash) -> None:
        for idx in self._indices(h):
            self.bits[idx >> 3] |= 1 << (idx & 7)
        self.n += 1

    def contains(self, h: PdqHash) -> bool:
        bits = self.bits
        for idx in self._indices(h):
            if not (bits[idx >> 3] >> (idx & 7)) & 1:
                return False
        return True

    def expected_fpr(self) -> float:
        """(1 - e^(-kn/m))^k at the current fill level."""
        if self.n == 0:
            return 0.0
        return (1.0 - math.exp(-self.k * self.n / self.m)) ** self.k

    def serialize(self) -> bytes:
        out = bytearray(BLOOM_MAGIC)
        for value in (self.m, self.k, self.n):
            out += value.to_bytes(8, "little")
        for seed in self.seeds:
            out += seed.to_bytes(8, "little")
        out += self.bits
        return bytes(out)

    @classmethod
    def deserialize(cls, raw: bytes) -> "BloomFilter":
        if raw[:4] != BLOOM_MAGIC:
            raise ConfigurationError("not a BLM1 blob")
        m = int.from_bytes(raw[4:12], "little")
        k = int.from_bytes(raw[12:20], "little")
        n = int.from_bytes(raw[20:28], "little")
        pos = 28
        seeds = []
        for _ in range(k):
            seeds.append(int.from_bytes(raw[pos : pos + 8], "little"))
            pos += 8
        nbytes = (m + 7) // 8
        bits = bytearray(raw[pos : pos + nbytes])
        if len(bits) != nbytes or pos + nbytes != len(raw):
            raise ConfigurationError("truncated or oversized BLM1 blob")
        return cls(m=m, k=k, n=n, seeds=seeds, bits=bits)


# -- multi-index hashing ----------------------------------------------------------


class MihIndex:
    """Frozen Hamming-radius index over (id, hash) entries, radius <= 31."""

    def __init__(self, ids, hashes):
        self._ids = list(ids)
        self._hashes = list(hashes)  # 256-bit ints, parallel to _ids
        self._tables = [dict() for _ in range(CHUNK_COUNT)]
        for pos, value in enumerate(self._hashes):
            for chunk in range(CHUNK_COUNT):
                key = (value >> (8 * (CHUNK_COUNT - 1 - chunk))) & 0xFF
                self._tables[chunk].setdefault(key, []).append(pos)

    @classmethod
    def build(cls, entries) -> "MihIndex":
        """Build from (id, PdqHash) pairs; ids must be unique uint64."""
        ids = []
        hashes = []
        seen = set()
        for entry_id, h in entries:
            if not (0 <= entry_id <= MAX_U64):
                raise ConfigurationError(f"id {entry_id} not a uint64")
            if entry_id in seen:
                raise DuplicateIdError(f"duplicate entry id {entry_id}")
            seen.add(entry_id)
            ids.append(entry_id)
            hashes.append(h.bits)
        return cls(ids, hashes)

    def __len__(self) -> int:
        return len(self._ids)

    def entries(self):
        for entry_id, value in zip(self._ids, self._hashes):
            yield entry_id, PdqHash(bits=value, quality=100)

    def query(self, q: PdqHash, radius: int):
        """All entries within Hamming distance <= radius, ascending by
        (distance, id), verified against the full hash."""
        if not (0 <= radius <= MAX_RADIUS):
            raise UnsupportedRadiusError(
                f"radius {radius} outside supported range 0..{MAX_RADIUS}"
            )
        qbits = q.bits
        candidates = set()
        for chunk in range(CHUNK_COUNT):
            key = (qbits >> (8 * (CHUNK_COUNT - 1 - chunk))) & 0xFF
            bucket = self._tables[chunk].get(key)
            if bucket:
                candidates.update(bucket)
        results = []
        for pos in candidates:
            d = (qbits ^ self._hashes[pos]).bit_count()
            if d <= radius:
                results.append(MatchResult(id=self._ids[pos], distance=d))
        results.sort(key=lambda r: (r.distance, r.id))
        return results

    def linear_scan(self, q: PdqHash, radius: int):
        """Brute-force reference path; same contract as query()."""
        if not (0 <= radius <= MAX_RADIUS):
            raise UnsupportedRadiusError(
                f"radius {radius} outside supported range 0..{MAX_RADIUS}"
            )
        qbits = q.bits
        results = [
            MatchResult(id=entry_id, distance=(qbits ^ value).bit_count())
            for entry_id, value in zip(self._ids, self._hashes)
            if (qbits ^ value).bit_count() <= radius
        ]
        results.sort(key=lambda r: (r.distance, r.id))
        return results

    def serialize(self) -> bytes:
        order = sorted(range(len(self._ids)), key=lambda pos: self._ids[pos])
        out = bytearray(MIH_MAGIC)
        out += len(order).to_bytes(8, "little")
        for pos in order:
            out += self._ids[pos].to_bytes(8, "little")
            out += self._hashes[pos].to_bytes(32, "big")
        return bytes(out)

    @classmethod
    def deserialize(cls, raw: bytes) -> "MihIndex":
        if raw[:4] != MIH_MAGIC:
            raise ConfigurationError("not a MIH1 blob")
        count = int.from_bytes(raw[4:12], "little")
        if len(raw) != 12 + count * 40:
            raise ConfigurationError("truncated or oversized MIH1 blob")
        ids = []
        hashes = []
        pos = 12
        for _ in range(count):
            ids.append(int.from_bytes(raw[pos : pos + 8], "little"))
            hashes.append(int.from_bytes(raw[pos + 8 : pos + 40], "big"))
            pos += 40
        if len(set(ids)) != count:
            raise DuplicateIdError("duplicate ids in serialized index")
        return cls(ids, hashes)


def mih_build(entries) -> MihIndex:
    return MihIndex.build(entries)


def mih_query(idx: MihIndex, q: PdqHash, radius: int):
    return idx.query(q, radius)
