"""Fact-check fingerprint records, signed update bundles, and device sets.

A `FingerprintRecord` ties a perceptual hash to its fact-check metadata.
Records ship to devices in an `UpdateBundle`: a versioned JSON document
whose payload is canonically serialized, checksummed with SHA-256, and
authenticated with an HMAC over that checksum. A `DeviceFingerprintSet`
is the frozen on-device state; applying a bundle yields a new set and
rejects anything stale or unauthenticated, leaving the old state intact.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import hmac
import io
import json
import os
import time
from dataclasses import dataclass, field

from .errors import (
    BundleAuthError,
    ConfigurationError,
    DuplicateIdError,
    FcmatchError,
    StaleBundleError,
)
from .index import MAX_U64, MihIndex
from .pdq import PdqHash
from .pdq import hash as pdq_hash
from .raster import load_image
from .timeutil import parse_timestamp

MIN_CHECK_DATE = 946684800  # 2000-01-01T00:00:00Z
CHECK_DATE_SLACK = 86400  # tolerate clocks up to one day ahead

INGEST_COLUMNS = ("id", "image_path", "verdict", "check_date", "agency", "url")

_VERDICT_ALIASES = {
    "misinformation": "misinformation",
    "fake": "misinformation",
    "false": "misinformation",
    "true": "true",
    "unverified": "unverified",
    "unknown": "unverified",
}


class Verdict(str, enum.Enum):
    MISINFORMATION = "misinformation"
    TRUE = "true"
    UNVERIFIED = "unverified"

    @classmethod
    def parse(cls, value: str) -> "Verdict":
        key = value.strip().lower()
        if key not in _VERDICT_ALIASES:
            raise ValueError(f"unknown verdict {value!r}")
        return cls(_VERDICT_ALIASES[key])


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, no insignificant whitespace, ASCII."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass(frozen=True)
class FingerprintRecord:
    id: int
    hash: PdqHash
    verdict: Verdict
    check_date: int  # UTC epoch seconds
    agency: str
    url: str

    def __post_init__(self):
        if not (0 <= self.id <= MAX_U64):
            raise ConfigurationError(f"record id {self.id} not a uint64")
        if self.verdict in (Verdict.MISINFORMATION, Verdict.TRUE) and not self.url:
            raise ConfigurationError(
                f"record {self.id}: verdict {self.verdict.value} requires a url"
            )
        now = int(time.time())
        if not (MIN_CHECK_DATE <= self.check_date <= now + CHECK_DATE_SLACK):
            raise ConfigurationError(
                f"record {self.id}: check_date {self.check_date} outside "
                f"[2000-01-01, now + 1 day]"
            )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "hash_hex": self.hash.to_hex(),
            "verdict": self.verdict.value,
            "check_date": self.check_date,
            "agency": self.agency,
            "url": self.url,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FingerprintRecord":
        return cls(
            id=int(d["id"]),
            hash=PdqHash.from_hex(d["hash_hex"]),
            verdict=Verdict(d["verdict"]),
            check_date=int(d["check_date"]),
            agency=str(d.get("agency", "")),
            url=str(d.get("url", "")),
        )


def eligible_for_bundle(records) -> list:
    """Records worth shipping to devices: debunked content only."""
    return [r for r in records if r.verdict is Verdict.MISINFORMATION]


# -- ingestion -------------------------------------------------------------------


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass
class IngestResult:
    records: list = field(default_factory=list)
    errors: list = field(default_factory=list)


def filesystem_image_loader(base_dir: str = "."):
    """Image loader resolving relative paths against base_dir."""

    def load(path: str):
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return load_image(path)

    return load


def ingest_factchecks(csv_text: str, base_dir: str = ".", loader=None) -> IngestResult:
    """Hash the images of a fact-check listing into fingerprint records.

    The CSV needs the header id,image_path,verdict,check_date,agency,url.
    `loader` maps an image_path cell to a RasterImage; the default reads
    local files, resolving relative paths against base_dir. Bad rows are
    collected as errors and ingestion continues; verdict-true rows are
    ingested but `eligible_for_bundle` excludes them from device bundles.
    """
    if loader is None:
        loader = filesystem_image_loader(base_dir)
    reader = csv.DictReader(io.StringIO(csv_text))
    header = tuple(reader.fieldnames or ())
    if set(INGEST_COLUMNS) - set(header):
        raise ConfigurationError(
            f"fact-check CSV header must contain {','.join(INGEST_COLUMNS)}"
        )
    result = IngestResult()
    for line_no, row in enumerate(reader, start=2):
        try:
            record_id = int(row["id"])
            verdict = Verdict.parse(row["verdict"])
            check_date = parse_timestamp(row["check_date"])
            img = loader(row["image_path"])
            record = FingerprintRecord(
                id=record_id,
                hash=pdq_hash(img),
                verdict=verdict,
                check_date=check_date,
                agency=row["agency"],
                url=row["url"],
            )
        except (ValueError, OSError, FcmatchError) as exc:
            result.errors.append(RowError(line=line_no, message=str(exc)))
            continue
        result.records.append(record)
    return result


# -- update bundles ----------------------------------------------------------------


@dataclass(frozen=True)
class UpdateBundle:
    version: int
    created_at: int
    records: tuple
    checksum: bytes
    mac: bytes

    def payload_dict(self) -> dict:
        return {
            "version": self.version,
            "created_at": self.created_at,
            "records": [r.to_dict() for r in self.records],
        }


def _payload_checksum(version: int, created_at: int, records) -> bytes:
    payload = {
        "version": version,
        "created_at": created_at,
        "records": [r.to_dict() for r in records],
    }
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).digest()


def _mac_over_checksum(key: bytes, checksum: bytes) -> bytes:
    return hmac.new(key, checksum, hashlib.sha256).digest()


def build_bundle(
    records, version: int, key: bytes, created_at: int, allow_empty: bool = False
) -> UpdateBundle:
    """Assemble a signed bundle; records are canonically sorted by id."""
    if version < 1:
        raise ConfigurationError(f"bundle version {version} must be >= 1")
    records = sorted(records, key=lambda r: r.id)
    if not records and not allow_empty:
        raise ConfigurationError("refusing to build an empty bundle")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DuplicateIdError("bundle holds two records with the same id")
    checksum = _payload_checksum(version, created_at, records)
    return UpdateBundle(
        version=version,
        created_at=created_at,
        records=tuple(records),
        checksum=checksum,
        mac=_mac_over_checksum(key, checksum),
    )


def verify_bundle(bundle: UpdateBundle, key: bytes) -> None:
    """Raise BundleAuthError unless checksum and MAC both hold."""
    recomputed = _payload_checksum(bundle.version, bundle.created_at, bundle.records)
    if recomputed != bundle.checksum:
        raise BundleAuthError("checksum mismatch")
    if not hmac.compare_digest(_mac_over_checksum(key, bundle.checksum), bundle.mac):
        raise BundleAuthError("MAC mismatch")


def bundle_to_json(bundle: UpdateBundle) -> str:
    doc = bundle.payload_dict()
    doc["checksum_hex"] = bundle.checksum.hex()
    doc["mac_hex"] = bundle.mac.hex()
    return canonical_json(doc)


def bundle_from_json(text: str) -> UpdateBundle:
    try:
        doc = json.loads(text)
        records = tuple(FingerprintRecord.from_dict(d) for d in doc["records"])
        return UpdateBundle(
            version=int(doc["version"]),
            created_at=int(doc["created_at"]),
            records=records,
            checksum=bytes.fromhex(doc["checksum_hex"]),
            mac=bytes.fromhex(doc["mac_hex"]),
        )
    except (KeyError, TypeError, ValueError, ConfigurationError) as exc:
        raise BundleAuthError(f"malformed bundle document: {exc}") from exc


# -- device state -------------------------------------------------------------------


class DeviceFingerprintSet:
    """Immutable on-device fingerprint set; apply_bundle returns a new one."""

    def __init__(self, version: int, records: dict):
        self.version = version
        self.records = dict(records)
        self.index = MihIndex.build(
            (record_id, record.hash) for record_id, record in self.records.items()
        )

    @classmethod
    def empty(cls) -> "DeviceFingerprintSet":
        return cls(version=0, records={})

    def __len__(self) -> int:
        return len(self.records)

    def apply_bundle(self, bundle: UpdateBundle, key: bytes) -> "DeviceFingerprintSet":
        verify_bundle(bundle, key)
        if bundle.version <= self.version:
            raise StaleBundleError(
                f"stale bundle: version {bundle.version} <= applied version {self.version}"
            )
        merged = dict(self.records)
        for record in bundle.records:
            merged[record.id] = record
        return DeviceFingerprintSet(version=bundle.version, records=merged)

    def lookup(self, h: PdqHash, radius: int):
        """Best misinformation match within radius: lowest distance, then
        lowest id. Returns (MatchResult, FingerprintRecord) or None."""
        for match in self.index.query(h, radius):
            record = self.records[match.id]
            if record.verdict is Verdict.MISINFORMATION:
                return match, record
        return None

    def to_json(self) -> str:
        return canonical_json(
            {
                "version": self.version,
                "records": [
                    self.records[record_id].to_dict()
                    for record_id in sorted(self.records)
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "DeviceFingerprintSet":
        try:
            doc = json.loads(text)
            records = {}
            for d in doc["records"]:
                record = FingerprintRecord.from_dict(d)
                records[record.id] = record
            return cls(version=int(doc["version"]), records=records)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed device state: {exc}") from exc
