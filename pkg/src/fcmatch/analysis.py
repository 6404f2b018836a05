"""Before/after-debunk share analytics over matched share logs.

Joins share events with fact-check dates, counts each image's shares
before and after its first check, aggregates the after-share percentage,
supports outlier exclusion by total-share threshold, and emits empirical
CDF series for plotting. A share landing exactly on the check date counts
as "after"; date-only check dates mean midnight UTC.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .errors import ConfigurationError
from .timeutil import parse_timestamp

SHARE_LOG_COLUMNS = ("image_id", "group_id", "timestamp")
CHECKS_COLUMNS = ("image_id", "check_date", "agency", "url")


@dataclass(frozen=True)
class ShareEvent:
    image_id: int
    group_id: str
    timestamp: int  # UTC epoch seconds


@dataclass(frozen=True)
class ImageShareSummary:
    image_id: int
    shares_before: int
    shares_after: int
    first_check_date: int

    @property
    def total(self) -> int:
        return self.shares_before + self.shares_after


@dataclass(frozen=True)
class AggregateReport:
    images_found: int
    total_shares: int
    pct_after: float  # one decimal, half-up
    max_shares_after: int

    def to_dict(self) -> dict:
        return {
            "images_found": self.images_found,
            "total_shares": self.total_shares,
            "pct_after": self.pct_after,
            "max_shares_after": self.max_shares_after,
        }


@dataclass(frozen=True)
class EventError:
    index: int
    message: str


def parse_share_log(csv_text: str):
    """Parse image_id,group_id,timestamp rows; bad rows become errors."""
    reader = csv.DictReader(io.StringIO(csv_text))
    header = tuple(reader.fieldnames or ())
    if set(SHARE_LOG_COLUMNS) - set(header):
        raise ConfigurationError(
            f"share log header must contain {','.join(SHARE_LOG_COLUMNS)}"
        )
    events = []
    errors = []
    for line_no, row in enumerate(reader, start=2):
        try:
            events.append(
                ShareEvent(
                    image_id=int(row["image_id"]),
                    group_id=row["group_id"],
                    timestamp=parse_timestamp(row["timestamp"]),
                )
            )
        except (TypeError, ValueError) as exc:
            errors.append(EventError(index=line_no, message=str(exc)))
    return events, errors


def parse_checks(csv_text: str) -> dict:
    """Parse image_id,check_date,agency,url rows into {image_id: check_date}.

    Multiple rows for one image resolve to the earliest date (the first
    fact-check).
    """
    reader = csv.DictReader(io.StringIO(csv_text))
    header = tuple(reader.fieldnames or ())
    if set(CHECKS_COLUMNS) - set(header):
        raise ConfigurationError(
            f"check-date table header must contain {','.join(CHECKS_COLUMNS)}"
        )
    checks = {}
    for row in reader:
        image_id = int(row["image_id"])
        check_date = parse_timestamp(row["check_date"])
        if image_id not in checks or check_date < checks[image_id]:
            checks[image_id] = check_date
    return checks


def summarize(events, checks: dict):
    """Per-image before/after counts; an event at the check date is "after".

    `checks` maps image id to its earliest check date in epoch seconds.
    Events whose image id is missing from `checks` are skipped and reported
    in the returned error list. Images with zero events are omitted.
    """
    before = {}
    after = {}
    errors = []
    for idx, event in enumerate(events):
        check_date = checks.get(event.image_id)
        if check_date is None:
            errors.append(
                EventError(idx, f"image id {event.image_id} has no check date")
            )
            continue
        bucket = after if event.timestamp >= check_date else before
        bucket[event.image_id] = bucket.get(event.image_id, 0) + 1
    summaries = [
        ImageShareSummary(
            image_id=image_id,
            shares_before=before.get(image_id, 0),
            shares_after=after.get(image_id, 0),
            first_check_date=checks[image_id],
        )
        for image_id in sorted(set(before) | set(after))
    ]
    return summaries, errors


def _pct_one_decimal(numerator: int, denominator: int) -> float:
    if denominator == 0:
        return 0.0
    pct = Decimal(100 * numerator) / Decimal(denominator)
    return float(pct.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def aggregate(summaries) -> AggregateReport:
    total = sum(s.total for s in summaries)
    after_sum = sum(s.shares_after for s in summaries)
    return AggregateReport(
        images_found=len(summaries),
        total_shares=total,
        pct_after=_pct_one_decimal(after_sum, total),
        max_shares_after=max((s.shares_after for s in summaries), default=0),
    )


def exclude_outliers(summaries, min_total_shares: int):
    """Drop images whose total shares exceed the threshold, re-aggregate."""
    if min_total_shares < 1:
        raise ConfigurationError("outlier threshold must be >= 1")
    kept = [s for s in summaries if s.total <= min_total_shares]
    return kept, aggregate(kept)


@dataclass(frozen=True)
class CdfSeries:
    """ECDF points (x, y): y is the fraction of images with count <= x."""

    before: tuple
    after: tuple


def _ecdf(counts) -> tuple:
    n = len(counts)
    if n == 0:
        return ()
    points = []
    seen = 0
    ordered = sorted(counts)
    for i, x in enumerate(ordered):
        seen += 1
        if i + 1 == n or ordered[i + 1] != x:
            points.append((x, seen / n))
    return tuple(points)


def cdf_series(summaries) -> CdfSeries:
    return CdfSeries(
        before=_ecdf([s.shares_before for s in summaries]),
        after=_ecdf([s.shares_after for s in summaries]),
    )


def render_cdf_tsv(points) -> str:
    """Two plot-ready columns: share count, cumulative fraction."""
    return "".join(f"{x}\t{y:.10g}\n" for x, y in points)


@dataclass(frozen=True)
class ConsistencyVerdict:
    consistent: bool
    prevented_total: int
    shares_after_total: int
    mismatched_image_ids: tuple

    def to_dict(self) -> dict:
        return {
            "consistent": self.consistent,
            "prevented_total": self.prevented_total,
            "shares_after_total": self.shares_after_total,
            "mismatched_image_ids": list(self.mismatched_image_ids),
        }


def cross_check_simulation(report, summaries) -> ConsistencyVerdict:
    """Compare a simulation's blocked sends against analytic after-counts.

    `report` is a SimReport or its dict form, produced from the same share
    events under a blocking policy with bundles applied at check dates.
    Consistent iff prevented_total equals the summed after-shares; on
    mismatch the differing image ids are named.
    """
    doc = report.to_dict() if hasattr(report, "to_dict") else report
    prevented_by_image = {}
    for decision in doc["decisions"]:
        if decision["stage"] == "send" and decision["outcome"] == "blocked":
            rid = decision["record_id"]
            prevented_by_image[rid] = prevented_by_image.get(rid, 0) + 1
    after_by_image = {s.image_id: s.shares_after for s in summaries if s.shares_after}
    if (
        prevented_by_image
        and after_by_image
        and not set(prevented_by_image) & set(after_by_image)
    ):
        raise ConfigurationError(
            "simulation record ids and share-log image ids do not overlap"
        )
    mismatched = sorted(
        image_id
        for image_id in set(prevented_by_image) | set(after_by_image)
        if prevented_by_image.get(image_id, 0) != after_by_image.get(image_id, 0)
    )
    prevented_total = doc["prevented_total"]
    shares_after_total = sum(s.shares_after for s in summaries)
    return ConsistencyVerdict(
        consistent=prevented_total == shares_after_total,
        prevented_total=prevented_total,
        shares_after_total=shares_after_total,
        mismatched_image_ids=tuple(mismatched),
    )
