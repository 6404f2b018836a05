"""Request/response schemas for the fcmatch service API."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

HEX_HASH = r"^[0-9a-fA-F]{64}$"


class ImagePayload(BaseModel):
    name: str
    data_b64: str


class HashRequest(BaseModel):
    images: list[ImagePayload]


class HashResult(BaseModel):
    name: str
    hash: str = Field(pattern=HEX_HASH)
    quality: int = Field(ge=0, le=100)


class HashFailure(BaseModel):
    name: str
    error: str


class HashResponse(BaseModel):
    results: list[HashResult]
    errors: list[HashFailure]


class IndexEntry(BaseModel):
    id: int = Field(ge=0)
    hash: str = Field(pattern=HEX_HASH)


class IndexBuildRequest(BaseModel):
    entries: list[IndexEntry]


class IndexBuildResponse(BaseModel):
    index_b64: str
    entry_count: int


class IndexQueryRequest(BaseModel):
    index_b64: str
    queries: list[str]
    radius: int = 31
    linear: bool = False


class Match(BaseModel):
    id: int
    distance: int


class IndexQueryResponse(BaseModel):
    matches: list[list[Match]]


class RecordModel(BaseModel):
    id: int = Field(ge=0)
    hash_hex: str = Field(pattern=HEX_HASH)
    verdict: str
    check_date: int
    agency: str = ""
    url: str = ""


class BundleModel(BaseModel):
    version: int
    created_at: int
    records: list[RecordModel]
    checksum_hex: str
    mac_hex: str


class RowErrorModel(BaseModel):
    line: int
    message: str


class BundleBuildRequest(BaseModel):
    """Build a signed bundle from a fact-check CSV or pre-hashed records.

    Exactly one of csv_text / records must be given. Image paths named in
    the CSV resolve against `resources` (path -> base64 file content).
    """

    csv_text: Optional[str] = None
    records: Optional[list[RecordModel]] = None
    version: int
    created_at: int
    key_hex: str
    include_true: bool = False
    allow_empty: bool = False
    resources: dict[str, str] = Field(default_factory=dict)


class BundleBuildResponse(BaseModel):
    bundle: BundleModel
    row_errors: list[RowErrorModel]


class BundleVerifyRequest(BaseModel):
    bundle: BundleModel
    key_hex: str


class BundleVerifyResponse(BaseModel):
    ok: bool
    reason: Optional[str] = None


class DeviceStateModel(BaseModel):
    version: int
    records: list[RecordModel]


class BundleApplyRequest(BaseModel):
    device: Optional[DeviceStateModel] = None  # None applies onto an empty device
    bundle: BundleModel
    key_hex: str


class BundleApplyResponse(BaseModel):
    device: DeviceStateModel


class SimulateRequest(BaseModel):
    script_text: str
    seed: int = 0
    policy: str = "warn"
    radius: int = 31
    key_hex: Optional[str] = None  # bundle MAC key; dev default when omitted
    telemetry: bool = True
    resources: dict[str, str] = Field(default_factory=dict)


class SimulateResponse(BaseModel):
    report: dict


class AnalyzeRequest(BaseModel):
    shares_csv: str
    checks_csv: str
    exclude_over: Optional[int] = None


class SummaryModel(BaseModel):
    image_id: int
    shares_before: int
    shares_after: int
    first_check_date: int


class EventErrorModel(BaseModel):
    index: int
    message: str


class CdfPoint(BaseModel):
    x: int
    y: float


class AnalyzeResponse(BaseModel):
    report: dict
    summaries: list[SummaryModel]
    cdf_before: list[CdfPoint]
    cdf_after: list[CdfPoint]
    errors: list[EventErrorModel]


class HealthResponse(BaseModel):
    status: str
    version: str
