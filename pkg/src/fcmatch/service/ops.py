"""Typed operations behind the service routes.

Each function maps a request model to a response model using the core
package and raises fcmatch domain exceptions on failure. The HTTP layer
and the CLI both call straight into these, so local and remote behavior
stay identical.

By default, file references inside requests (simulation scripts, ingestion
CSVs) resolve only against the request's own `resources` map, never the
server filesystem; in-process callers may inject a broader loader.
"""

from __future__ import annotations

import base64
import binascii

from .. import analysis as analysis_mod
from ..errors import ConfigurationError, FcmatchError
from ..index import MihIndex
from ..pdq import PdqHash
from ..pdq import hash as pdq_hash
from ..pipeline import FlagPolicy, SimConfig, parse_script, run_scenario
from ..pipeline import DEFAULT_BUNDLE_KEY
from ..raster import decode_image
from ..store import (
    DeviceFingerprintSet,
    FingerprintRecord,
    UpdateBundle,
    build_bundle,
    bundle_from_json,
    eligible_for_bundle,
    ingest_factchecks,
    verify_bundle,
)
from ..errors import BundleAuthError
from .models import (
    AnalyzeRequest,
    AnalyzeResponse,
    BundleApplyRequest,
    BundleApplyResponse,
    BundleBuildRequest,
    BundleBuildResponse,
    BundleModel,
    BundleVerifyRequest,
    BundleVerifyResponse,
    CdfPoint,
    DeviceStateModel,
    EventErrorModel,
    HashFailure,
    HashRequest,
    HashResponse,
    HashResult,
    IndexBuildRequest,
    IndexBuildResponse,
    IndexQueryRequest,
    IndexQueryResponse,
    Match,
    RecordModel,
    RowErrorModel,
    SimulateRequest,
    SimulateResponse,
    SummaryModel,
)


def _b64_bytes(data_b64: str, what: str) -> bytes:
    try:
        return base64.b64decode(data_b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ConfigurationError(f"invalid base64 for {what}: {exc}") from exc


def _key_bytes(key_hex) -> bytes:
    if key_hex is None:
        return DEFAULT_BUNDLE_KEY
    try:
        key = bytes.fromhex(key_hex)
    except ValueError as exc:
        raise ConfigurationError(f"key must be hex: {exc}") from exc
    if not key:
        raise ConfigurationError("key must not be empty")
    return key


def _resource_loader(resources: dict):
    def load(path: str) -> bytes:
        if path not in resources:
            raise ConfigurationError(f"no resource supplied for path {path!r}")
        return _b64_bytes(resources[path], path)

    return load


def _record_from_model(model: RecordModel) -> FingerprintRecord:
    return FingerprintRecord.from_dict(model.model_dump())


def _bundle_from_model(model: BundleModel) -> UpdateBundle:
    return bundle_from_json(model.model_dump_json())


def _bundle_to_model(bundle: UpdateBundle) -> BundleModel:
    doc = bundle.payload_dict()
    doc["checksum_hex"] = bundle.checksum.hex()
    doc["mac_hex"] = bundle.mac.hex()
    return BundleModel(**doc)


def hash_images(req: HashRequest) -> HashResponse:
    results = []
    errors = []
    for item in req.images:
        try:
            img = decode_image(_b64_bytes(item.data_b64, item.name))
            h = pdq_hash(img)
        except FcmatchError as exc:
            errors.append(HashFailure(name=item.name, error=str(exc)))
            continue
        results.append(
            HashResult(name=item.name, hash=h.to_hex(), quality=h.quality)
        )
    return HashResponse(results=results, errors=errors)


def index_build(req: IndexBuildRequest) -> IndexBuildResponse:
    idx = MihIndex.build(
        (entry.id, PdqHash.from_hex(entry.hash)) for entry in req.entries
    )
    return IndexBuildResponse(
        index_b64=base64.b64encode(idx.serialize()).decode("ascii"),
        entry_count=len(idx),
    )


def index_query(req: IndexQueryRequest) -> IndexQueryResponse:
    idx = MihIndex.deserialize(_b64_bytes(req.index_b64, "index"))
    all_matches = []
    for qhex in req.queries:
        q = PdqHash.from_hex(qhex)
        found = (
            idx.linear_scan(q, req.radius) if req.linear else idx.query(q, req.radius)
        )
        all_matches.append([Match(id=m.id, distance=m.distance) for m in found])
    return IndexQueryResponse(matches=all_matches)


def bundle_build(req: BundleBuildRequest, image_loader=None) -> BundleBuildResponse:
    if (req.csv_text is None) == (req.records is None):
        raise ConfigurationError("provide exactly one of csv_text or records")
    row_errors = []
    if req.csv_text is not None:
        loader = image_loader
        if loader is None:
            resource = _resource_loader(req.resources)

            def loader(path):
                return decode_image(resource(path))

        result = ingest_factchecks(req.csv_text, loader=loader)
        records = result.records
        row_errors = [
            RowErrorModel(line=e.line, message=e.message) for e in result.errors
        ]
    else:
        records = [_record_from_model(m) for m in req.records]
    if not req.include_true:
        records = eligible_for_bundle(records)
    bundle = build_bundle(
        records,
        version=req.version,
        key=_key_bytes(req.key_hex),
        created_at=req.created_at,
        allow_empty=req.allow_empty,
    )
    return BundleBuildResponse(bundle=_bundle_to_model(bundle), row_errors=row_errors)


def bundle_verify(req: BundleVerifyRequest) -> BundleVerifyResponse:
    try:
        verify_bundle(_bundle_from_model(req.bundle), _key_bytes(req.key_hex))
    except BundleAuthError as exc:
        return BundleVerifyResponse(ok=False, reason=str(exc))
    return BundleVerifyResponse(ok=True)


def _device_from_model(model) -> DeviceFingerprintSet:
    if model is None:
        return DeviceFingerprintSet.empty()
    records = {}
    for m in model.records:
        record = _record_from_model(m)
        records[record.id] = record
    return DeviceFingerprintSet(version=model.version, records=records)


def _device_to_model(device: DeviceFingerprintSet) -> DeviceStateModel:
    return DeviceStateModel(
        version=device.version,
        records=[
            RecordModel(**device.records[rid].to_dict())
            for rid in sorted(device.records)
        ],
    )


def bundle_apply(req: BundleApplyRequest) -> BundleApplyResponse:
    device = _device_from_model(req.device)
    updated = device.apply_bundle(_bundle_from_model(req.bundle), _key_bytes(req.key_hex))
    return BundleApplyResponse(device=_device_to_model(updated))


def simulate(req: SimulateRequest, loader=None) -> SimulateResponse:
    events = parse_script(req.script_text)
    try:
        policy = FlagPolicy(req.policy)
    except ValueError as exc:
        raise ConfigurationError(f"unknown policy {req.policy!r}") from exc
    cfg = SimConfig(
        policy=policy,
        radius=req.radius,
        bundle_key=_key_bytes(req.key_hex),
        telemetry=req.telemetry,
    )
    report = run_scenario(
        events,
        seed=req.seed,
        config=cfg,
        loader=loader if loader is not None else _resource_loader(req.resources),
    )
    return SimulateResponse(report=report.to_dict())


def analyze(req: AnalyzeRequest) -> AnalyzeResponse:
    events, event_errors = analysis_mod.parse_share_log(req.shares_csv)
    checks = analysis_mod.parse_checks(req.checks_csv)
    summaries, join_errors = analysis_mod.summarize(events, checks)
    if req.exclude_over is not None:
        summaries, report = analysis_mod.exclude_outliers(summaries, req.exclude_over)
    else:
        report = analysis_mod.aggregate(summaries)
    series = analysis_mod.cdf_series(summaries)
    return AnalyzeResponse(
        report=report.to_dict(),
        summaries=[
            SummaryModel(
                image_id=s.image_id,
                shares_before=s.shares_before,
                shares_after=s.shares_after,
                first_check_date=s.first_check_date,
            )
            for s in summaries
        ],
        cdf_before=[CdfPoint(x=x, y=y) for x, y in series.before],
        cdf_after=[CdfPoint(x=x, y=y) for x, y in series.after],
        errors=[
            EventErrorModel(index=e.index, message=e.message)
            for e in (*event_errors, *join_errors)
        ],
    )
