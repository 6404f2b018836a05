"""Command-line client for the fcmatch service.

All domain work happens behind the service operation layer; the CLI only
parses arguments, moves file bytes in and out of typed requests, and
renders responses. By default operations run in-process; `--server URL`
sends the same requests to a remote fcmatch service instead.

Exit codes: 0 success, 1 verification/consistency failure, 2 partial I/O
failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import base64
import csv
import io
import json
import os
import sys
import time

import httpx

from . import __version__
from .errors import FcmatchError
from .pipeline import DEFAULT_BUNDLE_KEY, parse_script
from .raster import decode_image
from .service import ops
from .service.app import error_payload
from .store import canonical_json
from .service.models import (
    AnalyzeRequest,
    AnalyzeResponse,
    BundleApplyRequest,
    BundleApplyResponse,
    BundleBuildRequest,
    BundleBuildResponse,
    BundleModel,
    BundleVerifyRequest,
    BundleVerifyResponse,
    DeviceStateModel,
    HashRequest,
    HashResponse,
    ImagePayload,
    IndexBuildRequest,
    IndexBuildResponse,
    IndexEntry,
    IndexQueryRequest,
    IndexQueryResponse,
    SimulateRequest,
    SimulateResponse,
)
from .timeutil import parse_timestamp

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_PARTIAL = 2
EXIT_USAGE = 64

# exit code per machine-readable error code of the service layer
_EXIT_BY_CODE = {
    "stale-bundle": EXIT_FAILED,
    "bundle-auth": EXIT_FAILED,
    "tamper": EXIT_FAILED,
    "corrupt-payload": EXIT_FAILED,
    "malformed-image": EXIT_PARTIAL,
    "unsupported-radius": EXIT_USAGE,
    "duplicate-id": EXIT_USAGE,
    "configuration": EXIT_USAGE,
    "script": EXIT_USAGE,
    "session": EXIT_USAGE,
    "error": EXIT_FAILED,
}


class RemoteServiceError(FcmatchError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class ServiceClient:
    """In-process by default; with a base URL, a plain HTTP client."""

    def __init__(self, server: str = None):
        self.server = server.rstrip("/") if server else None

    def call(self, path: str, request, response_cls, local_fn, **local_kwargs):
        if self.server is None:
            return local_fn(request, **local_kwargs)
        resp = httpx.post(
            f"{self.server}{path}",
            json=request.model_dump(),
            timeout=300.0,
        )
        if resp.status_code >= 400:
            try:
                detail = resp.json()["detail"]
            except Exception:
                detail = {"code": "error", "message": resp.text}
            if isinstance(detail, dict) and "code" in detail:
                raise RemoteServiceError(detail["code"], detail.get("message", ""))
            raise RemoteServiceError("configuration", str(detail))
        return response_cls.model_validate(resp.json())


def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _write_atomic(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _relative_loader(base_dir: str):
    def load(path: str) -> bytes:
        full = path if os.path.isabs(path) else os.path.join(base_dir, path)
        return _read_bytes(full)

    return load


# -- subcommands --------------------------------------------------------------------


def cmd_hash(client: ServiceClient, args) -> int:
    payloads = []
    unreadable = {}
    for path in args.images:
        try:
            payloads.append(ImagePayload(name=path, data_b64=_b64(_read_bytes(path))))
        except OSError as exc:
            unreadable[path] = str(exc)
    resp = client.call(
        "/v1/hash",
        HashRequest(images=payloads),
        HashResponse,
        ops.hash_images,
    )
    results = list(resp.results)
    failures = list(resp.errors)
    status = EXIT_OK
    for path in args.images:
        if path in unreadable:
            print(f"fcmatch: hash: {path}: {unreadable[path]}", file=sys.stderr)
            status = EXIT_PARTIAL
        elif results and results[0].name == path:
            r = results.pop(0)
            print(f"{r.hash} {r.quality} {path}")
        elif failures and failures[0].name == path:
            e = failures.pop(0)
            print(f"fcmatch: hash: {path}: {e.error}", file=sys.stderr)
            status = EXIT_PARTIAL
    return status


def _parse_hash_list(text: str, source: str):
    entries = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise FcmatchError(
                f"{source}:{line_no}: expected '<id> <hash-hex>', got {line!r}"
            )
        entries.append(IndexEntry(id=int(parts[0]), hash=parts[1]))
    return entries


def cmd_index_build(client: ServiceClient, args) -> int:
    entries = []
    for path in args.hashlists:
        entries.extend(_parse_hash_list(_read_text(path), path))
    resp = client.call(
        "/v1/index/build",
        IndexBuildRequest(entries=entries),
        IndexBuildResponse,
        ops.index_build,
    )
    _write_atomic(args.out, base64.b64decode(resp.index_b64))
    print(f"indexed {resp.entry_count} hashes -> {args.out}")
    return EXIT_OK


def cmd_index_query(client: ServiceClient, args) -> int:
    resp = client.call(
        "/v1/index/query",
        IndexQueryRequest(
            index_b64=_b64(_read_bytes(args.index)),
            queries=args.hashes,
            radius=args.radius,
            linear=args.linear,
        ),
        IndexQueryResponse,
        ops.index_query,
    )
    for matches in resp.matches:
        for m in matches:
            print(f"{m.id} {m.distance}")
    return EXIT_OK


def _csv_image_paths(csv_text: str):
    reader = csv.DictReader(io.StringIO(csv_text))
    if not reader.fieldnames or "image_path" not in reader.fieldnames:
        return []
    return [row["image_path"] for row in reader if row.get("image_path")]


def cmd_bundle_build(client: ServiceClient, args) -> int:
    csv_text = _read_text(args.from_csv)
    base_dir = os.path.dirname(os.path.abspath(args.from_csv))
    created_at = (
        parse_timestamp(args.created_at)
        if args.created_at is not None
        else int(time.time())
    )
    request = BundleBuildRequest(
        csv_text=csv_text,
        version=args.version,
        created_at=created_at,
        key_hex=args.key,
        include_true=args.include_true,
        allow_empty=args.allow_empty,
    )
    local_kwargs = {}
    if client.server is None:
        loader = _relative_loader(base_dir)
        local_kwargs["image_loader"] = lambda path: decode_image(loader(path))
    else:
        resources = {}
        for path in _csv_image_paths(csv_text):
            try:
                resources[path] = _b64(_relative_loader(base_dir)(path))
            except OSError:
                continue  # row becomes a server-side ingestion error
        request.resources = resources
    resp = client.call(
        "/v1/bundle/build",
        request,
        BundleBuildResponse,
        ops.bundle_build,
        **local_kwargs,
    )
    _write_atomic(args.out, canonical_json(resp.bundle.model_dump()).encode("utf-8"))
    for err in resp.row_errors:
        print(f"fcmatch: bundle build: row {err.line}: {err.message}", file=sys.stderr)
    print(
        f"bundle v{resp.bundle.version} with {len(resp.bundle.records)} records -> {args.out}"
    )
    return EXIT_PARTIAL if resp.row_errors else EXIT_OK


def _bundle_model_from_file(path: str) -> BundleModel:
    return BundleModel.model_validate(json.loads(_read_text(path)))


def cmd_bundle_verify(client: ServiceClient, args) -> int:
    resp = client.call(
        "/v1/bundle/verify",
        BundleVerifyRequest(bundle=_bundle_model_from_file(args.bundle), key_hex=args.key),
        BundleVerifyResponse,
        ops.bundle_verify,
    )
    if resp.ok:
        print("OK")
        return EXIT_OK
    print(f"FAIL: {resp.reason}")
    return EXIT_FAILED


def cmd_bundle_apply(client: ServiceClient, args) -> int:
    device_model = None
    if os.path.exists(args.device):
        doc = json.loads(_read_text(args.device))
        device_model = DeviceStateModel.model_validate(doc)
    resp = client.call(
        "/v1/bundle/apply",
        BundleApplyRequest(
            device=device_model,
            bundle=_bundle_model_from_file(args.bundle),
            key_hex=args.key,
        ),
        BundleApplyResponse,
        ops.bundle_apply,
    )
    doc = {
        "version": resp.device.version,
        "records": [r.model_dump() for r in resp.device.records],
    }
    _write_atomic(args.device, canonical_json(doc).encode("utf-8"))
    print(
        f"applied version {resp.device.version} "
        f"({len(resp.device.records)} records) -> {args.device}"
    )
    return EXIT_OK


def cmd_simulate(client: ServiceClient, args) -> int:
    script_text = _read_text(args.script)
    base_dir = os.path.dirname(os.path.abspath(args.script))
    request = SimulateRequest(
        script_text=script_text,
        seed=args.seed,
        policy=args.policy,
        radius=args.radius,
        key_hex=args.key,
        telemetry=not args.no_telemetry,
    )
    local_kwargs = {}
    if client.server is None:
        local_kwargs["loader"] = _relative_loader(base_dir)
    else:
        loader = _relative_loader(base_dir)
        resources = {}
        for event in parse_script(script_text):
            for path in (event.image_path, event.bundle_path):
                if path and path not in resources:
                    resources[path] = _b64(loader(path))
        request.resources = resources
    resp = client.call(
        "/v1/simulate", request, SimulateResponse, ops.simulate, **local_kwargs
    )
    rendered = (json.dumps(resp.report, sort_keys=True, indent=2) + "\n").encode("utf-8")
    if args.out:
        _write_atomic(args.out, rendered)
        print(
            f"simulated {len(resp.report['decisions'])} decisions, "
            f"prevented {resp.report['prevented_total']} -> {args.out}"
        )
    else:
        sys.stdout.write(rendered.decode("utf-8"))
    return EXIT_OK


def cmd_analyze(client: ServiceClient, args) -> int:
    resp = client.call(
        "/v1/analyze",
        AnalyzeRequest(
            shares_csv=_read_text(args.shares),
            checks_csv=_read_text(args.checks),
            exclude_over=args.exclude_over,
        ),
        AnalyzeResponse,
        ops.analyze,
    )
    os.makedirs(args.out, exist_ok=True)
    report_bytes = (json.dumps(resp.report, sort_keys=True, indent=2) + "\n").encode()
    _write_atomic(os.path.join(args.out, "report.json"), report_bytes)
    for name, points in (("cdf_before.tsv", resp.cdf_before), ("cdf_after.tsv", resp.cdf_after)):
        body = "".join(f"{p.x}\t{p.y:.10g}\n" for p in points)
        _write_atomic(os.path.join(args.out, name), body.encode("utf-8"))
    for err in resp.errors:
        print(f"fcmatch: analyze: event {err.index}: {err.message}", file=sys.stderr)
    print(
        f"analyzed {resp.report['images_found']} images, "
        f"pct_after={resp.report['pct_after']} -> {args.out}"
    )
    return EXIT_PARTIAL if resp.errors else EXIT_OK


def cmd_serve(client: ServiceClient, args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_key(p: argparse.ArgumentParser):
    p.add_argument(
        "--key",
        default=DEFAULT_BUNDLE_KEY.hex(),
        help="bundle MAC key as hex (default: built-in development key)",
    )


def build_parser() -> Parser:
    parser = Parser(prog="fcmatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fcmatch {__version__}")
    parser.add_argument(
        "--server",
        default=None,
        help="base URL of a remote fcmatch service (default: run in-process)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("hash", help="print '<hash-hex> <quality> <path>' per image")
    p.add_argument("images", nargs="+", metavar="IMAGE")
    p.set_defaults(func=cmd_hash)

    p_index = sub.add_parser("index", help="build or query a Hamming index")
    index_sub = p_index.add_subparsers(dest="index_command", required=True)

    p = index_sub.add_parser("build", help="serialize an index from hash lists")
    p.add_argument("hashlists", nargs="+", metavar="HASHLIST",
                   help="text files of '<id> <hash-hex>' lines")
    p.add_argument("--out", required=True, help="output index file")
    p.set_defaults(func=cmd_index_build)

    p = index_sub.add_parser("query", help="print '<id> <distance>' matches")
    p.add_argument("hashes", nargs="+", metavar="HASH", help="query hashes (hex)")
    p.add_argument("--index", required=True, help="index file from 'index build'")
    p.add_argument("--radius", type=int, default=31)
    p.add_argument("--linear", action="store_true",
                   help="use the brute-force scan instead of the index")
    p.set_defaults(func=cmd_index_query)

    p_bundle = sub.add_parser("bundle", help="build, verify, or apply update bundles")
    bundle_sub = p_bundle.add_subparsers(dest="bundle_command", required=True)

    p = bundle_sub.add_parser("build", help="ingest a fact-check CSV into a bundle")
    p.add_argument("--from-csv", required=True, dest="from_csv",
                   help="CSV with id,image_path,verdict,check_date,agency,url")
    p.add_argument("--version", type=int, required=True)
    p.add_argument("--created-at", dest="created_at", default=None,
                   help="bundle timestamp (ISO-8601 or epoch; default: now)")
    p.add_argument("--include-true", action="store_true", dest="include_true",
                   help="also ship verdict-true records")
    p.add_argument("--allow-empty", action="store_true", dest="allow_empty")
    p.add_argument("--out", required=True)
    _add_key(p)
    p.set_defaults(func=cmd_bundle_build)

    p = bundle_sub.add_parser("verify", help="check a bundle's checksum and MAC")
    p.add_argument("bundle", metavar="BUNDLE")
    _add_key(p)
    p.set_defaults(func=cmd_bundle_verify)

    p = bundle_sub.add_parser("apply", help="apply a bundle onto a device file")
    p.add_argument("bundle", metavar="BUNDLE")
    p.add_argument("--device", required=True,
                   help="device state JSON (created if missing)")
    _add_key(p)
    p.set_defaults(func=cmd_bundle_apply)

    p = sub.add_parser("simulate", help="run a scripted E2EE sharing scenario")
    p.add_argument("--script", required=True, help="JSON-lines scenario script")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", choices=["allow", "warn", "block"], default="warn")
    p.add_argument("--radius", type=int, default=31)
    p.add_argument("--no-telemetry", action="store_true", dest="no_telemetry")
    p.add_argument("--out", default=None, help="report file (default: stdout)")
    _add_key(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="before/after-debunk share analytics")
    p.add_argument("--shares", required=True, help="CSV: image_id,group_id,timestamp")
    p.add_argument("--checks", required=True,
                   help="CSV: image_id,check_date,agency,url")
    p.add_argument("--exclude-over", dest="exclude_over", type=int, default=None,
                   help="drop images whose total shares exceed N")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="run the fcmatch HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "radius", None) is not None and not (0 <= args.radius <= 31):
        print(f"fcmatch: radius {args.radius} outside 0..31", file=sys.stderr)
        return EXIT_USAGE
    client = ServiceClient(args.server)
    try:
        return args.func(client, args)
    except RemoteServiceError as exc:
        print(f"fcmatch: {exc}", file=sys.stderr)
        return _EXIT_BY_CODE.get(exc.code, EXIT_FAILED)
    except FcmatchError as exc:
        code = error_payload(exc)[1]["code"]
        print(f"fcmatch: {exc}", file=sys.stderr)
        return _EXIT_BY_CODE.get(code, EXIT_FAILED)
    except OSError as exc:
        print(f"fcmatch: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except ValueError as exc:
        print(f"fcmatch: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
