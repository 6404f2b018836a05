"""FastAPI application wrapping the fcmatch operations."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import (
    BundleAuthError,
    ConfigurationError,
    CorruptPayloadError,
    DuplicateIdError,
    FcmatchError,
    MalformedImageError,
    ScriptError,
    SessionError,
    StaleBundleError,
    TamperError,
    UnsupportedRadiusError,
)
from . import ops
from .models import (
    AnalyzeRequest,
    AnalyzeResponse,
    BundleApplyRequest,
    BundleApplyResponse,
    BundleBuildRequest,
    BundleBuildResponse,
    BundleVerifyRequest,
    BundleVerifyResponse,
    HashRequest,
    HashResponse,
    HealthResponse,
    IndexBuildRequest,
    IndexBuildResponse,
    IndexQueryRequest,
    IndexQueryResponse,
    SimulateRequest,
    SimulateResponse,
)

# (status code, machine-readable code) per domain exception; order matters,
# most specific first
ERROR_MAP = (
    (StaleBundleError, 409, "stale-bundle"),
    (BundleAuthError, 400, "bundle-auth"),
    (UnsupportedRadiusError, 400, "unsupported-radius"),
    (DuplicateIdError, 400, "duplicate-id"),
    (MalformedImageError, 400, "malformed-image"),
    (ScriptError, 400, "script"),
    (SessionError, 400, "session"),
    (TamperError, 400, "tamper"),
    (CorruptPayloadError, 400, "corrupt-payload"),
    (ConfigurationError, 400, "configuration"),
    (FcmatchError, 400, "error"),
)

CODE_TO_ERROR = {code: exc_type for exc_type, _, code in ERROR_MAP}


def error_payload(exc: FcmatchError) -> tuple[int, dict]:
    for exc_type, status, code in ERROR_MAP:
        if isinstance(exc, exc_type):
            return status, {"code": code, "message": str(exc)}
    return 400, {"code": "error", "message": str(exc)}


def create_app() -> FastAPI:
    app = FastAPI(title="fcmatch", version=__version__)

    @app.exception_handler(FcmatchError)
    async def handle_domain_error(request: Request, exc: FcmatchError):
        status, detail = error_payload(exc)
        return JSONResponse(status_code=status, content={"detail": detail})

    @app.get("/healthz", response_model=HealthResponse)
    def healthz():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/v1/hash", response_model=HashResponse)
    def hash_images(req: HashRequest):
        return ops.hash_images(req)

    @app.post("/v1/index/build", response_model=IndexBuildResponse)
    def index_build(req: IndexBuildRequest):
        return ops.index_build(req)

    @app.post("/v1/index/query", response_model=IndexQueryResponse)
    def index_query(req: IndexQueryRequest):
        return ops.index_query(req)

    @app.post("/v1/bundle/build", response_model=BundleBuildResponse)
    def bundle_build(req: BundleBuildRequest):
        return ops.bundle_build(req)

    @app.post("/v1/bundle/verify", response_model=BundleVerifyResponse)
    def bundle_verify(req: BundleVerifyRequest):
        return ops.bundle_verify(req)

    @app.post("/v1/bundle/apply", response_model=BundleApplyResponse)
    def bundle_apply(req: BundleApplyRequest):
        return ops.bundle_apply(req)

    @app.post("/v1/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest):
        return ops.simulate(req)

    @app.post("/v1/analyze", response_model=AnalyzeResponse)
    def analyze(req: AnalyzeRequest):
        return ops.analyze(req)

    return app


app = create_app()
