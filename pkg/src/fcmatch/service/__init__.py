"""Service layer: pydantic schemas, typed operations, FastAPI wiring."""

from .app import create_app

__all__ = ["create_app"]
