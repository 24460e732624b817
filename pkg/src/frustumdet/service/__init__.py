"""HTTP service wrapping the detection core."""

from .app import create_app

__all__ = ["create_app"]
