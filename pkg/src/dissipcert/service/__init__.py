"""HTTP service wrapping the certification toolbox.

Run with ``uvicorn dissipcert.service:app``; the CLI talks to this app
in-process by default or to a remote instance via ``--server``.
"""

from .app import app, create_app

__all__ = ["app", "create_app"]
