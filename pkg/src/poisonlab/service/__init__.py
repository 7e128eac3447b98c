"""HTTP facade over the lab: every pipeline step as a JSON endpoint.

The service owns no state beyond the filesystem run directories the harness
already writes; each request maps onto one core-package call.  Use
:func:`create_app` to get a FastAPI application, or run it via the
``poisonlab serve`` CLI subcommand.
"""

from .app import create_app

__all__ = ["create_app"]
