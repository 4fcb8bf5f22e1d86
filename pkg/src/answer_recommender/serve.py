"""Newline-delimited JSON recommendation service.

One request per line, ``{"query": "...", "k": 5}`` (``k`` optional), one
response per line, the same record ``recommend`` prints. A line that cannot be
served gets ``{"error": "..."}`` and the connection stays open.
"""

from __future__ import annotations

import json
import logging
import socketserver
from typing import Any

from .pipeline import BindError, Recommender
from .util import dumps_record

__all__ = [
    "RecommendationServer",
    "handle_request",
    "serve",
]

logger = logging.getLogger(__name__)


def handle_request(recommender: Recommender, line: str) -> dict[str, Any]:
    """Answer one request line; every failure becomes an error record."""
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"error": f"malformed JSON: {exc.msg}"}
    if not isinstance(request, dict) or not isinstance(request.get("query"), str):
        return {"error": 'request must be an object with a string "query"'}
    k = request.get("k")
    if k is not None and (isinstance(k, bool) or not isinstance(k, int)):
        return {"error": '"k" must be an integer'}
    try:
        return recommender.recommend(request["query"], k).to_response()
    except ValueError as exc:
        return {"error": str(exc)}
    except Exception as exc:
        logger.exception("Failed to answer %r", line)
        return {"error": f"internal error: {type(exc).__name__}: {exc}"}


class _LineHandler(socketserver.StreamRequestHandler):
    server: RecommendationServer

    def handle(self) -> None:
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            response = handle_request(self.server.recommender, line)
            self.wfile.write((dumps_record(response) + "\n").encode("utf-8"))
            self.wfile.flush()


class RecommendationServer(socketserver.ThreadingTCPServer):
    """Threaded TCP server, one thread per connection, sharing one immutable :class:`Recommender`."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], recommender: Recommender):
        self.recommender = recommender
        try:
            super().__init__(address, _LineHandler)
        except OSError as exc:
            raise BindError(f"Cannot bind {address[0]}:{address[1]}: {exc.strerror or exc}") from exc


def serve(recommender: Recommender, host: str = "127.0.0.1", port: int = 8765) -> None:
    """Serve until interrupted."""
    with RecommendationServer((host, port), recommender) as server:
        bound_host, bound_port = server.server_address[:2]
        logger.info("Serving recommendations on %s:%d", bound_host, bound_port)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            logger.info("Shutting down")
