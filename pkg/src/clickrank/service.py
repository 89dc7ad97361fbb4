"""Minimal read-only query service for programmatic clients.

GET /search?q=<urlencoded>&k=<int> answers with the re-ranked results and
the request's wall-clock cost; GET /health reports liveness. The bundle is
immutable and shared across handler threads; no request mutates it.
"""

from __future__ import annotations

import json
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .pipeline import PipelineBundle


class _Handler(BaseHTTPRequestHandler):
    bundle: PipelineBundle  # set on the server class created by make_server

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        pass

    def _reply(self, status: int, payload: dict) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:  # noqa: N802 - stdlib casing
        url = urlparse(self.path)
        if url.path == "/health":
            self._reply(200, {"status": "ok"})
            return
        if url.path != "/search":
            self._reply(404, {"error": "unknown path"})
            return
        params = parse_qs(url.query)
        if "q" not in params:
            self._reply(400, {"error": "missing required parameter q"})
            return
        query = params["q"][0]
        raw_k = params.get("k", ["10"])[0]
        try:
            k = int(raw_k)
        except ValueError:
            self._reply(400, {"error": f"k must be an integer, got {raw_k!r}"})
            return
        bundle = self.server.bundle  # type: ignore[attr-defined]
        if k < 1 or k > bundle.n_candidates:
            self._reply(400, {"error": f"k must be in [1, {bundle.n_candidates}]"})
            return
        start = time.perf_counter()
        results = bundle.run(query, k)
        took = time.perf_counter() - start
        self._reply(
            200,
            {
                "query": query,
                "took_seconds": took,
                "results": [{"doc_id": r.doc_id, "score": r.score} for r in results],
            },
        )


def make_server(bundle: PipelineBundle, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Build (but do not start) the threaded HTTP server."""
    server = ThreadingHTTPServer((host, port), _Handler)
    server.bundle = bundle  # type: ignore[attr-defined]
    return server


def serve(bundle: PipelineBundle, host: str = "127.0.0.1", port: int = 8080) -> None:
    """Serve until interrupted."""
    server = make_server(bundle, host, port)
    print(f"serving on http://{server.server_address[0]}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
