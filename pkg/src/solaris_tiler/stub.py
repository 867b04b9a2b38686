"""A local WMS 1.3.0 stand-in for tests and offline demos.

Serves GetCapabilities for a configurable set of layers and answers GetMap
with a synthetic PNG of the requested size. Responses can be scripted to
fail (HTTP status codes, service exceptions) to exercise retry handling.
"""

from __future__ import annotations

import hashlib
import io
import threading
import urllib.parse
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .wms import LayerInfo, WmsEndpoint, render_capabilities

SERVICE_EXCEPTION = (
    b'<?xml version="1.0" encoding="UTF-8"?>\n'
    b'<ServiceExceptionReport version="1.3.0" xmlns="http://www.opengis.net/ogc">'
    b'<ServiceException code="InvalidDimensionValue">%s</ServiceException>'
    b"</ServiceExceptionReport>"
)


def synthetic_png(width: int, height: int, seed: str, bands: int = 3) -> bytes:
    """Deterministic gradient image; ``seed`` shifts the pattern per request."""
    k = int.from_bytes(hashlib.sha256(seed.encode()).digest()[:2], "big")
    yy, xx = np.mgrid[0:height, 0:width]
    base = (xx + 2 * yy + k) % 256
    arr = np.stack([(base + 85 * b) % 256 for b in range(bands)], axis=-1).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr[:, :, 0] if bands == 1 else arr).save(buf, format="PNG", compress_level=1)
    return buf.getvalue()


class StubWms:
    """Threaded HTTP server on 127.0.0.1; use as a context manager.

    ``script`` is a queue of canned GetMap outcomes consumed one per request:
    an int is returned as that HTTP status, ``"exception"`` as a WMS service
    exception body. When the queue is empty, requests succeed.
    """

    def __init__(
        self,
        layers: Iterable[LayerInfo] = (),
        formats: Iterable[str] = ("image/png",),
        crs_ids: Iterable[str] = ("EPSG:28992",),
        title: str = "stub",
    ):
        self.crs_ids = tuple(crs_ids)
        self.layers = tuple(layers) or (LayerInfo("Actueel_ortho25", "RGB", self.crs_ids),)
        self.formats = tuple(formats)
        self.title = title
        self.script: deque = deque()
        self.requests: list[dict] = []
        self.exception_text = b"TIME value out of range"
        self._lock = threading.Lock()
        self._server: Optional[ThreadingHTTPServer] = None
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/wms"

    def endpoint(self, **kw) -> WmsEndpoint:
        return WmsEndpoint(
            name=kw.pop("name", self.title),
            base_url=self.url,
            layers=self.layers,
            formats=self.formats,
            crs_ids=self.crs_ids,
            **kw,
        )

    def getmap_count(self) -> int:
        with self._lock:
            return sum(1 for r in self.requests if r.get("REQUEST", "").lower() == "getmap")

    def _handle(self, handler: BaseHTTPRequestHandler) -> None:
        query = urllib.parse.urlsplit(handler.path).query
        params = {k.upper(): v for k, v in urllib.parse.parse_qsl(query, keep_blank_values=True)}
        with self._lock:
            self.requests.append(params)
            request = params.get("REQUEST", "").lower()
            outcome = self.script.popleft() if request == "getmap" and self.script else None

        if request == "getcapabilities":
            self._send(handler, 200, "text/xml", render_capabilities(self.endpoint()))
        elif request == "getmap":
            if isinstance(outcome, int):
                self._send(handler, outcome, "text/plain", b"scripted failure")
            elif outcome == "exception":
                self._send(handler, 200, "application/vnd.ogc.se_xml", SERVICE_EXCEPTION % self.exception_text)
            else:
                try:
                    w, h = int(params["WIDTH"]), int(params["HEIGHT"])
                except (KeyError, ValueError):
                    self._send(handler, 400, "text/plain", b"WIDTH/HEIGHT required")
                    return
                seed = "|".join(params.get(k, "") for k in ("LAYERS", "BBOX", "TIME"))
                self._send(handler, 200, "image/png", synthetic_png(w, h, seed))
        else:
            self._send(handler, 400, "text/plain", b"unsupported request")

    @staticmethod
    def _send(handler: BaseHTTPRequestHandler, status: int, ctype: str, body: bytes) -> None:
        handler.send_response(status)
        handler.send_header("Content-Type", ctype)
        handler.send_header("Content-Length", str(len(body)))
        handler.end_headers()
        handler.wfile.write(body)

    def start(self) -> "StubWms":
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                stub._handle(self)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> "StubWms":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
