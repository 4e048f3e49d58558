"""Socket plumbing: serve an App over HTTP and talk to one as a client."""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping, Optional

from .canonical import canonical_bytes
from .wire import MAX_BODY, App, Response, error_response

log = logging.getLogger("safenet.access")


def _handler_for(app: App):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "safenet"

        def _dispatch(self):
            started = time.monotonic()
            length = int(self.headers.get("Content-Length") or 0)
            if length > MAX_BODY:
                resp = error_response(413, "BodyTooLarge", f"request bodies are limited to {MAX_BODY} bytes")
                self.close_connection = True
            else:
                body = self.rfile.read(length) if length else b""
                resp = app.handle(self.command, self.path, body, dict(self.headers.items()))
            # logged before the body goes out so the line exists once a client sees the reply
            log.info(json.dumps({
                "method": self.command,
                "path": self.path,
                "status": resp.status,
                "bytes": len(resp.body),
                "ms": round((time.monotonic() - started) * 1000, 2),
            }, sort_keys=True))
            self.send_response(resp.status)
            for k, v in resp.headers.items():
                self.send_header(k, v)
            self.send_header("Content-Length", str(len(resp.body)))
            self.end_headers()
            self.wfile.write(resp.body)

        do_GET = do_POST = do_DELETE = _dispatch

        def log_message(self, format, *args):  # silence the default stderr access log
            pass

    return Handler


def make_server(app: App, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _handler_for(app))
    server.daemon_threads = True
    return server


class BackgroundServer:
    """Run an App on a loopback port in a daemon thread (tests, harness)."""

    def __init__(self, app: App, host: str = "127.0.0.1", port: int = 0):
        self.server = make_server(app, host, port)
        # short poll so shutdown returns quickly
        self.thread = threading.Thread(target=self.server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "BackgroundServer":
        self.thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.server.shutdown()
        self.server.server_close()


class HttpTransport:
    """Client with the same ``request`` interface as InProcessTransport."""

    def __init__(self, base_url: str, headers: Optional[Mapping] = None, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.headers = dict(headers or {})
        self.timeout = timeout

    def request(self, method: str, path: str, body=b"") -> Response:
        if not isinstance(body, (bytes, bytearray)):
            body = canonical_bytes(body)
        req = urllib.request.Request(self.base_url + path, data=bytes(body) if body else None, method=method)
        req.add_header("Content-Type", "application/json")
        for k, v in self.headers.items():
            req.add_header(k, v)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return Response(resp.status, resp.read(), dict(resp.headers.items()))
        except urllib.error.HTTPError as err:
            return Response(err.code, err.read(), dict(err.headers.items()))
