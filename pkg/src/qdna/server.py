"""Read-only HTTP verification endpoint over an artifact store.

    GET  /artifacts/<device_id>/<session_id>   stored artifact bytes
    GET  /artifacts/<device_id>                 index as JSON
    POST /verify                                 body = artifact bytes, reply = report JSON

Every other method or path is refused; nothing here writes to the store.
"""
from __future__ import annotations

import json
import logging
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import unquote, urlsplit

from .provenance import verify_bytes
from .store import ArtifactStore, NotFoundError, StoreError

MAX_BODY = 4 * 1024 * 1024
log = logging.getLogger(__name__)


class VerifyHandler(BaseHTTPRequestHandler):
    server_version = "qdna-verify/1"
    store: ArtifactStore
    public_key = None

    def log_message(self, fmt, *args):
        log.info("%s %s", self.address_string(), fmt % args)

    def _send(self, status, body: bytes, content_type="application/json"):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status, obj):
        self._send(status, (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode())

    def _parts(self):
        return [unquote(p) for p in urlsplit(self.path).path.split("/") if p]

    def do_GET(self):
        parts = self._parts()
        try:
            if len(parts) == 3 and parts[0] == "artifacts":
                self._send(HTTPStatus.OK, self.store.get_bytes(parts[1], parts[2]))
                return
            if len(parts) == 2 and parts[0] == "artifacts":
                entries = self.store.entries(parts[1])
                if not entries:
                    raise NotFoundError(parts[1])
                self._json(HTTPStatus.OK, [e.__dict__ for e in entries])
                return
        except NotFoundError:
            self._json(HTTPStatus.NOT_FOUND, {"error": "not found"})
            return
        except StoreError as exc:
            self._json(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
            return
        self._json(HTTPStatus.NOT_FOUND, {"error": "not found"})

    def do_POST(self):
        if self._parts() != ["verify"]:
            self._refuse()
            return
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            self._json(HTTPStatus.LENGTH_REQUIRED, {"error": "Content-Length required"})
            return
        if not 0 < length <= MAX_BODY:
            self._json(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, {"error": f"body must be 1..{MAX_BODY} bytes"})
            return
        report = verify_bytes(self.rfile.read(length), self.public_key)
        self._json(HTTPStatus.OK, report.to_dict())

    def _refuse(self):
        self.send_response(HTTPStatus.METHOD_NOT_ALLOWED)
        self.send_header("Allow", "GET, POST")
        self.send_header("Content-Length", "0")
        self.end_headers()

    do_PUT = do_DELETE = do_PATCH = _refuse


def make_server(store_root, public_key, host="127.0.0.1", port=8080) -> ThreadingHTTPServer:
    """Bind the endpoint; the store is opened without keys for admission."""
    handler = type("BoundVerifyHandler", (VerifyHandler,), {"store": ArtifactStore(store_root), "public_key": public_key})
    return ThreadingHTTPServer((host, port), handler)


def serve_in_thread(server: ThreadingHTTPServer) -> threading.Thread:
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return thread
