"""Real-socket HTTP facades over the same handlers the simulation uses.

A node server exposes the protocol endpoints with JSON bodies and
reports the active connection key in the X-Revelio-Conn-Key response
header; the KDS server answers GET /vcek with the serialized chain.
HttpTransport lets the orchestration round and the key pull run over
these sockets unchanged.
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.parse
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .certs import CertChain
from .kds import KdsUnreachable, KeyDistributionServer, NotProvisioned
from .node import WELL_KNOWN_PATH, Node
from .wire import Response, UnreachableError

logger = logging.getLogger(__name__)

CONN_KEY_HEADER = "X-Revelio-Conn-Key"


class _SilentHandler(BaseHTTPRequestHandler):
    def log_message(self, fmt, *args):  # quiet test output
        logger.debug("http: " + fmt, *args)


def _read_body(handler: BaseHTTPRequestHandler) -> dict:
    length = int(handler.headers.get("Content-Length") or 0)
    if length == 0:
        return {}
    try:
        return json.loads(handler.rfile.read(length).decode("utf-8"))
    except (ValueError, UnicodeDecodeError):
        return {}


def _send_json(handler: BaseHTTPRequestHandler, status: int, body: dict,
               conn_key: bytes | None) -> None:
    payload = json.dumps(body, sort_keys=True).encode("utf-8")
    handler.send_response(status)
    handler.send_header("Content-Type", "application/json")
    handler.send_header("Content-Length", str(len(payload)))
    if conn_key is not None:
        handler.send_header(CONN_KEY_HEADER, conn_key.hex())
    handler.end_headers()
    handler.wfile.write(payload)


class _ServerThread:
    def __init__(self, server: ThreadingHTTPServer):
        self._server = server
        self._thread = threading.Thread(
            target=server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True
        )

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "_ServerThread":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_node(node: Node, host: str = "127.0.0.1", port: int = 0) -> _ServerThread:
    class NodeHandler(_SilentHandler):
        def _dispatch(self, method: str):
            path = urllib.parse.urlsplit(self.path).path
            resp = node.handle_request(method, path, _read_body(self), self.client_address[0])
            _send_json(self, resp.status, resp.body, resp.conn_key)

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

    try:
        server = ThreadingHTTPServer((host, port), NodeHandler)
    except OSError as e:
        node._fail("net", str(e))
        raise
    return _ServerThread(server).start()


def serve_kds(kds: KeyDistributionServer, host: str = "127.0.0.1", port: int = 0) -> _ServerThread:
    class KdsHandler(_SilentHandler):
        def do_GET(self):
            url = urllib.parse.urlsplit(self.path)
            if url.path != "/vcek":
                _send_json(self, 404, {"error": "not_found"}, None)
                return
            query = urllib.parse.parse_qs(url.query)
            try:
                chip_id = bytes.fromhex(query["chip_id"][0])
                tcb = int(query["tcb"][0])
            except (KeyError, ValueError, IndexError):
                _send_json(self, 400, {"error": "bad_request"}, None)
                return
            try:
                chain = kds.fetch_vcek(chip_id, tcb)
            except NotProvisioned:
                _send_json(self, 404, {"error": "not_provisioned"}, None)
                return
            payload = chain.to_bytes()
            self.send_response(200)
            self.send_header("Content-Type", "application/octet-stream")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

    server = ThreadingHTTPServer((host, port), KdsHandler)
    return _ServerThread(server).start()


class HttpKdsClient:
    """VcekSource over the KDS HTTP facade."""

    def __init__(self, base_url: str, timeout: float = 5.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def fetch_vcek(self, chip_id: bytes, tcb_version: int) -> CertChain:
        url = f"{self.base_url}/vcek?chip_id={chip_id.hex()}&tcb={tcb_version}"
        try:
            with urllib.request.urlopen(url, timeout=self.timeout) as resp:
                return CertChain.from_bytes(resp.read())
        except urllib.error.HTTPError as e:
            if e.code == 404:
                raise NotProvisioned(f"chip {chip_id.hex()[:12]} tcb {tcb_version}") from e
            raise KdsUnreachable(str(e)) from e
        except urllib.error.URLError as e:
            raise KdsUnreachable(str(e)) from e


class HttpTransport:
    """Transport over real sockets; destinations are addresses with known URLs."""

    def __init__(self, urls: dict | None = None, timeout: float = 5.0):
        self.urls = dict(urls or {})
        self.timeout = timeout

    def add(self, addr: str, url: str) -> None:
        self.urls[addr] = url.rstrip("/")

    def request(self, src: str, dst: str, method: str, path: str, body: dict) -> Response:
        base = self.urls.get(dst, dst)  # bare URLs work as addresses too
        data = json.dumps(body).encode("utf-8") if method != "GET" else None
        req = urllib.request.Request(
            base.rstrip("/") + path, data=data, method=method,
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return _to_response(resp.status, resp)
        except urllib.error.HTTPError as e:
            return _to_response(e.code, e)
        except urllib.error.URLError as e:
            raise UnreachableError(str(e)) from e


def _to_response(status: int, resp) -> Response:
    try:
        body = json.loads(resp.read().decode("utf-8"))
    except (ValueError, UnicodeDecodeError):
        body = {}
    conn_key_hex = resp.headers.get(CONN_KEY_HEADER)
    return Response(status, body, bytes.fromhex(conn_key_hex) if conn_key_hex else None)


def fetch_attestation(transport: HttpTransport, addr: str) -> Response:
    return transport.request("client", addr, "GET", WELL_KNOWN_PATH, {})
