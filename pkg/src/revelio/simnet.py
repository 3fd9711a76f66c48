"""Deterministic in-process network with scriptable adversaries.

Endpoints are synchronous handlers keyed by address. Every request and
every response is serialized to canonical JSON, appended to a totally
ordered transcript, and offered to the adversary's interception rules
first. Nothing here touches wall-clock time or OS randomness, so a run
is a pure function of (topology, adversary, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from .wire import Response, UnreachableError

Handler = Callable[[str, str, dict, str], Response]  # (method, path, body, src)


class SimClock:
    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        self._now += seconds


@dataclass(frozen=True)
class SimMessage:
    src: str
    dst: str
    payload: bytes
    seq: int

    def to_json_dict(self) -> dict:
        return {
            "src": self.src,
            "dst": self.dst,
            "seq": self.seq,
            "payload": json.loads(self.payload.decode("utf-8")),
        }


@dataclass
class Rule:
    """One interception rule: matched messages get the action applied.

    Rules see a dict view of the message: kind (request/response), src,
    dst, method/path/body for requests, status/body for responses.
    """

    name: str
    matches: Callable[[dict], bool]
    action: str  # drop | replace | duplicate | redirect
    target: Optional[str] = None  # redirect destination
    transform: Optional[Callable[[dict], dict]] = None  # replace: new message view


@dataclass
class AdversaryScript:
    name: str
    rules: list = field(default_factory=list)
    setup: Optional[Callable] = None  # build-time tampering, runs before boot
    after_round: Optional[Callable] = None  # runtime actions, runs post-round


def _canonical(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


class SimNetwork:
    """Transport implementation recording a full, ordered transcript."""

    def __init__(self, adversary: AdversaryScript | None = None):
        self.endpoints: dict[str, Handler] = {}
        self.transcript: list[SimMessage] = []
        self.adversary = adversary
        self._seq = 0

    def register(self, endpoint_id: str, handler: Handler) -> None:
        self.endpoints[endpoint_id] = handler

    def unregister(self, endpoint_id: str) -> None:
        self.endpoints.pop(endpoint_id, None)

    def _record(self, src: str, dst: str, doc: dict) -> None:
        self.transcript.append(SimMessage(src, dst, _canonical(doc), self._seq))
        self._seq += 1

    def _apply_rules(self, view: dict) -> dict:
        """Returns the (possibly rewritten) view; raises on drop."""
        if self.adversary is None:
            return view
        for rule in self.adversary.rules:
            if not rule.matches(view):
                continue
            if rule.action == "drop":
                self._record(view["src"], view["dst"], {**view, "dropped_by": rule.name})
                raise UnreachableError(f"dropped by rule {rule.name}")
            if rule.action == "redirect":
                view = {**view, "dst": rule.target}
            elif rule.action == "replace":
                view = rule.transform(view)
            elif rule.action == "duplicate":
                view = {**view, "duplicate": True}
        return view

    def _deliver(self, view: dict) -> Response:
        handler = self.endpoints.get(view["dst"])
        if handler is None:
            raise UnreachableError(f"no endpoint {view['dst']!r}")
        return handler(view["method"], view["path"], view["body"], view["src"])

    def request(self, src: str, dst: str, method: str, path: str, body: dict) -> Response:
        view = {
            "kind": "request", "src": src, "dst": dst,
            "method": method, "path": path, "body": body,
        }
        view = self._apply_rules(view)
        deliveries = 2 if view.pop("duplicate", False) else 1

        resp: Response | None = None
        for _ in range(deliveries):
            self._record(view["src"], view["dst"], view)
            resp = self._deliver(view)
            resp_view = {
                "kind": "response", "src": view["dst"], "dst": view["src"],
                "status": resp.status, "body": resp.body,
                "conn_key": resp.conn_key.hex() if resp.conn_key else None,
            }
            resp_view = self._apply_rules(resp_view)
            self._record(resp_view["src"], resp_view["dst"], resp_view)
            resp = Response(
                resp_view["status"],
                resp_view["body"],
                bytes.fromhex(resp_view["conn_key"]) if resp_view["conn_key"] else None,
            )
        assert resp is not None
        return resp

    # -- post-run assertions -------------------------------------------------

    def payload_contains(self, needle: bytes) -> bool:
        """True if the needle appears raw or hex-encoded in any payload."""
        hex_form = needle.hex().encode("ascii")
        for msg in self.transcript:
            if needle in msg.payload or hex_form in msg.payload:
                return True
        return False
