"""Request/response surface shared by the in-process network and HTTP.

Every protocol exchange is a (method, path, JSON body) request answered
by a status, a JSON body and the public key of the connection it arrived
on (None while an endpoint still speaks plain HTTP). Both the simulated
network and the real HTTP adapters implement this one interface.
"""

from __future__ import annotations

from typing import NamedTuple, Optional, Protocol


class UnreachableError(Exception):
    """The destination endpoint cannot be reached."""


class Response(NamedTuple):
    status: int
    body: dict
    conn_key: Optional[bytes] = None


class Transport(Protocol):
    def request(self, src: str, dst: str, method: str, path: str, body: dict) -> Response: ...
