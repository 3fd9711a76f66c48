import json

import pytest

from revelio.simnet import AdversaryScript, Rule, SimClock, SimNetwork
from revelio.wire import Response, UnreachableError


def echo_handler(method, path, body, src):
    return Response(200, {"echo": body, "path": path, "from": src}, None)


@pytest.fixture
def net():
    network = SimNetwork()
    network.register("server", echo_handler)
    return network


def test_request_response_recorded_in_order(net):
    resp = net.request("client", "server", "POST", "/x", {"n": 1})
    assert resp.status == 200
    assert [m.seq for m in net.transcript] == [0, 1]
    assert net.transcript[0].src == "client" and net.transcript[1].src == "server"


def test_unknown_endpoint_unreachable(net):
    with pytest.raises(UnreachableError):
        net.request("client", "nowhere", "GET", "/", {})


def test_drop_rule(net):
    net.adversary = AdversaryScript(
        "d", rules=[Rule("drop-all", lambda m: m["kind"] == "request", "drop")]
    )
    with pytest.raises(UnreachableError):
        net.request("client", "server", "GET", "/", {})
    assert len(net.transcript) == 1  # the dropped message is still recorded


def test_redirect_rule(net):
    net.register("shadow", lambda m, p, b, s: Response(200, {"who": "shadow"}, None))
    net.adversary = AdversaryScript(
        "r",
        rules=[Rule("redir", lambda m: m["kind"] == "request" and m["dst"] == "server",
                    "redirect", target="shadow")],
    )
    resp = net.request("client", "server", "GET", "/", {})
    assert resp.body["who"] == "shadow"


def test_replace_rule_rewrites_body(net):
    def transform(view):
        return {**view, "body": {"n": 999}}

    net.adversary = AdversaryScript(
        "x", rules=[Rule("rw", lambda m: m["kind"] == "request", "replace", transform=transform)]
    )
    resp = net.request("client", "server", "POST", "/x", {"n": 1})
    assert resp.body["echo"] == {"n": 999}


def test_duplicate_rule_delivers_twice(net):
    hits = []
    net.register("counter", lambda m, p, b, s: (hits.append(1), Response(200, {}, None))[1])
    net.adversary = AdversaryScript(
        "dup", rules=[Rule("dup", lambda m: m.get("dst") == "counter", "duplicate")]
    )
    net.request("client", "counter", "POST", "/x", {})
    assert len(hits) == 2


def test_response_interception(net):
    def transform(view):
        return {**view, "status": 500, "body": {"error": "mangled"}}

    net.adversary = AdversaryScript(
        "resp", rules=[Rule("mangle", lambda m: m["kind"] == "response", "replace",
                            transform=transform)]
    )
    resp = net.request("client", "server", "GET", "/", {})
    assert resp.status == 500 and resp.body["error"] == "mangled"


def test_payload_scan_finds_raw_and_hex(net):
    net.request("client", "server", "POST", "/x", {"secret": (b"\xde\xad\xbe\xef" * 8).hex()})
    assert net.payload_contains(b"\xde\xad\xbe\xef" * 8)
    assert not net.payload_contains(b"\x11" * 32)


def test_payloads_are_canonical_json(net):
    net.request("client", "server", "POST", "/x", {"b": 2, "a": 1})
    doc = json.loads(net.transcript[0].payload)
    assert list(doc) == sorted(doc)


def test_clock_is_logical():
    clock = SimClock()
    assert clock.now() == 0.0
    clock.advance(90 * 86400)
    assert clock.now() == 90 * 86400
