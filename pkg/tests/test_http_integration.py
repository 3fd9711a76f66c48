"""The HTTP facades exercised over real localhost sockets."""

import json
import socket

import pytest

from revelio.httpd import (
    HttpKdsClient,
    HttpTransport,
    fetch_attestation,
    serve_kds,
    serve_node,
)
from revelio.kds import NotProvisioned
from revelio.node import NodePhase
from revelio.fleet import run_certificate_round
from revelio.scenarios import build_world
from revelio.verifier import attest_domain


@pytest.fixture
def http_world():
    """Two-node world booted in process but served over real sockets."""
    world = build_world(seed=2024, n_nodes=2)
    kds_server = serve_kds(world.kds)
    transport = HttpTransport()
    node_servers = []
    for node in world.nodes:
        node.config.kds = HttpKdsClient(kds_server.url)  # chain fetches go over HTTP too
        node.attach_transport(transport)
        node.boot()
        node.establish_identity()
        node.serve()
        server = serve_node(node)
        node_servers.append(server)
        transport.add(node.config.ip, server.url)
    yield world, transport, kds_server
    for server in node_servers:
        server.stop()
    kds_server.stop()


def test_kds_http_facade_round_trip(http_world):
    world, _, kds_server = http_world
    client = HttpKdsClient(kds_server.url)
    chip = world.nodes[0].config.chip
    chain = client.fetch_vcek(chip.chip_id, chip.tcb_version)
    assert chain.to_bytes() == world.kds.fetch_vcek(chip.chip_id, chip.tcb_version).to_bytes()
    with pytest.raises(NotProvisioned):
        client.fetch_vcek(b"\x00" * 64, 1)


def test_round_and_attestation_over_http(http_world):
    world, transport, kds_server = http_world
    outcome = run_certificate_round(world.sp, transport)
    assert outcome.success
    assert len(outcome.installs) == 2
    assert all(n.shared_identity is not None for n in world.nodes)

    kds_client = HttpKdsClient(kds_server.url)
    for node in world.nodes:
        resp = fetch_attestation(transport, node.config.ip)
        assert resp.status == 200
        assert resp.conn_key is not None  # X-Revelio-Conn-Key header
        verdict = attest_domain(world.registry, world.domain, resp.body, resp.conn_key, kds_client)
        assert verdict.trusted


def test_http_404_on_non_protocol_path(http_world):
    world, transport, _ = http_world
    resp = transport.request("probe", world.nodes[0].config.ip, "POST", "/admin", {})
    assert resp.status == 404


def test_conn_key_header_absent_before_install(http_world):
    world, transport, _ = http_world
    resp = fetch_attestation(transport, world.nodes[0].config.ip)
    assert resp.status == 200
    assert resp.conn_key is None


def test_port_conflict_marks_node_failed(http_world):
    world, _, _ = http_world
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    node = world.nodes[1]
    with pytest.raises(OSError):
        serve_node(node, port=port)
    assert node.phase is NodePhase.FAILED and node.failure_reason == "net"
    blocker.close()


class TestCli:
    def test_sim_run_and_list(self, capsys, tmp_path):
        from revelio.cli import sim_main

        assert sim_main(["list"]) == 0
        out = capsys.readouterr().out
        assert "malicious-kernel" in out and "none" in out

        transcript = tmp_path / "transcript.json"
        code = sim_main(
            ["run", "--scenario", "none", "--seed", "3", "--transcript-out", str(transcript)]
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["violations"] == []
        assert json.loads(transcript.read_text())  # non-empty transcript file

    def test_sim_run_adversary_exit_code(self, capsys):
        from revelio.cli import sim_main

        assert sim_main(["run", "--scenario", "rollback", "--seed", "3"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["violations"]

    def test_sp_and_attest_cli_end_to_end(self, capsys, tmp_path, http_world):
        from revelio.cli import attest_main, sp_main

        world, transport, kds_server = http_world
        registry_path = tmp_path / "registry.txt"
        world.registry.save(str(registry_path))
        chips_path = tmp_path / "chips.txt"
        chips_path.write_text(
            "".join(n.config.chip.chip_id.hex() + "\n" for n in world.nodes)
        )
        fleet = ",".join(f"{n.config.ip}={transport.urls[n.config.ip]}" for n in world.nodes)

        code = sp_main(
            [
                "run-round",
                "--fleet", fleet,
                "--registry", str(registry_path),
                "--domain", world.domain,
                "--kds-url", kds_server.url,
                "--approved-chips", str(chips_path),
            ]
        )
        out = json.loads(capsys.readouterr().out)
        assert code == 0
        assert out["success"] and len(out["installs"]) == 2

        node_url = transport.urls[world.nodes[0].config.ip]
        code = attest_main(
            [
                "--domain", world.domain,
                "--registry", str(registry_path),
                "--url", node_url,
                "--kds-url", kds_server.url,
                "--monitor", "2",
            ]
        )
        results = json.loads(capsys.readouterr().out)
        assert code == 0
        assert [r["status"] for r in results] == ["Trusted", "Trusted", "Trusted"]

    def test_attest_cli_inconclusive_on_kds_outage(self, capsys, tmp_path, http_world):
        from revelio.cli import attest_main

        world, transport, _ = http_world
        run_certificate_round(world.sp, transport)
        registry_path = tmp_path / "registry.txt"
        world.registry.save(str(registry_path))

        code = attest_main(
            [
                "--domain", world.domain,
                "--registry", str(registry_path),
                "--url", transport.urls[world.nodes[0].config.ip],
                "--kds-url", "http://127.0.0.1:1",  # nothing listens here
            ]
        )
        doc = json.loads(capsys.readouterr().out)
        assert code == 1
        assert doc["status"] == "Inconclusive"

    def test_attest_cli_fails_closed(self, capsys, tmp_path, http_world):
        from revelio.cli import attest_main
        from revelio.crypto import hash384

        world, transport, kds_server = http_world
        run_certificate_round(world.sp, transport)
        # registry that expects a different image
        from revelio.verifier import TrustedRegistry

        registry = TrustedRegistry()
        registry.add_accepted(world.domain, hash384(b"some other build"))
        registry_path = tmp_path / "registry.txt"
        registry.save(str(registry_path))

        code = attest_main(
            [
                "--domain", world.domain,
                "--registry", str(registry_path),
                "--url", transport.urls[world.nodes[0].config.ip],
                "--kds-url", kds_server.url,
            ]
        )
        doc = json.loads(capsys.readouterr().out)
        assert code == 1
        assert doc["status"] == "MeasurementMismatch"
