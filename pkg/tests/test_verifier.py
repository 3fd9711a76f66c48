import random
from dataclasses import replace

import pytest

from revelio.crypto import KeyPair, hash384
from revelio.fleet import run_certificate_round
from revelio.integrity import ImageManifest
from revelio.node import WELL_KNOWN_PATH
from revelio.provisioning import provision
from revelio.scenarios import build_world, bring_up
from revelio.security_processor import AttestationReport, verify_report
from revelio.verifier import (
    AttestationVerdict,
    TrustedRegistry,
    UsageError,
    VerdictStatus,
    attest_domain,
    monitor_request,
    open_session,
    recompute_expected_measurement,
)


@pytest.fixture
def world():
    w = build_world(seed=77, n_nodes=3)
    for node in w.nodes:
        bring_up(w, node)
    run_certificate_round(w.sp, w.network)
    return w


def _fetch(world, ip):
    return world.network.request("client", ip, "GET", WELL_KNOWN_PATH, {})


class TestAttestPipeline:
    def test_honest_node_is_trusted(self, world):
        resp = _fetch(world, "10.0.0.1")
        verdict = attest_domain(world.registry, world.domain, resp.body, resp.conn_key, world.kds)
        assert verdict.status is VerdictStatus.TRUSTED

    def test_unregistered_domain_is_usage_error(self, world):
        resp = _fetch(world, "10.0.0.1")
        with pytest.raises(UsageError):
            attest_domain(world.registry, "other.example", resp.body, resp.conn_key, world.kds)

    def test_report_from_different_vm_is_binding_mismatch(self, world):
        # Node serves an authentic report whose REPORT_DATA binds some other
        # VM's key, not the one it serves.
        a = _fetch(world, "10.0.0.1").body
        b = _fetch(world, "10.0.0.2")
        mixed = {"report": world.nodes[0].identity.report_pubkey.to_json_dict(),
                 "tls_public_key": b.body["tls_public_key"]}
        verdict = attest_domain(world.registry, world.domain, mixed, b.conn_key, world.kds)
        assert verdict.status is VerdictStatus.BINDING_MISMATCH
        assert a  # silence unused warning

    def test_redirect_to_fresh_cert_server_is_binding_mismatch(self, world):
        # Provider redirects to a non-TEE box with a newly issued valid
        # certificate: report and served key replay fine, but the connection
        # terminates on a different key.
        resp = _fetch(world, "10.0.0.1")
        imposter_conn = KeyPair.generate(world.rand).public
        verdict = attest_domain(world.registry, world.domain, resp.body, imposter_conn, world.kds)
        assert verdict.status is VerdictStatus.BINDING_MISMATCH

    def test_revoked_measurement(self, world):
        world.registry.add_revoked(world.domain, world.provisioned.measurement)
        resp = _fetch(world, "10.0.0.1")
        verdict = attest_domain(world.registry, world.domain, resp.body, resp.conn_key, world.kds)
        assert verdict.status is VerdictStatus.REVOKED_MEASUREMENT

    def test_unknown_measurement(self, world):
        world.registry.entries[world.domain].accepted_measurements = {hash384(b"elsewhere")}
        resp = _fetch(world, "10.0.0.1")
        verdict = attest_domain(world.registry, world.domain, resp.body, resp.conn_key, world.kds)
        assert verdict.status is VerdictStatus.MEASUREMENT_MISMATCH

    def test_trusted_implies_every_stage_predicate(self, world):
        # Re-assert the four stage predicates independently of pipeline order.
        resp = _fetch(world, "10.0.0.2")
        verdict = attest_domain(world.registry, world.domain, resp.body, resp.conn_key, world.kds)
        assert verdict.trusted

        from revelio.certs import validate_chain
        from revelio.crypto import hash256, pad_report_data

        report = AttestationReport.from_json_dict(resp.body["report"])
        tls_key = bytes.fromhex(resp.body["tls_public_key"])
        chain = world.kds.fetch_vcek(report.chip_id, report.tcb_version)
        entry = world.registry.entries[world.domain]
        assert validate_chain(chain, report.chip_id, report.tcb_version)
        assert verify_report(report, chain.vcek.subject_public_key)
        assert report.measurement in entry.accepted_measurements
        assert report.measurement not in entry.revoked_measurements
        assert pad_report_data(hash256(tls_key)) == report.report_data
        assert resp.conn_key == tls_key

    def test_fail_closed_on_random_mutations(self, world):
        # Sample here; the acceptance suite runs the full 1000-mutation sweep.
        resp = _fetch(world, "10.0.0.1")
        report_wire = bytearray(AttestationReport.from_json_dict(resp.body["report"]).to_bytes())
        rng = random.Random(99)
        for _ in range(60):
            mutated = bytearray(report_wire)
            pos = rng.randrange(len(mutated))
            mutated[pos] = (mutated[pos] + rng.randrange(1, 256)) % 256
            doc = {
                "report": AttestationReport.from_bytes(bytes(mutated)).to_json_dict(),
                "tls_public_key": resp.body["tls_public_key"],
            }
            verdict = attest_domain(world.registry, world.domain, doc, resp.conn_key, world.kds)
            assert not verdict.trusted


class TestMonitor:
    def test_stable_key_stays_trusted(self, world):
        resp = _fetch(world, "10.0.0.1")
        verdict = attest_domain(world.registry, world.domain, resp.body, resp.conn_key, world.kds)
        session = open_session(world.domain, verdict, bytes.fromhex(resp.body["tls_public_key"]))
        for _ in range(3):
            follow = world.network.request("client", "10.0.0.1", "GET", "/index", {})
            assert monitor_request(session, follow.conn_key).trusted

    def test_mid_session_swap_resets(self, world):
        resp = _fetch(world, "10.0.0.1")
        verdict = attest_domain(world.registry, world.domain, resp.body, resp.conn_key, world.kds)
        session = open_session(world.domain, verdict, bytes.fromhex(resp.body["tls_public_key"]))
        swapped = KeyPair.generate(world.rand).public
        check = monitor_request(session, swapped)
        assert check.status is VerdictStatus.CONNECTION_RESET

    def test_never_attested_session_is_usage_error(self, world):
        bad = open_session(world.domain, AttestationVerdict(VerdictStatus.CHAIN_ERROR), b"")
        with pytest.raises(UsageError):
            monitor_request(bad, b"whatever")


class TestRecompute:
    def test_equals_deployed_measurement(self, world):
        resp = _fetch(world, "10.0.0.1")
        reported = bytes.fromhex(resp.body["report"]["measurement"])
        assert recompute_expected_measurement(world.sources) == reported

    def test_any_source_change_differs(self, world):
        base = recompute_expected_measurement(world.sources)
        changed = replace(world.sources, initrd=world.sources.initrd + b"?")
        assert recompute_expected_measurement(changed) != base
        manifest = ImageManifest.of([("bin/other", b"x", 0o755)])
        assert recompute_expected_measurement(replace(world.sources, manifest=manifest)) != base

    def test_independent_runs_are_identical(self, world):
        assert recompute_expected_measurement(world.sources) == recompute_expected_measurement(
            world.sources
        )


class TestRegistry:
    def _populated(self):
        reg = TrustedRegistry()
        reg.add_accepted("a.example", hash384(b"m1"))
        reg.add_accepted("a.example", hash384(b"m2"))
        reg.add_revoked("a.example", hash384(b"old"))
        reg.set_pinned_key("a.example", KeyPair.from_seed(b"\x05" * 32).public)
        reg.add_accepted("b.example", hash384(b"m3"))
        return reg

    def test_text_round_trip(self, tmp_path):
        reg = self._populated()
        path = str(tmp_path / "registry.txt")
        reg.save(path)
        loaded = TrustedRegistry.load(path)
        assert loaded.to_json_obj() == reg.to_json_obj()

    def test_json_round_trip(self, tmp_path):
        reg = self._populated()
        path = str(tmp_path / "registry.json")
        reg.save(path)
        loaded = TrustedRegistry.load(path)
        assert loaded.to_json_obj() == reg.to_json_obj()

    def test_accepted_and_revoked_stay_disjoint(self):
        reg = TrustedRegistry()
        m = hash384(b"m")
        reg.add_accepted("d", m)
        reg.add_revoked("d", m)  # revocation wins, removes from accepted
        assert m not in reg.entries["d"].accepted_measurements
        with pytest.raises(ValueError):
            reg.add_accepted("d", m)

    def test_unknown_flag_rejected(self):
        with pytest.raises(ValueError):
            TrustedRegistry.from_text("d.example aabb wat\n")

    def test_revocation_is_monotonic(self, world):
        # Adding a revocation can only remove trust, never grant it.
        resp = _fetch(world, "10.0.0.1")
        before = attest_domain(world.registry, world.domain, resp.body, resp.conn_key, world.kds)
        world.registry.add_revoked(world.domain, hash384(b"unrelated"))
        after = attest_domain(world.registry, world.domain, resp.body, resp.conn_key, world.kds)
        assert before.trusted and after.trusted
        world.registry.add_revoked(world.domain, world.provisioned.measurement)
        final = attest_domain(world.registry, world.domain, resp.body, resp.conn_key, world.kds)
        assert not final.trusted
