"""Verdict fixtures for alternative verifier implementations.

Each case freezes one complete client-side attestation: the registry, the
chain for the report's chip, the fetched bundle, the connection key, the
verdict the reference pipeline produced, and (for trusted sessions) a
monitoring sequence. Synthetic mutation cases cover the verdict statuses
the scenario catalog alone does not reach.
"""

from __future__ import annotations

import json

from . import crypto
from .kds import NotProvisioned
from .node import WELL_KNOWN_PATH
from .scenarios import SCENARIO_NAMES, run_scenario_world
from .security_processor import AttestationReport
from .verifier import TrustedRegistry, attest_domain
from .wire import UnreachableError

FIXTURE_VERSION = 1


def _flip_hex(hex_str: str, offset: int) -> str:
    raw = bytearray(bytes.fromhex(hex_str))
    raw[offset] ^= 0x5A
    return raw.hex()


_NO_OVERRIDE = object()


def _case(name, world, ip, registry=None, chain_override=_NO_OVERRIDE, mutate=None):
    """Fetch from a live scenario world and freeze the verdict for it."""
    registry = registry if registry is not None else world.registry
    try:
        # Fetch as the scenario's client so wire-level adversaries still apply.
        resp = world.network.request(world.client_id, ip, "GET", WELL_KNOWN_PATH, {})
    except UnreachableError:
        return None
    if resp.status != 200:
        return None
    fetched = json.loads(json.dumps(resp.body))  # deep copy
    if mutate is not None:
        fetched = mutate(fetched)
    report = AttestationReport.from_json_dict(fetched["report"])
    if chain_override is not _NO_OVERRIDE:
        chain_hex = chain_override
    else:
        try:
            chain_hex = world.kds.fetch_vcek(report.chip_id, report.tcb_version).to_bytes().hex()
        except NotProvisioned:
            chain_hex = None

    kds_stub = _StaticChainSource(chain_hex)
    verdict = attest_domain(registry, world.domain, fetched, resp.conn_key, kds_stub)

    case = {
        "name": name,
        "domain": world.domain,
        "registry": registry.to_json_obj(),
        "chain_hex": chain_hex,
        "fetched": fetched,
        "connection_public_key": resp.conn_key.hex() if resp.conn_key else None,
        "expected_status": verdict.status.value,
        "monitor": [],
    }
    if verdict.trusted:
        attested = fetched["tls_public_key"]
        for _ in range(2):
            follow = world.network.request(world.client_id, ip, "GET", "/index", {})
            key_hex = follow.conn_key.hex() if follow.conn_key else None
            case["monitor"].append(
                {
                    "connection_public_key": key_hex,
                    "expected_status": "Trusted" if key_hex == attested else "ConnectionReset",
                }
            )
    return case


class _StaticChainSource:
    """VcekSource view over one frozen chain, as the fixtures carry it."""

    def __init__(self, chain_hex: str | None):
        self.chain_hex = chain_hex

    def fetch_vcek(self, chip_id: bytes, tcb_version: int):
        from .certs import CertChain

        if self.chain_hex is None:
            raise NotProvisioned("fixture has no chain")
        return CertChain.from_bytes(bytes.fromhex(self.chain_hex))


def build_fixture_cases(seed: int = 7, n_nodes: int = 3) -> dict:
    cases = []

    _, honest = run_scenario_world("none", seed, n_nodes)
    for node in honest.nodes:
        case = _case(f"none:{node.config.ip}", honest, node.config.ip)
        if case:
            cases.append(case)

    for scenario in SCENARIO_NAMES:
        _, world = run_scenario_world(scenario, seed, n_nodes)
        targets = world.client_targets or [n.config.ip for n in world.nodes]
        # Prefer a target where the attack is client-visible.
        found = []
        for ip in targets:
            case = _case(f"{scenario}:{ip}", world, ip)
            if case:
                found.append(case)
        if found:
            interesting = [c for c in found if c["expected_status"] != "Trusted"]
            cases.append(interesting[0] if interesting else found[0])

    # Synthetic mutations on the honest world, for statuses the catalog
    # never reaches client-side.
    ip = honest.nodes[0].config.ip
    base = _case("synthetic:baseline", honest, ip)
    assert base is not None and base["expected_status"] == "Trusted"

    def mutated(name, **kwargs):
        case = _case(name, honest, ip, **kwargs)
        assert case is not None
        cases.append(case)
        return case

    def corrupt_signature(fetched):
        fetched["report"]["signature"] = _flip_hex(fetched["report"]["signature"], 3)
        return fetched

    def corrupt_measurement(fetched):
        fetched["report"]["measurement"] = _flip_hex(fetched["report"]["measurement"], 0)
        return fetched

    def swap_tls_key(fetched):
        fetched["tls_public_key"] = crypto.KeyPair.from_seed(b"\x42" * 32).public.hex()
        return fetched

    mutated("synthetic:bad-signature", mutate=corrupt_signature)
    mutated("synthetic:mutated-measurement", mutate=corrupt_measurement)
    mutated("synthetic:swapped-tls-key", mutate=swap_tls_key)
    mutated("synthetic:corrupted-chain", chain_override=_flip_hex(base["chain_hex"], 40))
    mutated("synthetic:missing-chain", chain_override=None)

    unknown_registry = TrustedRegistry()
    unknown_registry.add_accepted(honest.domain, b"\x11" * 48)
    mutated("synthetic:unregistered-measurement", registry=unknown_registry)

    revoked_registry = TrustedRegistry()
    revoked_registry.add_revoked(honest.domain, honest.provisioned.measurement)
    mutated("synthetic:revoked-measurement", registry=revoked_registry)

    # Mid-session reset: same attestation, but the second request's
    # connection presents a different key.
    swap_case = dict(base)
    other_key = crypto.KeyPair.from_seed(b"\x99" * 32).public.hex()
    swap_case["name"] = "synthetic:mid-session-key-swap"
    swap_case["monitor"] = [
        {"connection_public_key": base["connection_public_key"], "expected_status": "Trusted"},
        {"connection_public_key": other_key, "expected_status": "ConnectionReset"},
    ]
    cases.append(swap_case)

    return {"version": FIXTURE_VERSION, "seed": seed, "cases": cases}
