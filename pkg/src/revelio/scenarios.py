"""Scenario catalog: honest runs and scripted adversaries over a fleet.

Each scenario builds the same deterministic world (KDS, CA, SP machine,
N fleet VMs, one client) and lets the adversary tamper with it at build
time (swapped boot components, rolled-back images), on the wire
(redirects), or at runtime (disk mutation). The report collects every
verdict produced anywhere plus transcript-level assertions; a violation
is any boot failure, rejected validation, integrity read error or
non-Trusted client verdict.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Callable

from . import crypto
from .boot import BootBundle
from .fleet import RoundOutcome, SimulatedCA, SpNode, run_certificate_round
from .integrity import ImageManifest, ManifestEntry, MerkleDevice, build_merkle
from .kds import KeyDistributionServer
from .node import WELL_KNOWN_PATH, Node, NodeConfig, NodePhase
from .provisioning import ImageSources, ProvisionedImage, provision
from .security_processor import ChipState, derive_sealing_key, issue_report
from .simnet import AdversaryScript, Rule, SimClock, SimNetwork
from .verifier import (
    TrustedRegistry,
    UsageError,
    attest_domain,
    monitor_request,
    open_session,
)
from .wire import Response, UnreachableError

DEFAULT_DOMAIN = "app.revelio.example"

BASE_MANIFEST = ImageManifest.of(
    [
        ("bin/service", b"#!/bin/service v1\n" + bytes(range(256)) * 24, 0o755),
        ("etc/network.conf", b"inbound=deny\nallow=/csr-bundle,/install-cert,/key-request\n", 0o644),
        ("etc/trust-anchors", b"planted-at-build-time\n", 0o644),
        ("www/index.html", b"<html><body>revelio node up</body></html>\n", 0o644),
    ]
)


def _flip_byte(data: bytes, offset: int, mask: int = 0x5A) -> bytes:
    return data[:offset] + bytes([data[offset] ^ mask]) + data[offset + 1 :]


def _edit_manifest(manifest: ImageManifest, path: str, content: bytes) -> ImageManifest:
    return ImageManifest(
        tuple(
            ManifestEntry(e.path, content, e.mode) if e.path == path else e
            for e in manifest.entries
        )
    )


@dataclass
class World:
    seed: int
    n_nodes: int
    domain: str
    rand: crypto.RandBytes
    clock: SimClock
    kds: KeyDistributionServer
    ca: SimulatedCA
    network: SimNetwork
    sources: ImageSources
    provisioned: ProvisionedImage
    registry: TrustedRegistry
    sp: SpNode
    nodes: list
    persistent: dict
    client_id: str = "client-0"
    client_targets: list | None = None
    extra_nodes: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)
    reboots: list = field(default_factory=list)
    archived_events: dict = field(default_factory=dict)  # events of pre-reboot incarnations


def build_world(seed: int, n_nodes: int = 3, domain: str = DEFAULT_DOMAIN) -> World:
    rand = random.Random(seed).randbytes
    clock = SimClock()
    kds = KeyDistributionServer(rand)
    ca = SimulatedCA(clock.now, rand)
    network = SimNetwork()

    sources = ImageSources(
        firmware=b"SIM-OVMF-20240101" + bytes(64),
        kernel=b"vmlinuz-sim-5.17 " + bytes(range(128)),
        initrd=b"initrd-sim " + bytes(reversed(range(128))),
        manifest=BASE_MANIFEST,
    )
    provisioned = provision(sources)
    measurement = provisioned.measurement

    chips = [ChipState.generate(tcb_version=1, rand=rand) for _ in range(n_nodes)]
    for chip in chips:
        kds.provision_chip(chip.chip_id, chip.tcb_version, chip.vcek.public)
    ips = [f"10.0.0.{i + 1}" for i in range(n_nodes)]
    approved_chips = frozenset(chip.chip_id for chip in chips)

    persistent = {ip: {} for ip in ips}
    nodes = []
    for chip, ip in zip(chips, ips):
        config = NodeConfig(
            chip=chip,
            boot=provisioned.boot,
            rootfs=provisioned.rootfs,
            expected_root_hash=provisioned.root_hash,
            ip=ip,
            domain=domain,
            expected_measurements=frozenset({measurement}),
            approved_chips=approved_chips,
            kds=kds,
        )
        nodes.append(Node(config, persistent[ip], rand))

    sp = SpNode(
        approved_chips=set(approved_chips),
        approved_ips=set(ips),
        expected_measurements={measurement},
        ca=ca,
        kds=kds,
        fleet=list(ips),
        domain=domain,
    )
    registry = TrustedRegistry()
    registry.add_accepted(domain, measurement)

    return World(
        seed=seed, n_nodes=n_nodes, domain=domain, rand=rand, clock=clock,
        kds=kds, ca=ca, network=network, sources=sources, provisioned=provisioned,
        registry=registry, sp=sp, nodes=nodes, persistent=persistent,
    )


def bring_up(world: World, node: Node) -> NodePhase:
    """Boot one VM through identity creation to serving, registering it."""
    node.attach_transport(world.network)
    if node.boot() is NodePhase.ROOTFS_VERIFIED:
        node.establish_identity()
    if node.phase is NodePhase.IDENTIFIED:
        node.serve()
    if node.phase is NodePhase.SERVING:
        world.network.register(node.config.ip, node.handle_request)
    return node.phase


def reboot_node(world: World, index: int) -> Node:
    old = world.nodes[index]
    world.network.unregister(old.config.ip)
    if old.events:
        world.archived_events.setdefault(old.config.ip, []).extend(old.events)
    fresh = Node(old.config, old.persistent, world.rand)
    world.nodes[index] = fresh
    bring_up(world, fresh)
    world.reboots.append(
        {
            "node": fresh.config.ip,
            "phase": fresh.phase.value,
            "failure_reason": fresh.failure_reason,
        }
    )
    return fresh


# --- scenario catalog -------------------------------------------------------

SCENARIOS: dict[str, Callable[[World], AdversaryScript]] = {}


def scenario(name: str):
    def register(builder):
        SCENARIOS[name] = builder
        return builder

    return register


@scenario("none")
def _honest(world: World) -> AdversaryScript:
    return AdversaryScript("none")


@scenario("malicious-kernel")
def _malicious_kernel(world: World) -> AdversaryScript:
    def setup(w: World):
        cfg = w.nodes[0].config
        cfg.boot = cfg.boot.with_components(kernel=b"EVIL" + cfg.boot.kernel)

    return AdversaryScript("malicious-kernel", setup=setup)


@scenario("malicious-initrd")
def _malicious_initrd(world: World) -> AdversaryScript:
    def setup(w: World):
        cfg = w.nodes[0].config
        cfg.boot = cfg.boot.with_components(initrd=b"EVIL" + cfg.boot.initrd)

    return AdversaryScript("malicious-initrd", setup=setup)


@scenario("malicious-cmdline")
def _malicious_cmdline(world: World) -> AdversaryScript:
    def setup(w: World):
        cfg = w.nodes[0].config
        cfg.boot = cfg.boot.with_components(cmdline=cfg.boot.cmdline + " init=/bin/backdoor")

    return AdversaryScript("malicious-cmdline", setup=setup)


@scenario("malicious-ovmf")
def _malicious_ovmf(world: World) -> AdversaryScript:
    # Replacement firmware that skips verification: the bundle is made
    # self-consistent so boot proceeds, but the launch digest changes.
    def setup(w: World):
        cfg = w.nodes[0].config
        cfg.boot = BootBundle.build(
            b"EVIL-OVMF" + cfg.boot.firmware, cfg.boot.kernel, cfg.boot.initrd, cfg.boot.cmdline
        )

    return AdversaryScript("malicious-ovmf", setup=setup)


@scenario("tampered-rootfs")
def _tampered_rootfs(world: World) -> AdversaryScript:
    def setup(w: World):
        cfg = w.nodes[0].config
        data = _flip_byte(cfg.rootfs.data, offset=100)
        cfg.rootfs = build_merkle(data, salt=cfg.rootfs.salt)  # attacker rebuilds the tree too

    return AdversaryScript("tampered-rootfs", setup=setup)


@scenario("tampered-roothash")
def _tampered_roothash(world: World) -> AdversaryScript:
    # Attacker also fixes the cmdline root hash: boot succeeds, but the
    # measurement no longer matches anything registered.
    def setup(w: World):
        manifest = _edit_manifest(w.sources.manifest, "bin/service", b"#!/bin/service BACKDOOR\n")
        tampered = provision(replace(w.sources, manifest=manifest))
        cfg = w.nodes[0].config
        cfg.boot = tampered.boot
        cfg.rootfs = tampered.rootfs
        cfg.expected_root_hash = tampered.root_hash

    return AdversaryScript("tampered-roothash", setup=setup)


@scenario("runtime-mutation-attempt")
def _runtime_mutation(world: World) -> AdversaryScript:
    def after_round(w: World):
        target = w.nodes[0]
        ip = target.config.ip
        probe = w.network.request("attacker", ip, "POST", "/admin", {"cmd": "disable-verity"})
        w.notes["admin_probe_status"] = probe.status

        dev = target.config.rootfs
        target.config.rootfs = MerkleDevice(
            data=_flip_byte(dev.data, 7), tree=dev.tree, root=dev.root, salt=dev.salt
        )
        read = w.network.request(w.client_id, ip, "GET", "/index", {})
        w.notes["post_mutation_index_status"] = read.status
        # the flipped byte persists on disk, so the relaunch must fail
        reboot_node(w, 0)

    return AdversaryScript("runtime-mutation-attempt", after_round=after_round)


@scenario("impersonator-valid-report")
def _impersonator(world: World) -> AdversaryScript:
    # Real provisioned hardware running the genuine image, but the chip is
    # not on the fleet allowlist; it must not obtain the shared key.
    def setup(w: World):
        chip = ChipState.generate(tcb_version=1, rand=w.rand)
        w.kds.provision_chip(chip.chip_id, chip.tcb_version, chip.vcek.public)
        ip = "10.0.9.99"
        config = NodeConfig(
            chip=chip,
            boot=w.provisioned.boot,
            rootfs=w.provisioned.rootfs,
            expected_root_hash=w.provisioned.root_hash,
            ip=ip,
            domain=w.domain,
            expected_measurements=frozenset({w.provisioned.measurement}),
            approved_chips=frozenset(w.sp.approved_chips),
            kds=w.kds,
        )
        imposter = Node(config, {}, w.rand)
        w.extra_nodes.append(imposter)
        w.sp.fleet.append(ip)  # rogue address announced into the fleet inventory
        w.client_targets = [n.config.ip for n in w.nodes]

    def after_round(w: World):
        imposter = w.extra_nodes[0]
        leader_ip = w.notes.get("round_leader")
        cert = w.notes.get("round_certificate")
        if leader_ip and cert is not None and imposter.phase is NodePhase.SERVING:
            # sniffed the public certificate off the wire; now asks for the key
            imposter.pending_cert = cert
            imposter.leader_ip = leader_ip
            imposter.acquire_shared_key()

    return AdversaryScript("impersonator-valid-report", setup=setup, after_round=after_round)


@scenario("cert-redirect-mitm")
def _cert_redirect(world: World) -> AdversaryScript:
    victim_ip = world.nodes[0].config.ip
    mitm_keys = crypto.KeyPair.generate(world.rand)

    def setup(w: World):
        def mitm_handler(method: str, path: str, body: dict, src: str) -> Response:
            # Proxies the genuine node but terminates the connection itself
            # with its freshly issued (CA-valid) certificate key.
            upstream = w.network.request("mitm", victim_ip, method, path, body)
            return Response(upstream.status, upstream.body, mitm_keys.public)

        w.network.register("mitm", mitm_handler)

    rules = [
        Rule(
            name="redirect-client-to-mitm",
            matches=lambda m: m["kind"] == "request"
            and m["src"] == world.client_id
            and m["dst"] == victim_ip,
            action="redirect",
            target="mitm",
        )
    ]
    return AdversaryScript("cert-redirect-mitm", rules=rules, setup=setup)


@scenario("rollback")
def _rollback(world: World) -> AdversaryScript:
    # Node 0 is launched from the previous (revoked) image release.
    def setup(w: World):
        old_manifest = _edit_manifest(
            w.sources.manifest, "bin/service", b"#!/bin/service v0 (CVE-2023-XXXX)\n"
        )
        old = provision(replace(w.sources, manifest=old_manifest))
        cfg = w.nodes[0].config
        cfg.boot = old.boot
        cfg.rootfs = old.rootfs
        cfg.expected_root_hash = old.root_hash
        w.sp.revoke_measurement(old.measurement)
        w.registry.add_revoked(w.domain, old.measurement)

    return AdversaryScript("rollback", setup=setup)


@scenario("wrong-measurement-leader")
def _wrong_measurement_leader(world: World) -> AdversaryScript:
    # Key requests are redirected to an attacker VM with a real chip but a
    # tampered image; mutual attestation must make requesters discard it.
    evil_id = "evil-leader"

    def setup(w: World):
        chip = ChipState.generate(tcb_version=1, rand=w.rand)
        w.kds.provision_chip(chip.chip_id, chip.tcb_version, chip.vcek.public)
        manifest = _edit_manifest(w.sources.manifest, "bin/service", b"#!/bin/service SPY\n")
        tampered = provision(replace(w.sources, manifest=manifest))
        evil_keys = crypto.KeyPair.generate(w.rand)
        evil_report = issue_report(
            chip, tampered.measurement, crypto.pad_report_data(crypto.hash256(evil_keys.public))
        )

        def evil_handler(method: str, path: str, body: dict, src: str) -> Response:
            if method == "POST" and path == "/key-request":
                requester_pub = bytes.fromhex(body["public_key"])
                encrypted = crypto.encrypt_to(requester_pub, evil_keys.private, w.rand)
                return Response(
                    200,
                    {
                        "report": evil_report.to_json_dict(),
                        "encrypted_private_key": encrypted.hex(),
                    },
                    None,
                )
            return Response(404, {"error": "not_found"}, None)

        w.network.register(evil_id, evil_handler)

    rules = [
        Rule(
            name="redirect-key-requests",
            matches=lambda m: m["kind"] == "request"
            and m["path"] == "/key-request"
            and m["dst"] != evil_id,
            action="redirect",
            target=evil_id,
        )
    ]
    return AdversaryScript("wrong-measurement-leader", rules=rules, setup=setup)


SCENARIO_NAMES = [name for name in SCENARIOS if name != "none"]


# --- runner -----------------------------------------------------------------


@dataclass
class ScenarioReport:
    scenario: str
    seed: int
    n_nodes: int
    boots: dict
    reboots: list
    round: dict | None
    client_verdicts: dict
    node_events: dict
    violations: list
    assertions: dict
    notes: dict
    transcript: list

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "n_nodes": self.n_nodes,
            "boots": self.boots,
            "reboots": self.reboots,
            "round": self.round,
            "client_verdicts": self.client_verdicts,
            "node_events": self.node_events,
            "violations": self.violations,
            "assertions": self.assertions,
            "notes": self.notes,
            "transcript": self.transcript,
        }


def _client_phase(world: World) -> dict:
    verdicts: dict[str, list] = {}
    targets = world.client_targets or [n.config.ip for n in world.nodes]
    for ip in targets:
        entries: list[dict] = []
        try:
            resp = world.network.request(world.client_id, ip, "GET", WELL_KNOWN_PATH, {})
        except UnreachableError:
            verdicts[ip] = [{"status": "Unreachable", "details": "no route to node"}]
            continue
        if resp.status != 200:
            verdicts[ip] = [{"status": "Unreachable", "details": f"http {resp.status}"}]
            continue
        try:
            verdict = attest_domain(
                world.registry, world.domain, resp.body, resp.conn_key, world.kds
            )
        except UsageError as e:
            # mangled bundle on the wire: not trustable, surfaced as such
            verdicts[ip] = [{"status": "MalformedBundle", "details": str(e)}]
            continue
        entries.append(verdict.to_json_dict())
        if verdict.trusted:
            session = open_session(
                world.domain, verdict, bytes.fromhex(resp.body["tls_public_key"])
            )
            for _ in range(2):
                follow = world.network.request(world.client_id, ip, "GET", "/index", {})
                entries.append(monitor_request(session, follow.conn_key).to_json_dict())
        verdicts[ip] = entries
    return verdicts


def _collect_violations(
    boots: dict, reboots: list, round_outcome: RoundOutcome | None,
    node_events: dict, client_verdicts: dict,
) -> list:
    violations = []
    for ip, state in boots.items():
        if state["phase"] == NodePhase.FAILED.value:
            violations.append({"kind": "boot_failure", "node": ip, "reason": state["failure_reason"]})
    for entry in reboots:
        if entry["phase"] == NodePhase.FAILED.value:
            violations.append({"kind": "boot_failure", "node": entry["node"], "reason": entry["failure_reason"]})
    if round_outcome is not None:
        for addr, verdict in round_outcome.verdicts.items():
            if not verdict.accepted and not verdict.inconclusive:
                violations.append({"kind": "sp_reject", "node": addr, "reason": verdict.reason})
    for ip, events in node_events.items():
        for event in events:
            if event["event"] == "integrity_error":
                violations.append({"kind": "integrity_error", "node": ip, "level": event["level"]})
            elif event["event"] in ("key_request", "leader_verdict") and not event["accepted"]:
                kind = "key_request_reject" if event["event"] == "key_request" else "leader_reject"
                violations.append({"kind": kind, "node": ip, "reason": event["reason"]})
            elif event["event"] in ("key_install_failed", "key_request_failed"):
                violations.append({"kind": event["event"], "node": ip, "reason": event["reason"]})
    for ip, entries in client_verdicts.items():
        for entry in entries:
            if entry["status"] not in ("Trusted", "Unreachable"):
                violations.append({"kind": "client_verdict", "node": ip, "status": entry["status"]})
    return violations


def run_scenario(name: str, seed: int, n_nodes: int = 3) -> ScenarioReport:
    report, _ = run_scenario_world(name, seed, n_nodes)
    return report


def run_scenario_world(name: str, seed: int, n_nodes: int = 3) -> tuple[ScenarioReport, World]:
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r} (have: {', '.join(sorted(SCENARIOS))})")
    world = build_world(seed, n_nodes)
    adversary = SCENARIOS[name](world)
    world.network.adversary = adversary
    if adversary.setup is not None:
        adversary.setup(world)

    all_nodes = world.nodes + world.extra_nodes
    pre_roots = {n.config.ip: crypto.hash256(n.config.rootfs.data) for n in all_nodes}

    boots = {}
    for node in all_nodes:
        bring_up(world, node)
        boots[node.config.ip] = {
            "phase": node.phase.value,
            "failure_reason": node.failure_reason,
            "failure_detail": node.failure_detail,
        }

    round_outcome = None
    if any(n.phase is NodePhase.SERVING for n in world.nodes):
        round_outcome = run_certificate_round(world.sp, world.network)
        if round_outcome.success:
            world.notes["round_leader"] = round_outcome.leader
            world.notes["round_certificate"] = round_outcome.certificate

    if adversary.after_round is not None:
        adversary.after_round(world)

    client_verdicts = _client_phase(world)

    current_nodes = world.nodes + world.extra_nodes
    node_events = {
        n.config.ip: world.archived_events.get(n.config.ip, []) + list(n.events)
        for n in current_nodes
    }
    violations = _collect_violations(boots, world.reboots, round_outcome, node_events, client_verdicts)

    # Transcript-level assertions: neither private keys nor sealing keys
    # ever travel in the clear (sealing stays on the in-process trusted
    # path), serving nodes agree on one identity, nodes never write.
    seeds = {n.identity.tls_keypair.private for n in current_nodes if n.identity is not None}
    seeds |= {n.shared_identity.private for n in current_nodes if n.shared_identity is not None}
    seeds |= {
        derive_sealing_key(n.config.chip, n.measurement)
        for n in current_nodes
        if n.measurement is not None
    }
    key_secrecy_ok = not any(world.network.payload_contains(seed) for seed in seeds)

    installed = [n for n in world.nodes if n.installed_cert is not None]
    serving_consistent = (
        len({n.installed_cert.to_bytes() for n in installed}) <= 1
        and len({n.active_tls_public() for n in installed}) <= 1
    )
    rootfs_changed = sorted(
        n.config.ip
        for n in current_nodes
        if crypto.hash256(n.config.rootfs.data) != pre_roots.get(n.config.ip, b"")
    )

    world.notes.pop("round_certificate", None)  # not JSON-serializable
    report = ScenarioReport(
        scenario=name,
        seed=seed,
        n_nodes=n_nodes,
        boots=boots,
        reboots=world.reboots,
        round=round_outcome.to_json_dict() if round_outcome else None,
        client_verdicts=client_verdicts,
        node_events=node_events,
        violations=violations,
        assertions={
            "key_secrecy_ok": key_secrecy_ok,
            "serving_consistent": serving_consistent,
            "certificates_installed": len(installed),
            "rootfs_changed": rootfs_changed,
        },
        notes=world.notes,
        transcript=[m.to_json_dict() for m in world.network.transcript],
    )
    return report, world
