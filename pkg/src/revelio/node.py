"""The simulated fleet VM: measured boot, sealed identity, protocol endpoints.

Boot pipeline: firmware-side component verification, launch measurement,
rootfs root check against the hash carried in the kernel command line.
Any mismatch parks the node in the terminal Failed phase.

First boot mints the VM identity (keypair, CSR, the two bound reports)
and seals it under the measurement-derived key; a reboot in the identical
state restores it, a reboot in any other state silently gets a fresh one
because the old volume no longer unseals.

The endpoint table is static and compiled in: there is no management
surface, and nothing reachable over the wire mutates the rootfs or the
identity (the one-time certificate installation transitions serving
state only).
"""

from __future__ import annotations

import enum
import json
import logging
import secrets
from dataclasses import dataclass

from . import crypto
from .boot import BootBundle, ovmf_verify
from .certs import Certificate, build_csr
from .encoding import EncodingError
from .fleet import validate_report_bundle
from .integrity import (
    IntegrityError,
    MerkleDevice,
    SealedVolume,
    build_merkle,
    seal_volume,
    unseal_volume,
    verified_read,
)
from .kds import VcekSource
from .security_processor import (
    AttestationReport,
    ChipState,
    derive_sealing_key,
    issue_report,
)
from .wire import Response, Transport, UnreachableError

logger = logging.getLogger(__name__)

WELL_KNOWN_PATH = "/.well-known/revelio-attestation"
PROTOCOL_ENDPOINTS = frozenset(
    {WELL_KNOWN_PATH, "/csr-bundle", "/install-cert", "/key-request", "/index"}
)
IDENTITY_VOLUME = "identity.sealed"


class NodePhase(enum.Enum):
    POWERED_OFF = "PoweredOff"
    MEASURED = "Measured"
    ROOTFS_VERIFIED = "RootfsVerified"
    IDENTIFIED = "Identified"
    SERVING = "Serving"
    FAILED = "Failed"


_PHASE_ORDER = [
    NodePhase.POWERED_OFF,
    NodePhase.MEASURED,
    NodePhase.ROOTFS_VERIFIED,
    NodePhase.IDENTIFIED,
    NodePhase.SERVING,
]


@dataclass
class NodeConfig:
    chip: ChipState
    boot: BootBundle
    rootfs: MerkleDevice
    expected_root_hash: bytes
    ip: str
    domain: str
    allow_inbound: frozenset = PROTOCOL_ENDPOINTS
    # Trust anchors planted into the image at build time; used when this
    # node validates the leader (or, as leader, the requesters).
    expected_measurements: frozenset = frozenset()
    approved_chips: frozenset = frozenset()
    kds: VcekSource | None = None

    def __post_init__(self):
        if self.expected_root_hash.hex() not in self.boot.cmdline:
            raise ValueError("expected root hash does not appear in the kernel cmdline")
        if not self.allow_inbound <= PROTOCOL_ENDPOINTS:
            raise ValueError("allow_inbound contains a non-protocol endpoint")


@dataclass(frozen=True)
class NodeIdentity:
    tls_keypair: crypto.KeyPair
    csr: bytes
    report_pubkey: AttestationReport
    report_csr: AttestationReport


class Node:
    """One fleet VM. Persistent state survives reboots via ``persistent``."""

    def __init__(self, config: NodeConfig, persistent: dict | None = None,
                 rand: crypto.RandBytes = secrets.token_bytes):
        self.config = config
        self.persistent = persistent if persistent is not None else {}
        self._rand = rand
        self.phase = NodePhase.POWERED_OFF
        self.failure_reason: str | None = None
        self.failure_detail: str | None = None
        self.measurement: bytes | None = None
        self.identity: NodeIdentity | None = None
        self.pending_cert: Certificate | None = None
        self.leader_ip: str | None = None
        self.installed_cert: Certificate | None = None
        self.shared_identity: crypto.KeyPair | None = None
        self.serving_report: AttestationReport | None = None
        self.events: list[dict] = []
        self._transport: Transport | None = None

    # -- lifecycle ---------------------------------------------------------

    def _advance(self, phase: NodePhase) -> None:
        assert _PHASE_ORDER.index(phase) > _PHASE_ORDER.index(self.phase)
        self.phase = phase

    def _fail(self, reason: str, detail: str | None = None) -> None:
        logger.info("node %s failed at %s (%s)", self.config.ip, reason, detail)
        self.phase = NodePhase.FAILED
        self.failure_reason = reason
        self.failure_detail = detail

    def boot(self) -> NodePhase:
        if self.phase != NodePhase.POWERED_OFF:
            raise RuntimeError(f"boot from phase {self.phase}")
        decision = ovmf_verify(self.config.boot)
        if not decision.proceed:
            self._fail("ovmf", decision.failed_component)
            return self.phase
        self.measurement = self.config.boot.launch_measurement()
        self._advance(NodePhase.MEASURED)

        recomputed = build_merkle(self.config.rootfs.data, salt=self.config.rootfs.salt).root
        if recomputed != self.config.expected_root_hash:
            self._fail("rootfs")
            return self.phase
        self._advance(NodePhase.ROOTFS_VERIFIED)
        return self.phase

    def establish_identity(self) -> NodePhase:
        if self.phase != NodePhase.ROOTFS_VERIFIED:
            raise RuntimeError(f"identity setup from phase {self.phase}")
        assert self.measurement is not None
        sealing_key = derive_sealing_key(self.config.chip, self.measurement)

        identity = None
        stored = self.persistent.get(IDENTITY_VOLUME)
        if stored is not None:
            try:
                blob = unseal_volume(SealedVolume.from_bytes(stored), sealing_key)
                identity = self._restore_identity(blob)
            except (crypto.AuthError, EncodingError, ValueError):
                identity = None  # sealed by a different state; start over
        if identity is None:
            identity = self._create_identity()
            try:
                payload = json.dumps(
                    {"seed": identity.tls_keypair.private.hex(), "csr": identity.csr.hex()}
                ).encode("ascii")
                volume = seal_volume(payload, sealing_key, self._rand)
            except ValueError:
                self._fail("seal")
                return self.phase
            self.persistent[IDENTITY_VOLUME] = volume.to_bytes()

        self.identity = identity
        self._advance(NodePhase.IDENTIFIED)
        return self.phase

    def _issue_bound_report(self, payload: bytes) -> AttestationReport:
        return issue_report(
            self.config.chip, self.measurement, crypto.pad_report_data(crypto.hash256(payload))
        )

    def _create_identity(self) -> NodeIdentity:
        keypair = crypto.KeyPair.generate(self._rand)
        csr = build_csr(self.config.domain, keypair)
        return NodeIdentity(
            tls_keypair=keypair,
            csr=csr,
            report_pubkey=self._issue_bound_report(keypair.public),
            report_csr=self._issue_bound_report(csr),
        )

    def _restore_identity(self, blob: bytes) -> NodeIdentity:
        doc = json.loads(blob.decode("ascii"))
        keypair = crypto.KeyPair.from_seed(bytes.fromhex(doc["seed"]))
        csr = bytes.fromhex(doc["csr"])
        return NodeIdentity(
            tls_keypair=keypair,
            csr=csr,
            report_pubkey=self._issue_bound_report(keypair.public),
            report_csr=self._issue_bound_report(csr),
        )

    def serve(self) -> "Node":
        if self.phase == NodePhase.SERVING:
            return self
        if self.phase != NodePhase.IDENTIFIED:
            raise RuntimeError(f"serve from phase {self.phase}")
        self._advance(NodePhase.SERVING)
        return self

    def attach_transport(self, transport: Transport) -> None:
        self._transport = transport

    # -- serving state -----------------------------------------------------

    def active_tls_public(self) -> bytes | None:
        """Connection key once the shared TLS identity is live, else None."""
        if self.shared_identity is not None:
            return self.shared_identity.public
        return None

    def served_report(self) -> AttestationReport:
        if self.serving_report is not None:
            return self.serving_report
        assert self.identity is not None
        return self.identity.report_pubkey

    def served_key(self) -> bytes:
        if self.shared_identity is not None:
            return self.shared_identity.public
        assert self.identity is not None
        return self.identity.tls_keypair.public

    # -- endpoints ---------------------------------------------------------

    def handle_request(self, method: str, path: str, body: dict, src: str | None = None) -> Response:
        conn_key = self.active_tls_public()
        if self.phase != NodePhase.SERVING:
            return Response(503, {"error": "not_serving"}, conn_key)
        if path not in self.config.allow_inbound:
            return Response(404, {"error": "not_found"}, conn_key)

        if method == "GET" and path == WELL_KNOWN_PATH:
            status, doc = self._get_well_known()
        elif method == "POST" and path == "/csr-bundle":
            status, doc = self._post_csr_bundle()
        elif method == "POST" and path == "/install-cert":
            status, doc = self._post_install_cert(body)
        elif method == "POST" and path == "/key-request":
            status, doc = self._post_key_request(body)
        elif method == "GET" and path == "/index":
            status, doc = self._get_index()
        else:
            return Response(404, {"error": "not_found"}, conn_key)
        return Response(status, doc, self.active_tls_public())

    def _get_well_known(self) -> tuple[int, dict]:
        return 200, {
            "report": self.served_report().to_json_dict(),
            "tls_public_key": self.served_key().hex(),
        }

    def _post_csr_bundle(self) -> tuple[int, dict]:
        assert self.identity is not None
        return 200, {
            "report": self.identity.report_csr.to_json_dict(),
            "csr": self.identity.csr.hex(),
        }

    def _post_install_cert(self, body: dict) -> tuple[int, dict]:
        try:
            certificate = Certificate.from_bytes(bytes.fromhex(body["certificate"]))
            leader_ip = str(body["leader_ip"])
        except (KeyError, ValueError, EncodingError):
            return 400, {"error": "bad_request"}
        assert self.identity is not None
        self.pending_cert = certificate
        self.leader_ip = leader_ip
        if certificate.subject_public_key == self.identity.tls_keypair.public:
            # This node's own CSR became the certificate: it is the leader.
            self._install(certificate, self.identity.tls_keypair)
            return 200, {"status": "ok", "installed": True}
        installed = self.acquire_shared_key() if self._transport is not None else False
        return 200, {"status": "ok", "installed": installed}

    def _post_key_request(self, body: dict) -> tuple[int, dict]:
        if self.installed_cert is None or self.shared_identity is None:
            return 403, {"error": "not_leader"}
        if self.shared_identity.public != self.identity.tls_keypair.public:
            return 403, {"error": "not_leader"}
        try:
            report = AttestationReport.from_json_dict(body["report"])
            requester_public = bytes.fromhex(body["public_key"])
        except (KeyError, ValueError, EncodingError):
            return 400, {"error": "bad_request"}
        verdict = validate_report_bundle(
            self.config.kds,
            report,
            requester_public,
            expected_measurements=self.config.expected_measurements,
            approved_chips=self.config.approved_chips,
        )
        self.events.append(
            {"event": "key_request", "accepted": verdict.accepted, "reason": verdict.reason}
        )
        if not verdict.accepted:
            return 403, {"error": verdict.reason or "rejected"}
        try:
            encrypted = crypto.encrypt_to(
                requester_public, self.shared_identity.private, self._rand
            )
        except crypto.MalformedKeyError:
            return 403, {"error": "binding"}
        return 200, {
            "report": self.served_report().to_json_dict(),
            "encrypted_private_key": encrypted.hex(),
        }

    def _get_index(self) -> tuple[int, dict]:
        try:
            content = verified_read(self.config.rootfs, 0)
        except IntegrityError as e:
            self.events.append({"event": "integrity_error", "level": e.level, "block": e.block_index})
            return 500, {"error": "integrity", "level": e.level}
        return 200, {
            "page": "<html><body>revelio node up</body></html>",
            "content_digest": crypto.hash256(content).hex(),
        }

    # -- shared-key acquisition (runs inside the install-cert transition) ---

    def _install(self, certificate: Certificate, keypair: crypto.KeyPair) -> None:
        self.installed_cert = certificate
        self.shared_identity = keypair
        self.serving_report = self._issue_bound_report(keypair.public)

    def acquire_shared_key(self) -> bool:
        """Pull the shared private key from the leader, attesting it first."""
        if self._transport is None or self.pending_cert is None or self.leader_ip is None:
            return False
        assert self.identity is not None
        request = {
            "report": self.identity.report_pubkey.to_json_dict(),
            "public_key": self.identity.tls_keypair.public.hex(),
        }
        try:
            resp = self._transport.request(
                self.config.ip, self.leader_ip, "POST", "/key-request", request
            )
        except UnreachableError:
            self.events.append({"event": "key_request_failed", "reason": "unreachable"})
            return False
        if resp.status != 200:
            self.events.append(
                {"event": "key_request_failed", "reason": resp.body.get("error", "refused")}
            )
            return False
        try:
            leader_report = AttestationReport.from_json_dict(resp.body["report"])
            encrypted = bytes.fromhex(resp.body["encrypted_private_key"])
        except (KeyError, ValueError, EncodingError):
            self.events.append({"event": "key_request_failed", "reason": "bad_response"})
            return False

        # Mutual attestation: the leader's report must check out exactly like
        # ours did for the SP, and must bind the certificate's public key.
        verdict = validate_report_bundle(
            self.config.kds,
            leader_report,
            self.pending_cert.subject_public_key,
            expected_measurements=self.config.expected_measurements,
            approved_chips=self.config.approved_chips,
        )
        self.events.append(
            {"event": "leader_verdict", "accepted": verdict.accepted, "reason": verdict.reason}
        )
        if not verdict.accepted:
            return False
        try:
            seed = crypto.decrypt_with(self.identity.tls_keypair.private, encrypted)
            shared = crypto.KeyPair.from_seed(seed)
        except (crypto.AuthError, crypto.MalformedKeyError):
            self.events.append({"event": "key_install_failed", "reason": "decrypt"})
            return False
        if shared.public != self.pending_cert.subject_public_key:
            self.events.append({"event": "key_install_failed", "reason": "cert_key_mismatch"})
            return False
        self._install(self.pending_cert, shared)
        self.events.append({"event": "key_installed"})
        return True
