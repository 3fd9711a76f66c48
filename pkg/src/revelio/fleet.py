"""Fleet certificate protocol: bundle validation, CA, orchestration round.

One round, run from the isolated service-provider machine: collect a
report+CSR bundle from every fleet node, validate each against the root
of trust and the planted allowlists, pick the accepted node with the
smallest chip id as leader, have the CA issue one certificate for the
leader's key, and push it to every accepted node. Nodes then pull the
private key from the leader themselves (mutual attestation happens on
that path, node side).
"""

from __future__ import annotations

import enum
import logging
import secrets
from dataclasses import dataclass, field
from typing import Callable

from . import crypto
from .certs import Certificate, issue_certificate, parse_csr, self_signed, validate_chain
from .encoding import EncodingError
from .kds import KdsUnreachable, NotProvisioned, VcekSource
from .security_processor import AttestationReport, verify_report
from .wire import Transport, UnreachableError

logger = logging.getLogger(__name__)

DEFAULT_RATE_LIMIT = 5
DEFAULT_RATE_WINDOW = 7 * 86400
DEFAULT_CERT_VALIDITY = 90 * 86400


class PayloadKind(enum.Enum):
    CSR = "csr"
    PUBLIC_KEY = "public_key"
    ENCRYPTED_PRIVATE_KEY = "encrypted_private_key"


@dataclass(frozen=True)
class ReportBundle:
    report: AttestationReport
    payload: bytes
    payload_kind: PayloadKind


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str | None = None
    inconclusive: bool = False

    @classmethod
    def accept(cls) -> "Verdict":
        return cls(True)

    @classmethod
    def reject(cls, reason: str) -> "Verdict":
        return cls(False, reason)

    @classmethod
    def retry(cls, reason: str) -> "Verdict":
        return cls(False, reason, inconclusive=True)

    def to_json_dict(self) -> dict:
        return {"accepted": self.accepted, "reason": self.reason, "inconclusive": self.inconclusive}


def validate_report_bundle(
    kds: VcekSource,
    report: AttestationReport,
    payload: bytes,
    *,
    expected_measurements,
    revoked_measurements=frozenset(),
    approved_chips=None,
    claimed_ip: str | None = None,
    approved_ips=None,
) -> Verdict:
    """Full evidence check, in fixed order; first failing check names the verdict.

    Order: certificate chain, report signature, measurement allow/deny,
    payload-hash binding, chip allowlist, source-IP allowlist. The chip and
    IP checks exist so that even an authentic report from real hardware
    cannot pull a key from outside the fleet.
    """
    try:
        chain = kds.fetch_vcek(report.chip_id, report.tcb_version)
    except NotProvisioned:
        return Verdict.reject("chain")
    except KdsUnreachable:
        return Verdict.retry("kds_unreachable")
    if not validate_chain(chain, report.chip_id, report.tcb_version):
        return Verdict.reject("chain")
    if not verify_report(report, chain.vcek.subject_public_key):
        return Verdict.reject("signature")
    if report.measurement in revoked_measurements or report.measurement not in expected_measurements:
        return Verdict.reject("measurement")
    if crypto.pad_report_data(crypto.hash256(payload)) != report.report_data:
        return Verdict.reject("binding")
    if approved_chips is not None and report.chip_id not in approved_chips:
        return Verdict.reject("chip_id")
    if approved_ips is not None and claimed_ip not in approved_ips:
        return Verdict.reject("ip")
    return Verdict.accept()


class RateLimited(Exception):
    """Per-domain issuance cap hit inside the sliding window."""


@dataclass
class IssuedCertificate:
    domain: str
    public_key: bytes
    serial: int
    issued_at: float


class SimulatedCA:
    """Certificate authority with per-domain rate limiting over a sliding window."""

    def __init__(
        self,
        clock: Callable[[], float],
        rand: crypto.RandBytes = secrets.token_bytes,
        rate_limit: int = DEFAULT_RATE_LIMIT,
        rate_window: float = DEFAULT_RATE_WINDOW,
        validity: float = DEFAULT_CERT_VALIDITY,
        name: str = "SIM-CA",
    ):
        self.clock = clock
        self.name = name
        self.rate_limit = rate_limit
        self.rate_window = rate_window
        self.validity = validity
        self.root_keypair = crypto.KeyPair.generate(rand)
        self.root_certificate = self_signed(name, self.root_keypair)
        self.issued: list[IssuedCertificate] = []

    def issue(self, domain: str, public_key: bytes) -> Certificate:
        now = self.clock()
        recent = [c for c in self.issued if c.domain == domain and c.issued_at > now - self.rate_window]
        if len(recent) >= self.rate_limit:
            raise RateLimited(f"{domain}: {len(recent)} certificates inside the window")
        serial = len(self.issued) + 1
        cert = issue_certificate(
            subject=domain,
            subject_public_key=public_key,
            issuer=self.name,
            issuer_keypair=self.root_keypair,
            extensions={"serial": str(serial)},
            not_before=int(now),
            not_after=int(now + self.validity),
        )
        self.issued.append(IssuedCertificate(domain, public_key, serial, now))
        return cert


@dataclass
class SpNode:
    """State of the service provider's isolated orchestration machine."""

    approved_chips: set | None  # None skips the chip allowlist check
    approved_ips: set
    expected_measurements: set
    ca: SimulatedCA
    kds: VcekSource
    fleet: list
    domain: str
    revoked_measurements: set = field(default_factory=set)
    address: str = "sp"

    def revoke_measurement(self, measurement: bytes) -> None:
        self.expected_measurements.discard(measurement)
        self.revoked_measurements.add(measurement)

    def validate_bundle(self, bundle: ReportBundle, claimed_ip: str) -> Verdict:
        return validate_report_bundle(
            self.kds,
            bundle.report,
            bundle.payload,
            expected_measurements=self.expected_measurements,
            revoked_measurements=self.revoked_measurements,
            approved_chips=self.approved_chips,
            claimed_ip=claimed_ip,
            approved_ips=self.approved_ips,
        )


@dataclass
class RoundOutcome:
    success: bool
    failure: str | None
    verdicts: dict
    leader: str | None = None
    certificate: Certificate | None = None
    certificate_serial: int | None = None
    installs: list = field(default_factory=list)
    validations: int = 0

    def to_json_dict(self) -> dict:
        return {
            "success": self.success,
            "failure": self.failure,
            "verdicts": {addr: v.to_json_dict() for addr, v in self.verdicts.items()},
            "leader": self.leader,
            "certificate_serial": self.certificate_serial,
            "installs": list(self.installs),
            "validations": self.validations,
        }


def run_certificate_round(sp: SpNode, transport: Transport) -> RoundOutcome:
    """Fig-style round: attest fleet, pick leader, issue once, install."""
    verdicts: dict[str, Verdict] = {}
    bundles: dict[str, tuple[AttestationReport, bytes, bytes]] = {}
    validations = 0

    for addr in sp.fleet:
        try:
            resp = transport.request(sp.address, addr, "POST", "/csr-bundle", {})
        except UnreachableError:
            verdicts[addr] = Verdict.retry("unreachable")
            continue
        if resp.status != 200:
            verdicts[addr] = Verdict.retry(f"http_{resp.status}")
            continue
        try:
            report = AttestationReport.from_json_dict(resp.body["report"])
            csr = bytes.fromhex(resp.body["csr"])
            csr_domain, csr_public = parse_csr(csr)
        except (KeyError, ValueError, EncodingError):
            verdicts[addr] = Verdict.reject("binding")
            validations += 1
            continue
        validations += 1
        verdict = sp.validate_bundle(ReportBundle(report, csr, PayloadKind.CSR), claimed_ip=addr)
        if verdict.accepted and csr_domain != sp.domain:
            verdict = Verdict.reject("binding")
        verdicts[addr] = verdict
        if verdict.accepted:
            bundles[addr] = (report, csr, csr_public)

    accepted = [addr for addr in sp.fleet if addr in bundles]
    if not accepted:
        return RoundOutcome(False, "no_accepted", verdicts, validations=validations)

    leader = min(accepted, key=lambda addr: bundles[addr][0].chip_id)
    leader_public = bundles[leader][2]
    try:
        certificate = sp.ca.issue(sp.domain, leader_public)
    except RateLimited:
        logger.warning("round failed: CA rate limit for %s", sp.domain)
        return RoundOutcome(False, "rate_limit", verdicts, leader=leader, validations=validations)

    # Leader first, so it holds the certificate before key requests arrive.
    installs = []
    cert_hex = certificate.to_bytes().hex()
    for addr in [leader] + [a for a in accepted if a != leader]:
        try:
            resp = transport.request(
                sp.address, addr, "POST", "/install-cert",
                {"certificate": cert_hex, "leader_ip": leader},
            )
        except UnreachableError:
            continue
        if resp.status == 200:
            installs.append(addr)

    serial = int(certificate.extensions["serial"])
    return RoundOutcome(
        True, None, verdicts,
        leader=leader,
        certificate=certificate,
        certificate_serial=serial,
        installs=installs,
        validations=validations,
    )
