"""End-user verification pipeline and the trusted registry.

The pipeline runs in a fixed order so the cheap local checks can never
mask a chain failure in what gets reported: chain, report signature,
measurement against the registry, then the two-sided binding (report
data binds the served key, and the live connection uses that same key).
Trusted is returned only when every stage passed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum

from . import crypto
from .certs import validate_chain
from .encoding import EncodingError
from .kds import NotProvisioned, VcekSource
from .provisioning import ImageSources, provision
from .security_processor import AttestationReport, verify_report


class UsageError(Exception):
    """The verifier was driven outside its contract (unknown domain, no session)."""


class VerdictStatus(Enum):
    TRUSTED = "Trusted"
    CHAIN_ERROR = "ChainError"
    SIGNATURE_ERROR = "SignatureError"
    MEASUREMENT_MISMATCH = "MeasurementMismatch"
    REVOKED_MEASUREMENT = "RevokedMeasurement"
    BINDING_MISMATCH = "BindingMismatch"
    CONNECTION_RESET = "ConnectionReset"


@dataclass(frozen=True)
class AttestationVerdict:
    status: VerdictStatus
    details: str = ""

    @property
    def trusted(self) -> bool:
        return self.status is VerdictStatus.TRUSTED

    def to_json_dict(self) -> dict:
        return {"status": self.status.value, "details": self.details}


@dataclass
class RegistryEntry:
    accepted_measurements: set = field(default_factory=set)
    revoked_measurements: set = field(default_factory=set)
    pinned_tls_public_key: bytes | None = None


class TrustedRegistry:
    """Domain -> accepted/revoked measurements (+ optional pinned key)."""

    def __init__(self):
        self.entries: dict[str, RegistryEntry] = {}

    def entry(self, domain: str) -> RegistryEntry:
        return self.entries.setdefault(domain, RegistryEntry())

    def add_accepted(self, domain: str, measurement: bytes) -> None:
        e = self.entry(domain)
        if measurement in e.revoked_measurements:
            raise ValueError("measurement is revoked; accepted and revoked must stay disjoint")
        e.accepted_measurements.add(measurement)

    def add_revoked(self, domain: str, measurement: bytes) -> None:
        e = self.entry(domain)
        e.accepted_measurements.discard(measurement)
        e.revoked_measurements.add(measurement)

    def set_pinned_key(self, domain: str, key: bytes | None) -> None:
        self.entry(domain).pinned_tls_public_key = key

    # -- file formats -------------------------------------------------------

    def to_text(self) -> str:
        lines = ["# revelio trusted registry", "# <domain> <hex> accepted|revoked|pinned"]
        for domain in sorted(self.entries):
            e = self.entries[domain]
            for m in sorted(e.accepted_measurements):
                lines.append(f"{domain} {m.hex()} accepted")
            for m in sorted(e.revoked_measurements):
                lines.append(f"{domain} {m.hex()} revoked")
            if e.pinned_tls_public_key is not None:
                lines.append(f"{domain} {e.pinned_tls_public_key.hex()} pinned")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrustedRegistry":
        reg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"registry line {lineno}: expected 3 fields")
            domain, value_hex, flag = parts
            value = bytes.fromhex(value_hex)
            if flag == "accepted":
                reg.add_accepted(domain, value)
            elif flag == "revoked":
                reg.add_revoked(domain, value)
            elif flag == "pinned":
                reg.set_pinned_key(domain, value)
            else:
                raise ValueError(f"registry line {lineno}: unknown flag {flag!r}")
        return reg

    def to_json_obj(self) -> dict:
        return {
            "domains": {
                domain: {
                    "accepted": sorted(m.hex() for m in e.accepted_measurements),
                    "revoked": sorted(m.hex() for m in e.revoked_measurements),
                    "pinned_tls_public_key": (
                        e.pinned_tls_public_key.hex() if e.pinned_tls_public_key else None
                    ),
                }
                for domain, e in sorted(self.entries.items())
            }
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TrustedRegistry":
        reg = cls()
        for domain, doc in obj.get("domains", {}).items():
            for m in doc.get("accepted", []):
                reg.add_accepted(domain, bytes.fromhex(m))
            for m in doc.get("revoked", []):
                reg.add_revoked(domain, bytes.fromhex(m))
            pinned = doc.get("pinned_tls_public_key")
            if pinned:
                reg.set_pinned_key(domain, bytes.fromhex(pinned))
        return reg

    def save(self, path: str) -> None:
        if path.endswith(".json"):
            content = json.dumps(self.to_json_obj(), indent=2, sort_keys=True) + "\n"
        else:
            content = self.to_text()
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(content)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "TrustedRegistry":
        with open(path, "r", encoding="utf-8") as f:
            content = f.read()
        if path.endswith(".json"):
            return cls.from_json_obj(json.loads(content))
        return cls.from_text(content)


def _as_report(report) -> AttestationReport:
    if isinstance(report, AttestationReport):
        return report
    return AttestationReport.from_json_dict(report)


def _as_bytes(value) -> bytes:
    if isinstance(value, bytes):
        return value
    return bytes.fromhex(value)


def attest_domain(
    registry: TrustedRegistry,
    domain: str,
    fetched: dict,
    connection_public_key: bytes | None,
    kds: VcekSource,
) -> AttestationVerdict:
    """Run the four-stage pipeline over a fetched report bundle.

    ``fetched`` is the well-known endpoint's JSON body ({"report": ...,
    "tls_public_key": hex}); ``connection_public_key`` is the key the
    live connection presented (the simulation's connection-key header).
    """
    if domain not in registry.entries:
        raise UsageError(f"domain {domain!r} is not registered")
    entry = registry.entries[domain]
    try:
        report = _as_report(fetched["report"])
        tls_public_key = _as_bytes(fetched["tls_public_key"])
    except (KeyError, ValueError) as e:
        raise UsageError(f"malformed attestation bundle: {e}") from e

    # Stage 1: certificate chain from the key distribution server.
    try:
        chain = kds.fetch_vcek(report.chip_id, report.tcb_version)
    except NotProvisioned:
        return AttestationVerdict(VerdictStatus.CHAIN_ERROR, "no chain for chip")
    except EncodingError:
        return AttestationVerdict(VerdictStatus.CHAIN_ERROR, "chain does not parse")
    if not validate_chain(chain, report.chip_id, report.tcb_version):
        return AttestationVerdict(VerdictStatus.CHAIN_ERROR, "chain does not validate")

    # Stage 2: report signature under the chip key.
    if not verify_report(report, chain.vcek.subject_public_key):
        return AttestationVerdict(VerdictStatus.SIGNATURE_ERROR, "report signature invalid")

    # Stage 3: measurement against the registry.
    if report.measurement in entry.revoked_measurements:
        return AttestationVerdict(VerdictStatus.REVOKED_MEASUREMENT, "measurement revoked")
    if report.measurement not in entry.accepted_measurements:
        return AttestationVerdict(VerdictStatus.MEASUREMENT_MISMATCH, "measurement not accepted")

    # Stage 4: the report must bind the served key, and the connection
    # must actually use it.
    if crypto.pad_report_data(crypto.hash256(tls_public_key)) != report.report_data:
        return AttestationVerdict(VerdictStatus.BINDING_MISMATCH, "report does not bind served key")
    if connection_public_key != tls_public_key:
        return AttestationVerdict(VerdictStatus.BINDING_MISMATCH, "connection key differs")

    return AttestationVerdict(VerdictStatus.TRUSTED)


@dataclass
class AttestationSession:
    """A domain session opened after a Trusted verdict."""

    domain: str
    attested_key: bytes | None = None

    @property
    def trusted(self) -> bool:
        return self.attested_key is not None


def open_session(domain: str, verdict: AttestationVerdict, tls_public_key: bytes) -> AttestationSession:
    if verdict.trusted:
        return AttestationSession(domain, tls_public_key)
    return AttestationSession(domain, None)


def monitor_request(session: AttestationSession, connection_public_key: bytes | None) -> AttestationVerdict:
    """Per-request continuity check against the session's attested key."""
    if session is None or not session.trusted:
        raise UsageError("session was never attested")
    if connection_public_key == session.attested_key:
        return AttestationVerdict(VerdictStatus.TRUSTED)
    return AttestationVerdict(VerdictStatus.CONNECTION_RESET, "connection key changed")


def recompute_expected_measurement(sources: ImageSources) -> bytes:
    """Rebuild image, integrity metadata and boot state from sources.

    Same pipeline provisioning uses, so the result equals a deployed
    node's reported measurement exactly when the sources match.
    """
    return provision(sources).measurement
