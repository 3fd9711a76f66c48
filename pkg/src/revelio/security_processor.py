"""Simulated security processor: per-chip secrets, signed reports, sealing.

Canonical report serialization (the exact bytes the chip signs):

    chip_id(64) ‖ tcb_version(u64 BE) ‖ measurement(48) ‖ report_data(64)

The signature is appended, giving a fixed 312-byte wire form. Sealing
keys are an HMAC of the measurement under the chip secret and must never
travel over any simulated network; callers hold them in process only.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass

from . import crypto
from .encoding import ByteReader, EncodingError, u64

CHIP_ID_LEN = 64
REPORT_WIRE_LEN = CHIP_ID_LEN + 8 + crypto.DIGEST384_LEN + crypto.REPORT_DATA_LEN + crypto.SIGNATURE_LEN


class InvalidReportData(ValueError):
    """Report data is not exactly 64 bytes."""


@dataclass(frozen=True)
class ChipState:
    chip_id: bytes
    tcb_version: int
    vcek: crypto.KeyPair
    chip_secret: bytes

    def __post_init__(self):
        if len(self.chip_id) != CHIP_ID_LEN:
            raise ValueError(f"chip_id must be {CHIP_ID_LEN} bytes")
        if len(self.chip_secret) != 32:
            raise ValueError("chip_secret must be 32 bytes")

    @classmethod
    def generate(cls, tcb_version: int = 1, rand: crypto.RandBytes = secrets.token_bytes) -> "ChipState":
        return cls(
            chip_id=rand(CHIP_ID_LEN),
            tcb_version=tcb_version,
            vcek=crypto.KeyPair.generate(rand),
            chip_secret=rand(32),
        )


@dataclass(frozen=True)
class AttestationReport:
    chip_id: bytes
    tcb_version: int
    measurement: bytes
    report_data: bytes
    signature: bytes

    def signing_payload(self) -> bytes:
        return self.chip_id + u64(self.tcb_version) + self.measurement + self.report_data

    def to_bytes(self) -> bytes:
        return self.signing_payload() + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttestationReport":
        if len(data) != REPORT_WIRE_LEN:
            raise EncodingError(f"report must be {REPORT_WIRE_LEN} bytes, got {len(data)}")
        r = ByteReader(data)
        return cls(
            chip_id=r.take(CHIP_ID_LEN),
            tcb_version=r.take_u64(),
            measurement=r.take(crypto.DIGEST384_LEN),
            report_data=r.take(crypto.REPORT_DATA_LEN),
            signature=r.remainder(),
        )

    def to_json_dict(self) -> dict:
        return {
            "chip_id": self.chip_id.hex(),
            "tcb_version": self.tcb_version,
            "measurement": self.measurement.hex(),
            "report_data": self.report_data.hex(),
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AttestationReport":
        return cls(
            chip_id=bytes.fromhex(doc["chip_id"]),
            tcb_version=int(doc["tcb_version"]),
            measurement=bytes.fromhex(doc["measurement"]),
            report_data=bytes.fromhex(doc["report_data"]),
            signature=bytes.fromhex(doc["signature"]),
        )


def issue_report(chip: ChipState, measurement: bytes, report_data: bytes) -> AttestationReport:
    if len(report_data) != crypto.REPORT_DATA_LEN:
        raise InvalidReportData(
            f"report_data must be {crypto.REPORT_DATA_LEN} bytes, got {len(report_data)}"
        )
    if len(measurement) != crypto.DIGEST384_LEN:
        raise ValueError(f"measurement must be {crypto.DIGEST384_LEN} bytes")
    unsigned = AttestationReport(chip.chip_id, chip.tcb_version, measurement, report_data, b"")
    signature = crypto.sign(chip.vcek.private, unsigned.signing_payload())
    return AttestationReport(chip.chip_id, chip.tcb_version, measurement, report_data, signature)


def verify_report(report: AttestationReport, vcek_public: bytes) -> bool:
    try:
        return crypto.verify(vcek_public, report.signing_payload(), report.signature)
    except crypto.MalformedKeyError:
        return False


def derive_sealing_key(chip: ChipState, measurement: bytes) -> bytes:
    """Measurement-bound sealing key; identical state, identical key."""
    return hmac.new(chip.chip_secret, b"sealing" + measurement, hashlib.sha256).digest()
