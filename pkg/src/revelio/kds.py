"""Key distribution server: hands out per-chip certificate chains.

Provisioning happens once at setup; after that the server is read-only
and returns the identical (byte-equal) chain for a given chip and TCB
version every time.
"""

from __future__ import annotations

import secrets
from typing import Protocol

from . import crypto
from .certs import CertChain, issue_certificate, self_signed

ARK_NAME = "SIM-ARK"
ASK_NAME = "SIM-ASK"


class NotProvisioned(Exception):
    """No chain exists for the requested chip id / TCB version."""


class KdsUnreachable(Exception):
    """Transport-level failure talking to the KDS; retryable."""


class VcekSource(Protocol):
    def fetch_vcek(self, chip_id: bytes, tcb_version: int) -> CertChain: ...


class KeyDistributionServer:
    def __init__(self, rand: crypto.RandBytes = secrets.token_bytes):
        self._ark_keys = crypto.KeyPair.generate(rand)
        self._ask_keys = crypto.KeyPair.generate(rand)
        self._ark = self_signed(ARK_NAME, self._ark_keys)
        self._ask = issue_certificate(ASK_NAME, self._ask_keys.public, ARK_NAME, self._ark_keys)
        self._chains: dict[tuple[bytes, int], CertChain] = {}

    @property
    def root_certificate(self):
        return self._ark

    def provision_chip(self, chip_id: bytes, tcb_version: int, vcek_public: bytes) -> None:
        key = (chip_id, tcb_version)
        if key in self._chains:
            if self._chains[key].vcek.subject_public_key != vcek_public:
                raise ValueError(f"chip {chip_id.hex()[:12]} already provisioned with another key")
            return
        vcek = issue_certificate(
            subject=f"VCEK-{chip_id.hex()[:16]}",
            subject_public_key=vcek_public,
            issuer=ASK_NAME,
            issuer_keypair=self._ask_keys,
            extensions={"chip_id": chip_id.hex(), "tcb_version": str(tcb_version)},
        )
        self._chains[key] = CertChain(self._ark, self._ask, vcek)

    def fetch_vcek(self, chip_id: bytes, tcb_version: int) -> CertChain:
        try:
            return self._chains[(chip_id, tcb_version)]
        except KeyError:
            raise NotProvisioned(
                f"no VCEK for chip {chip_id.hex()[:12]} tcb {tcb_version}"
            ) from None
