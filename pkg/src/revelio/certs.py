"""Minimal certificates and the three-level attestation chain.

Serialization (not X.509):

    version(1B) ‖ len-prefixed subject ‖ len-prefixed subject_public_key ‖
    len-prefixed issuer ‖ len-prefixed extensions ‖ validity(16B) ‖ signature

Extensions are encoded as sorted (len-prefixed key ‖ len-prefixed value)
pairs; validity is two u64 epoch seconds. The signature covers every byte
before it and is the remainder of the buffer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto
from .encoding import ByteReader, EncodingError, pack_bytes, pack_str, u64

CERT_VERSION = 1


@dataclass(frozen=True)
class Certificate:
    subject: str
    subject_public_key: bytes
    issuer: str
    extensions: dict = field(default_factory=dict)
    not_before: int = 0
    not_after: int = 2**63
    signature: bytes = b""

    def signing_payload(self) -> bytes:
        return _encode_body(self)

    def to_bytes(self) -> bytes:
        return self.signing_payload() + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        r = ByteReader(data)
        version = r.take(1)[0]
        if version != CERT_VERSION:
            raise EncodingError(f"unsupported certificate version {version}")
        subject = r.take_prefixed_str()
        spk = r.take_prefixed()
        issuer = r.take_prefixed_str()
        ext = _decode_extensions(r.take_prefixed())
        not_before = r.take_u64()
        not_after = r.take_u64()
        signature = r.remainder()
        return cls(subject, spk, issuer, ext, not_before, not_after, signature)

    def valid_at(self, when: float) -> bool:
        return self.not_before <= when <= self.not_after


def _encode_extensions(extensions: dict) -> bytes:
    out = b""
    for key in sorted(extensions):
        out += pack_str(str(key)) + pack_str(str(extensions[key]))
    return out


def _decode_extensions(data: bytes) -> dict:
    r = ByteReader(data)
    ext = {}
    while not r.exhausted:
        key = r.take_prefixed_str()
        ext[key] = r.take_prefixed_str()
    return ext


def _encode_body(cert: Certificate) -> bytes:
    return (
        bytes([CERT_VERSION])
        + pack_str(cert.subject)
        + pack_bytes(cert.subject_public_key)
        + pack_str(cert.issuer)
        + pack_bytes(_encode_extensions(cert.extensions))
        + u64(cert.not_before)
        + u64(cert.not_after)
    )


def issue_certificate(
    subject: str,
    subject_public_key: bytes,
    issuer: str,
    issuer_keypair: crypto.KeyPair,
    extensions: dict | None = None,
    not_before: int = 0,
    not_after: int = 2**63,
) -> Certificate:
    unsigned = Certificate(
        subject=subject,
        subject_public_key=subject_public_key,
        issuer=issuer,
        extensions=dict(extensions or {}),
        not_before=not_before,
        not_after=not_after,
    )
    signature = crypto.sign(issuer_keypair.private, unsigned.signing_payload())
    return Certificate(
        subject=unsigned.subject,
        subject_public_key=unsigned.subject_public_key,
        issuer=unsigned.issuer,
        extensions=unsigned.extensions,
        not_before=unsigned.not_before,
        not_after=unsigned.not_after,
        signature=signature,
    )


def self_signed(name: str, keypair: crypto.KeyPair, extensions: dict | None = None) -> Certificate:
    return issue_certificate(name, keypair.public, name, keypair, extensions)


def verify_certificate(cert: Certificate, issuer_public_key: bytes) -> bool:
    return crypto.verify(issuer_public_key, cert.signing_payload(), cert.signature)


@dataclass(frozen=True)
class CertChain:
    """Root, intermediate and per-chip certs, root first."""

    ark: Certificate
    ask: Certificate
    vcek: Certificate

    def to_bytes(self) -> bytes:
        return (
            pack_bytes(self.ark.to_bytes())
            + pack_bytes(self.ask.to_bytes())
            + pack_bytes(self.vcek.to_bytes())
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "CertChain":
        r = ByteReader(data)
        ark = Certificate.from_bytes(r.take_prefixed())
        ask = Certificate.from_bytes(r.take_prefixed())
        vcek = Certificate.from_bytes(r.take_prefixed())
        r.expect_end()
        return cls(ark, ask, vcek)


def build_csr(domain: str, keypair: crypto.KeyPair) -> bytes:
    """Signing request binding a domain to a public key, self-signed."""
    body = pack_str(domain) + pack_bytes(keypair.public)
    return body + crypto.sign(keypair.private, body)


def parse_csr(csr: bytes) -> tuple[str, bytes]:
    """Return (domain, public_key); raises EncodingError on a bad self-signature."""
    r = ByteReader(csr)
    domain = r.take_prefixed_str()
    public_key = r.take_prefixed()
    signature = r.remainder()
    body = csr[: len(csr) - len(signature)]
    try:
        ok = crypto.verify(public_key, body, signature)
    except crypto.MalformedKeyError:
        ok = False
    if not ok:
        raise EncodingError("CSR self-signature does not verify")
    return domain, public_key


def validate_chain(
    chain: CertChain,
    chip_id: bytes | None = None,
    tcb_version: int | None = None,
) -> bool:
    """Check the full root-of-trust path; optionally pin the chip identity.

    True iff the root is self-signed, every link's signature verifies under
    its parent, and (when given) the leaf cert's extensions name exactly the
    expected chip id and TCB version.
    """
    try:
        if chain.ark.issuer != chain.ark.subject:
            return False
        if not verify_certificate(chain.ark, chain.ark.subject_public_key):
            return False
        if chain.ask.issuer != chain.ark.subject:
            return False
        if not verify_certificate(chain.ask, chain.ark.subject_public_key):
            return False
        if chain.vcek.issuer != chain.ask.subject:
            return False
        if not verify_certificate(chain.vcek, chain.ask.subject_public_key):
            return False
    except crypto.MalformedKeyError:
        return False
    if chip_id is not None and chain.vcek.extensions.get("chip_id") != chip_id.hex():
        return False
    if tcb_version is not None and chain.vcek.extensions.get("tcb_version") != str(tcb_version):
        return False
    return True
