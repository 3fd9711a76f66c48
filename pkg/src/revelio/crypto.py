"""Hashing, signing and key-encapsulation primitives.

Digest widths: content digests are 32-byte SHA-256; launch measurements
are 48-byte SHA-384, so the two domains cannot be confused.

A :class:`KeyPair` is one 32-byte seed that deterministically derives an
Ed25519 signing key and an X25519 encryption key. The public half is the
64-byte concatenation sign_pub ‖ enc_pub. Signing is deterministic, which
is what makes repeated attestation reports byte-identical.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass
from typing import Callable

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

DIGEST256_LEN = 32
DIGEST384_LEN = 48
SEED_LEN = 32
PUBLIC_KEY_LEN = 64  # sign_pub(32) || enc_pub(32)
SIGNATURE_LEN = 64
REPORT_DATA_LEN = 64

# n -> n random bytes; injectable so simulations can be fully deterministic
RandBytes = Callable[[int], bytes]


class MalformedKeyError(ValueError):
    """Key material of the wrong size or structure."""


class AuthError(Exception):
    """Authenticated decryption failed: wrong key or tampered ciphertext."""


def hash256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hash384(data: bytes) -> bytes:
    return hashlib.sha384(data).digest()


def pad_report_data(digest: bytes) -> bytes:
    """Left-align a digest in the 64-byte report-data field, zero padded."""
    if len(digest) > REPORT_DATA_LEN:
        raise ValueError(f"digest too long for report data: {len(digest)}")
    return digest + b"\x00" * (REPORT_DATA_LEN - len(digest))


def _check_seed(private: bytes) -> None:
    if len(private) != SEED_LEN:
        raise MalformedKeyError(f"private seed must be {SEED_LEN} bytes, got {len(private)}")


def _check_public(public: bytes) -> None:
    if len(public) != PUBLIC_KEY_LEN:
        raise MalformedKeyError(f"public key must be {PUBLIC_KEY_LEN} bytes, got {len(public)}")


def _signing_key(seed: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed)


def _encryption_key(seed: bytes) -> X25519PrivateKey:
    # Domain-separated so the same seed never feeds two algorithms directly.
    enc_seed = hmac.new(seed, b"revelio-x25519-v1", hashlib.sha256).digest()
    return X25519PrivateKey.from_private_bytes(enc_seed)


def _raw_public(key) -> bytes:
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


@dataclass(frozen=True)
class KeyPair:
    """Hybrid signing + encryption identity derived from one seed."""

    public: bytes
    private: bytes

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        _check_seed(seed)
        public = _raw_public(_signing_key(seed)) + _raw_public(_encryption_key(seed))
        return cls(public=public, private=seed)

    @classmethod
    def generate(cls, rand: RandBytes = secrets.token_bytes) -> "KeyPair":
        return cls.from_seed(rand(SEED_LEN))

    @property
    def sign_public(self) -> bytes:
        return self.public[:32]

    @property
    def enc_public(self) -> bytes:
        return self.public[32:]


def sign(private: bytes, message: bytes) -> bytes:
    _check_seed(private)
    return _signing_key(private).sign(message)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    _check_public(public)
    if len(signature) != SIGNATURE_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public[:32]).verify(signature, message)
        return True
    except InvalidSignature:
        return False


def _kem_key(shared: bytes, eph_pub: bytes, recipient_enc_pub: bytes) -> bytes:
    return hmac.new(shared, b"revelio-kem-v1" + eph_pub + recipient_enc_pub, hashlib.sha256).digest()


def encrypt_to(public: bytes, plaintext: bytes, rand: RandBytes = secrets.token_bytes) -> bytes:
    """Encapsulate to a recipient public key: eph_pub(32) ‖ nonce(12) ‖ ct."""
    _check_public(public)
    eph = X25519PrivateKey.from_private_bytes(rand(32))
    eph_pub = _raw_public(eph)
    shared = eph.exchange(X25519PublicKey.from_public_bytes(public[32:]))
    key = _kem_key(shared, eph_pub, public[32:])
    nonce = rand(12)
    return eph_pub + nonce + AESGCM(key).encrypt(nonce, plaintext, None)


def decrypt_with(private: bytes, blob: bytes) -> bytes:
    _check_seed(private)
    if len(blob) < 32 + 12 + 16:
        raise AuthError("ciphertext too short")
    eph_pub, nonce, ct = blob[:32], blob[32:44], blob[44:]
    enc_key = _encryption_key(private)
    shared = enc_key.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    key = _kem_key(shared, eph_pub, _raw_public(enc_key))
    try:
        return AESGCM(key).decrypt(nonce, ct, None)
    except InvalidTag as e:
        raise AuthError("decryption failed") from e
