import random

import pytest

from revelio.certs import (
    CertChain,
    Certificate,
    build_csr,
    issue_certificate,
    parse_csr,
    self_signed,
    validate_chain,
)
from revelio.crypto import KeyPair
from revelio.encoding import EncodingError


@pytest.fixture
def chain(rand):
    ark_keys = KeyPair.generate(rand)
    ask_keys = KeyPair.generate(rand)
    vcek_keys = KeyPair.generate(rand)
    ark = self_signed("ARK", ark_keys)
    ask = issue_certificate("ASK", ask_keys.public, "ARK", ark_keys)
    vcek = issue_certificate(
        "VCEK-1", vcek_keys.public, "ASK", ask_keys,
        extensions={"chip_id": (b"\xaa" * 64).hex(), "tcb_version": "3"},
    )
    return CertChain(ark, ask, vcek)


def test_certificate_round_trip(rand):
    keys = KeyPair.generate(rand)
    cert = issue_certificate(
        "subject.example", b"\x01" * 64, "issuer", keys,
        extensions={"b": "2", "a": "1"}, not_before=10, not_after=99,
    )
    parsed = Certificate.from_bytes(cert.to_bytes())
    assert parsed == cert
    assert parsed.extensions == {"a": "1", "b": "2"}
    assert parsed.valid_at(50) and not parsed.valid_at(100)


def test_certificate_rejects_unknown_version(rand):
    cert = self_signed("x", KeyPair.generate(rand))
    data = bytes([9]) + cert.to_bytes()[1:]
    with pytest.raises(EncodingError):
        Certificate.from_bytes(data)


def test_chain_round_trip(chain):
    assert CertChain.from_bytes(chain.to_bytes()) == chain


def test_chain_validates(chain):
    assert validate_chain(chain)
    assert validate_chain(chain, chip_id=b"\xaa" * 64, tcb_version=3)


def test_chain_rejects_wrong_chip_or_tcb(chain):
    assert not validate_chain(chain, chip_id=b"\xbb" * 64, tcb_version=3)
    assert not validate_chain(chain, chip_id=b"\xaa" * 64, tcb_version=4)


def test_any_corrupted_signature_byte_breaks_chain(chain, rand):
    rng = random.Random(3)
    for cert_name in ("ark", "ask", "vcek"):
        cert = getattr(chain, cert_name)
        for _ in range(8):
            sig = bytearray(cert.signature)
            sig[rng.randrange(len(sig))] ^= 1 << rng.randrange(8)
            broken = Certificate(
                cert.subject, cert.subject_public_key, cert.issuer,
                cert.extensions, cert.not_before, cert.not_after, bytes(sig),
            )
            assert not validate_chain(CertChain(**{**chain.__dict__, cert_name: broken}))


def test_non_self_signed_root_rejected(chain, rand):
    other = KeyPair.generate(rand)
    fake_root = issue_certificate("ARK", chain.ark.subject_public_key, "OTHER", other)
    assert not validate_chain(CertChain(fake_root, chain.ask, chain.vcek))


def test_csr_round_trip(rand):
    keys = KeyPair.generate(rand)
    csr = build_csr("svc.example", keys)
    domain, public = parse_csr(csr)
    assert domain == "svc.example"
    assert public == keys.public


def test_tampered_csr_rejected(rand):
    keys = KeyPair.generate(rand)
    csr = bytearray(build_csr("svc.example", keys))
    csr[10] ^= 0x01
    with pytest.raises(EncodingError):
        parse_csr(bytes(csr))
