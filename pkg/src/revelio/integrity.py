"""Deterministic images, block-level Merkle integrity, sealed volumes.

Image format: records sorted by path, each u32-len path ‖ u16 mode ‖
u32-len content, zero-padded to a whole number of 4096-byte blocks (at
least one). No timestamps exist anywhere in the stream, so identical
manifests always produce identical bytes.

Merkle layout: leaf digest i = sha256(salt ‖ data block i). Digests are
packed 128 to a 4096-byte hash block (zero padded); each upper level
hashes salt ‖ hash block of the level below, until one block remains.
The root is the digest of that top block. The layout mirrors dm-verity's
defaults but makes no claim of bit compatibility with its metadata.

Reads are verified against the root on every call: the device holds no
write path, and a stored tree is untrusted until the path from the data
block to the root checks out.
"""

from __future__ import annotations

import os
import secrets
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .crypto import AuthError, RandBytes, hash256
from .encoding import pack_bytes, pack_str, u16

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

BLOCK_SIZE = 4096
DIGEST_SIZE = 32
ARITY = BLOCK_SIZE // DIGEST_SIZE  # 128

VERITY_META_MAGIC = "revelio-verity 1"


class ManifestError(ValueError):
    """Manifest violates its invariants (duplicate paths)."""


class RangeError(IndexError):
    """Block index outside the device."""


class IntegrityError(Exception):
    """A digest on the path to the root did not match.

    ``level`` is 0 for the data-block (leaf) check, k for a mismatch
    against level k of the stored tree, and the tree height for a root
    mismatch.
    """

    def __init__(self, level: int, block_index: int):
        super().__init__(f"integrity failure at level {level} reading block {block_index}")
        self.level = level
        self.block_index = block_index


class ManifestEntry(NamedTuple):
    path: str
    content: bytes
    mode: int = 0o644


@dataclass(frozen=True)
class ImageManifest:
    entries: tuple[ManifestEntry, ...]

    @classmethod
    def of(cls, entries: Iterable[tuple]) -> "ImageManifest":
        return cls(tuple(ManifestEntry(*e) for e in entries))


def build_image(manifest: ImageManifest) -> bytes:
    ordered = sorted(manifest.entries, key=lambda e: e.path)
    for a, b in zip(ordered, ordered[1:]):
        if a.path == b.path:
            raise ManifestError(f"duplicate path {a.path!r}")
    out = b"".join(pack_str(e.path) + u16(e.mode) + pack_bytes(e.content) for e in ordered)
    return pad_to_blocks(out)


def pad_to_blocks(data: bytes) -> bytes:
    blocks = max(1, -(-len(data) // BLOCK_SIZE))
    return data + b"\x00" * (blocks * BLOCK_SIZE - len(data))


@dataclass(frozen=True)
class MerkleDevice:
    """Read-only block device with its hash tree and trusted root."""

    data: bytes
    tree: tuple[bytes, ...]  # levels of packed hash blocks, leaves first
    root: bytes
    salt: bytes = b""
    block_size: int = BLOCK_SIZE
    digest_size: int = DIGEST_SIZE

    @property
    def num_blocks(self) -> int:
        return len(self.data) // self.block_size


def _pack_digests(digests: list[bytes]) -> bytes:
    packed = b"".join(digests)
    blocks = -(-len(digests) // ARITY)
    return packed + b"\x00" * (blocks * BLOCK_SIZE - len(packed))


def build_merkle(data: bytes, salt: bytes = b"") -> MerkleDevice:
    if len(data) == 0 or len(data) % BLOCK_SIZE != 0:
        raise ValueError(f"data length {len(data)} is not a positive multiple of {BLOCK_SIZE}")

    digests = [
        hash256(salt + data[i : i + BLOCK_SIZE]) for i in range(0, len(data), BLOCK_SIZE)
    ]
    levels: list[bytes] = []
    while True:
        level = _pack_digests(digests)
        levels.append(level)
        if len(level) == BLOCK_SIZE:
            break
        digests = [
            hash256(salt + level[i : i + BLOCK_SIZE]) for i in range(0, len(level), BLOCK_SIZE)
        ]
    root = hash256(salt + levels[-1])
    return MerkleDevice(data=data, tree=tuple(levels), root=root, salt=salt)


def verified_read(dev: MerkleDevice, block_index: int) -> bytes:
    """Return a data block iff its whole path to the root validates."""
    if block_index < 0 or block_index >= dev.num_blocks:
        raise RangeError(f"block {block_index} out of range (device has {dev.num_blocks})")

    block = dev.data[block_index * dev.block_size : (block_index + 1) * dev.block_size]
    digest = hash256(dev.salt + block)
    index = block_index
    for level_no, level in enumerate(dev.tree):
        block_no, offset = divmod(index, ARITY)
        start = block_no * BLOCK_SIZE + offset * dev.digest_size
        if level[start : start + dev.digest_size] != digest:
            raise IntegrityError(level_no, block_index)
        hash_block = level[block_no * BLOCK_SIZE : (block_no + 1) * BLOCK_SIZE]
        digest = hash256(dev.salt + hash_block)
        index = block_no
    if digest != dev.root:
        raise IntegrityError(len(dev.tree), block_index)
    return block


@dataclass(frozen=True)
class SealedVolume:
    ciphertext: bytes
    nonce: bytes
    key_binding: bytes  # hash of the sealing key, mismatch diagnostics only

    def to_bytes(self) -> bytes:
        return pack_bytes(self.nonce) + pack_bytes(self.key_binding) + self.ciphertext

    @classmethod
    def from_bytes(cls, data: bytes) -> "SealedVolume":
        from .encoding import ByteReader

        r = ByteReader(data)
        nonce = r.take_prefixed()
        key_binding = r.take_prefixed()
        return cls(ciphertext=r.remainder(), nonce=nonce, key_binding=key_binding)


def seal_volume(plaintext: bytes, sealing_key: bytes, rand: RandBytes = secrets.token_bytes) -> SealedVolume:
    if len(sealing_key) != 32:
        raise ValueError("sealing key must be 32 bytes")
    nonce = rand(12)
    ct = AESGCM(sealing_key).encrypt(nonce, plaintext, None)
    return SealedVolume(ciphertext=ct, nonce=nonce, key_binding=hash256(sealing_key))


def unseal_volume(volume: SealedVolume, sealing_key: bytes) -> bytes:
    if len(sealing_key) != 32:
        raise ValueError("sealing key must be 32 bytes")
    try:
        return AESGCM(sealing_key).decrypt(volume.nonce, volume.ciphertext, None)
    except InvalidTag as e:
        raise AuthError("volume does not unseal under this key") from e


# --- on-disk forms: image.bin / verity.meta / volume.sealed ---------------


def write_image(dev_data: bytes, path: str) -> None:
    with open(path, "wb") as f:
        f.write(dev_data)


def write_verity_meta(dev: MerkleDevice, path: str) -> None:
    header = (
        f"{VERITY_META_MAGIC}\n"
        f"block_size={dev.block_size}\n"
        f"digest_size={dev.digest_size}\n"
        f"salt={dev.salt.hex()}\n"
        f"root={dev.root.hex()}\n"
        f"levels={','.join(str(len(level) // BLOCK_SIZE) for level in dev.tree)}\n"
        "\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for level in dev.tree:
            f.write(level)


def load_merkle_device(image_path: str, meta_path: str) -> MerkleDevice:
    with open(image_path, "rb") as f:
        data = f.read()
    with open(meta_path, "rb") as f:
        blob = f.read()
    head, _, rest = blob.partition(b"\n\n")
    fields = {}
    lines = head.decode("ascii").splitlines()
    if not lines or lines[0] != VERITY_META_MAGIC:
        raise ValueError(f"{meta_path}: not a verity metadata file")
    for line in lines[1:]:
        key, _, value = line.partition("=")
        fields[key] = value
    block_size = int(fields["block_size"])
    digest_size = int(fields["digest_size"])
    counts = [int(n) for n in fields["levels"].split(",")]
    levels, pos = [], 0
    for count in counts:
        levels.append(rest[pos : pos + count * BLOCK_SIZE])
        pos += count * BLOCK_SIZE
    return MerkleDevice(
        data=data,
        tree=tuple(levels),
        root=bytes.fromhex(fields["root"]),
        salt=bytes.fromhex(fields["salt"]),
        block_size=block_size,
        digest_size=digest_size,
    )


def write_sealed_volume(volume: SealedVolume, path: str) -> None:
    with open(path, "wb") as f:
        f.write(volume.to_bytes())


def load_sealed_volume(path: str) -> SealedVolume:
    with open(path, "rb") as f:
        return SealedVolume.from_bytes(f.read())


def save_device_files(dev: MerkleDevice, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    write_image(dev.data, os.path.join(directory, "image.bin"))
    write_verity_meta(dev, os.path.join(directory, "verity.meta"))


def load_device_files(directory: str) -> MerkleDevice:
    return load_merkle_device(
        os.path.join(directory, "image.bin"), os.path.join(directory, "verity.meta")
    )
