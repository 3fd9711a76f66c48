"""Measured direct boot: component hash table and launch digests.

The hypervisor-injected hash table always holds exactly three entries in
the fixed order kernel, initrd, cmdline. The launch measurement is the
48-byte digest of firmware ‖ encoded table, and the firmware side
re-measures each passed component against the table before booting
(kernel command lines are hashed as UTF-8, no trailing NUL).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

from .crypto import DIGEST256_LEN, hash256, hash384
from .encoding import pack_str

HASH_TABLE_COMPONENTS = ("kernel", "initrd", "cmdline")

HashTable = list[tuple[str, bytes]]


def build_hash_table(kernel: bytes, initrd: bytes, cmdline: str) -> HashTable:
    return [
        ("kernel", hash256(kernel)),
        ("initrd", hash256(initrd)),
        ("cmdline", hash256(cmdline.encode("utf-8"))),
    ]


def encode_hash_table(table: HashTable) -> bytes:
    out = b""
    for name, digest in table:
        if len(digest) != DIGEST256_LEN:
            raise ValueError(f"hash table entry {name!r} has a {len(digest)}-byte digest")
        out += pack_str(name) + digest
    return out


def compute_launch_digest(firmware: bytes, table: HashTable) -> bytes:
    """48-byte measurement over the firmware with the table folded in."""
    return hash384(firmware + encode_hash_table(table))


@dataclass(frozen=True)
class BootBundle:
    firmware: bytes
    kernel: bytes
    initrd: bytes
    cmdline: str
    injected_hash_table: HashTable

    @classmethod
    def build(cls, firmware: bytes, kernel: bytes, initrd: bytes, cmdline: str) -> "BootBundle":
        """Bundle as produced by an honest hypervisor: table matches blobs."""
        return cls(firmware, kernel, initrd, cmdline, build_hash_table(kernel, initrd, cmdline))

    def launch_measurement(self) -> bytes:
        return compute_launch_digest(self.firmware, self.injected_hash_table)

    def with_components(self, **changes) -> "BootBundle":
        """Swap blobs without touching the injected table (hostile hypervisor)."""
        return replace(self, **changes)

    def save_dir(self, path: str) -> None:
        os.makedirs(path, exist_ok=True)
        with open(os.path.join(path, "firmware.bin"), "wb") as f:
            f.write(self.firmware)
        with open(os.path.join(path, "kernel.bin"), "wb") as f:
            f.write(self.kernel)
        with open(os.path.join(path, "initrd.img"), "wb") as f:
            f.write(self.initrd)
        with open(os.path.join(path, "cmdline.txt"), "w", encoding="utf-8") as f:
            f.write(self.cmdline)

    @classmethod
    def load_dir(cls, path: str) -> "BootBundle":
        with open(os.path.join(path, "firmware.bin"), "rb") as f:
            firmware = f.read()
        with open(os.path.join(path, "kernel.bin"), "rb") as f:
            kernel = f.read()
        with open(os.path.join(path, "initrd.img"), "rb") as f:
            initrd = f.read()
        with open(os.path.join(path, "cmdline.txt"), "r", encoding="utf-8") as f:
            cmdline = f.read()
        return cls.build(firmware, kernel, initrd, cmdline)


@dataclass(frozen=True)
class BootDecision:
    proceed: bool
    failed_component: str | None = None

    @classmethod
    def ok(cls) -> "BootDecision":
        return cls(True)

    @classmethod
    def abort(cls, component: str) -> "BootDecision":
        return cls(False, component)


def ovmf_verify(bundle: BootBundle) -> BootDecision:
    """Firmware-side check of passed components against the injected table.

    Aborts on the first component (in fixed order) whose hash does not
    match its table entry; a missing entry counts as a mismatch.
    """
    entries = dict(bundle.injected_hash_table)
    actual = {
        "kernel": hash256(bundle.kernel),
        "initrd": hash256(bundle.initrd),
        "cmdline": hash256(bundle.cmdline.encode("utf-8")),
    }
    for name in HASH_TABLE_COMPONENTS:
        if entries.get(name) != actual[name]:
            return BootDecision.abort(name)
    return BootDecision.ok()
