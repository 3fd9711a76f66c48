"""Image provisioning pipeline: sources in, boot artifacts out.

This is the single code path shared by fleet provisioning and by anyone
who wants to recompute the expected measurement from sources, which is
exactly what makes the measurement reproducible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .boot import BootBundle
from .integrity import ImageManifest, MerkleDevice, build_image, build_merkle

DEFAULT_CMDLINE_TEMPLATE = (
    "console=ttyS0 root=/dev/mapper/verity-rootfs ro verity_root_hash={root_hash}"
)

_ROOT_HASH_RE = re.compile(r"verity_root_hash=([0-9a-f]{64})")


@dataclass(frozen=True)
class ImageSources:
    """Everything needed to rebuild a node image from scratch."""

    firmware: bytes
    kernel: bytes
    initrd: bytes
    manifest: ImageManifest
    cmdline_template: str = DEFAULT_CMDLINE_TEMPLATE
    salt: bytes = b""


@dataclass(frozen=True)
class ProvisionedImage:
    image: bytes
    rootfs: MerkleDevice
    cmdline: str
    boot: BootBundle
    measurement: bytes
    root_hash: bytes


def provision(sources: ImageSources) -> ProvisionedImage:
    if "{root_hash}" not in sources.cmdline_template:
        raise ValueError("cmdline template must contain a {root_hash} placeholder")
    image = build_image(sources.manifest)
    rootfs = build_merkle(image, salt=sources.salt)
    cmdline = sources.cmdline_template.format(root_hash=rootfs.root.hex())
    bundle = BootBundle.build(sources.firmware, sources.kernel, sources.initrd, cmdline)
    return ProvisionedImage(
        image=image,
        rootfs=rootfs,
        cmdline=cmdline,
        boot=bundle,
        measurement=bundle.launch_measurement(),
        root_hash=rootfs.root,
    )


def parse_root_hash(cmdline: str) -> bytes:
    """Extract the rootfs integrity root from the kernel command line."""
    m = _ROOT_HASH_RE.search(cmdline)
    if not m:
        raise ValueError("cmdline carries no verity_root_hash=<hex> argument")
    return bytes.fromhex(m.group(1))
