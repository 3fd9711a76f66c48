import random

import pytest

from revelio.crypto import KeyPair
from revelio.integrity import ImageManifest
from revelio.kds import KeyDistributionServer
from revelio.provisioning import ImageSources, provision
from revelio.security_processor import ChipState


@pytest.fixture
def rand():
    """Deterministic byte source; reseeded per test."""
    return random.Random(0xC0FFEE).randbytes


@pytest.fixture
def keypair(rand):
    return KeyPair.generate(rand)


@pytest.fixture
def kds(rand):
    return KeyDistributionServer(rand)


@pytest.fixture
def chip(rand, kds):
    chip = ChipState.generate(tcb_version=1, rand=rand)
    kds.provision_chip(chip.chip_id, chip.tcb_version, chip.vcek.public)
    return chip


@pytest.fixture
def sources():
    return ImageSources(
        firmware=b"TEST-FW-1",
        kernel=b"test-kernel",
        initrd=b"test-initrd",
        manifest=ImageManifest.of(
            [
                ("bin/app", b"app-binary-contents", 0o755),
                ("etc/conf", b"key=value\n", 0o644),
            ]
        ),
    )


@pytest.fixture
def provisioned(sources):
    return provision(sources)
