import hashlib
import random

import pytest

from revelio.crypto import AuthError
from revelio.integrity import (
    ARITY,
    BLOCK_SIZE,
    ImageManifest,
    IntegrityError,
    ManifestError,
    MerkleDevice,
    RangeError,
    SealedVolume,
    build_image,
    build_merkle,
    load_device_files,
    load_sealed_volume,
    save_device_files,
    seal_volume,
    unseal_volume,
    verified_read,
    write_sealed_volume,
)

# Independently computed: sha256 of a hash block holding sha256(zero block)
# followed by zero padding to 4096 bytes.
MERKLE_ROOT_ONE_ZERO_BLOCK = "ec8e469cd349676fea41eeeb5b70e45a30f9a058d862edc5823b95ddf135c801"


def oracle_root(data: bytes, salt: bytes = b"") -> bytes:
    """Brute-force re-hash of the documented layout, separate code path."""
    digests = [
        hashlib.sha256(salt + data[i : i + BLOCK_SIZE]).digest()
        for i in range(0, len(data), BLOCK_SIZE)
    ]
    while True:
        packed = []
        for i in range(0, len(digests), ARITY):
            chunk = b"".join(digests[i : i + ARITY])
            packed.append(chunk.ljust(BLOCK_SIZE, b"\x00"))
        if len(packed) == 1:
            return hashlib.sha256(salt + packed[0]).digest()
        digests = [hashlib.sha256(salt + block).digest() for block in packed]


class TestBuildImage:
    def test_empty_manifest_is_one_zero_block(self):
        assert build_image(ImageManifest.of([])) == b"\x00" * BLOCK_SIZE

    def test_identical_manifests_identical_images(self):
        manifest = ImageManifest.of([("a", b"1", 0o644), ("b", b"2", 0o755)])
        assert build_image(manifest) == build_image(manifest)

    def test_insertion_order_is_irrelevant(self):
        fwd = ImageManifest.of([("a", b"1", 0o644), ("b", b"2", 0o755)])
        rev = ImageManifest.of([("b", b"2", 0o755), ("a", b"1", 0o644)])
        assert build_image(fwd) == build_image(rev)

    def test_duplicate_path_rejected(self):
        with pytest.raises(ManifestError):
            build_image(ImageManifest.of([("a", b"1", 0o644), ("a", b"2", 0o644)]))

    def test_output_is_block_aligned(self):
        image = build_image(ImageManifest.of([("big", b"\x01" * 5000, 0o644)]))
        assert len(image) % BLOCK_SIZE == 0

    def test_content_change_changes_image(self):
        a = build_image(ImageManifest.of([("f", b"v1", 0o644)]))
        b = build_image(ImageManifest.of([("f", b"v2", 0o644)]))
        assert a != b


class TestBuildMerkle:
    def test_golden_single_zero_block(self):
        dev = build_merkle(b"\x00" * BLOCK_SIZE)
        assert dev.root.hex() == MERKLE_ROOT_ONE_ZERO_BLOCK

    def test_rebuild_gives_same_root(self, rand):
        data = rand(BLOCK_SIZE * 5)
        assert build_merkle(data).root == build_merkle(data).root

    def test_unaligned_data_rejected(self):
        with pytest.raises(ValueError):
            build_merkle(b"\x00" * 100)
        with pytest.raises(ValueError):
            build_merkle(b"")

    def test_roots_match_oracle_over_random_devices(self, rand):
        rng = random.Random(29)
        for _ in range(20):
            blocks = rng.randint(1, 16)
            salt = rng.choice([b"", b"somesalt"])
            data = rand(blocks * BLOCK_SIZE)
            assert build_merkle(data, salt=salt).root == oracle_root(data, salt)

    def test_multi_level_tree(self, rand):
        # More blocks than one hash block can index forces a second level.
        data = rand((ARITY + 2) * BLOCK_SIZE)
        dev = build_merkle(data)
        assert len(dev.tree) == 2
        assert dev.root == oracle_root(data)

    def test_any_bit_flip_changes_root(self, rand):
        data = rand(BLOCK_SIZE * 4)
        base = build_merkle(data).root
        rng = random.Random(31)
        for _ in range(50):
            mutated = bytearray(data)
            pos = rng.randrange(len(data))
            mutated[pos] ^= 1 << rng.randrange(8)
            assert build_merkle(bytes(mutated)).root != base


class TestVerifiedRead:
    def test_untouched_device_reads_every_block(self, rand):
        data = rand(BLOCK_SIZE * 6)
        dev = build_merkle(data)
        for i in range(6):
            assert verified_read(dev, i) == data[i * BLOCK_SIZE : (i + 1) * BLOCK_SIZE]

    def test_out_of_range(self, rand):
        dev = build_merkle(rand(BLOCK_SIZE))
        with pytest.raises(RangeError):
            verified_read(dev, 1)
        with pytest.raises(RangeError):
            verified_read(dev, -1)

    def test_corrupt_data_byte_fails_at_leaf_level(self, rand):
        data = bytearray(rand(BLOCK_SIZE * 3))
        dev = build_merkle(bytes(data))
        data[BLOCK_SIZE + 17] ^= 0x01
        corrupted = MerkleDevice(bytes(data), dev.tree, dev.root, dev.salt)
        with pytest.raises(IntegrityError) as exc:
            verified_read(corrupted, 1)
        assert exc.value.level == 0
        # other blocks remain readable
        assert verified_read(corrupted, 0)

    def test_corrupt_interior_hash_block_fails_at_that_level(self, rand):
        data = rand((ARITY + 2) * BLOCK_SIZE)  # two tree levels
        dev = build_merkle(data)
        level0 = bytearray(dev.tree[0])
        level0[5] ^= 0x01  # corrupt a leaf digest inside the stored tree
        corrupted = MerkleDevice(data, (bytes(level0), dev.tree[1]), dev.root, dev.salt)
        with pytest.raises(IntegrityError) as exc:
            verified_read(corrupted, 0)
        assert exc.value.level == 0
        # data intact but a *sibling* entry corrupted: the failure shows up
        # one level further up, when the hash block itself is checked.
        with pytest.raises(IntegrityError) as exc:
            verified_read(corrupted, 1)
        assert exc.value.level == 1

    def test_corrupt_root_detected(self, rand):
        data = rand(BLOCK_SIZE)
        dev = build_merkle(data)
        bad_root = bytes(32)
        corrupted = MerkleDevice(data, dev.tree, bad_root, dev.salt)
        with pytest.raises(IntegrityError):
            verified_read(corrupted, 0)

    def test_soundness_all_blocks_read_iff_data_unchanged(self, rand):
        # Cross-checked against the brute-force oracle on small devices.
        rng = random.Random(37)
        for _ in range(10):
            blocks = rng.randint(1, 8)
            data = rand(blocks * BLOCK_SIZE)
            dev = build_merkle(data)
            assert all(verified_read(dev, i) == data[i * BLOCK_SIZE : (i + 1) * BLOCK_SIZE]
                       for i in range(blocks))
            assert dev.root == oracle_root(data)
            mutated = bytearray(data)
            pos = rng.randrange(len(data))
            mutated[pos] ^= 0x80
            tampered = MerkleDevice(bytes(mutated), dev.tree, dev.root, dev.salt)
            with pytest.raises(IntegrityError):
                verified_read(tampered, pos // BLOCK_SIZE)


class TestSealedVolume:
    def test_round_trip(self, rand):
        key = rand(32)
        vol = seal_volume(b"identity material", key, rand)
        assert unseal_volume(vol, key) == b"identity material"

    def test_wrong_key_fails(self, rand):
        vol = seal_volume(b"secret", rand(32), rand)
        with pytest.raises(AuthError):
            unseal_volume(vol, rand(32))

    def test_tampered_ciphertext_fails(self, rand):
        key = rand(32)
        vol = seal_volume(b"secret", key, rand)
        bad = SealedVolume(
            ciphertext=vol.ciphertext[:-1] + bytes([vol.ciphertext[-1] ^ 1]),
            nonce=vol.nonce,
            key_binding=vol.key_binding,
        )
        with pytest.raises(AuthError):
            unseal_volume(bad, key)

    def test_bad_key_length_rejected(self, rand):
        with pytest.raises(ValueError):
            seal_volume(b"x", b"short", rand)

    def test_file_round_trip(self, rand, tmp_path):
        key = rand(32)
        vol = seal_volume(b"persisted", key, rand)
        path = str(tmp_path / "volume.sealed")
        write_sealed_volume(vol, path)
        assert unseal_volume(load_sealed_volume(path), key) == b"persisted"


def test_device_files_round_trip(rand, tmp_path):
    data = rand(BLOCK_SIZE * 3)
    dev = build_merkle(data, salt=b"pepper")
    save_device_files(dev, str(tmp_path))
    loaded = load_device_files(str(tmp_path))
    assert loaded == dev
    assert verified_read(loaded, 2) == data[2 * BLOCK_SIZE :]
