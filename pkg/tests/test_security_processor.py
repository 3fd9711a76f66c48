import random

import pytest

from revelio.crypto import hash384, pad_report_data
from revelio.security_processor import (
    AttestationReport,
    ChipState,
    InvalidReportData,
    derive_sealing_key,
    issue_report,
    verify_report,
)

MEASUREMENT = hash384(b"some launch state")
REPORT_DATA = pad_report_data(b"\x11" * 32)


def test_issued_report_verifies_under_chip_key(chip):
    report = issue_report(chip, MEASUREMENT, REPORT_DATA)
    assert verify_report(report, chip.vcek.public)
    assert report.chip_id == chip.chip_id
    assert report.tcb_version == chip.tcb_version


def test_identical_inputs_give_byte_identical_reports(chip):
    a = issue_report(chip, MEASUREMENT, REPORT_DATA)
    b = issue_report(chip, MEASUREMENT, REPORT_DATA)
    assert a.to_bytes() == b.to_bytes()


def test_report_fails_under_other_chips_key(chip, rand):
    other = ChipState.generate(rand=rand)
    report = issue_report(chip, MEASUREMENT, REPORT_DATA)
    assert not verify_report(report, other.vcek.public)


def test_wrong_report_data_length_rejected(chip):
    with pytest.raises(InvalidReportData):
        issue_report(chip, MEASUREMENT, b"\x00" * 63)
    with pytest.raises(InvalidReportData):
        issue_report(chip, MEASUREMENT, b"\x00" * 65)


def test_wrong_measurement_length_rejected(chip):
    with pytest.raises(ValueError):
        issue_report(chip, b"\x00" * 32, REPORT_DATA)


def test_mutated_fields_never_verify(chip):
    # Desk-scale unforgeability: flipping any report bit invalidates the
    # original signature.
    report = issue_report(chip, MEASUREMENT, REPORT_DATA)
    rng = random.Random(23)
    wire = bytearray(report.to_bytes())
    for _ in range(64):
        mutated = bytearray(wire)
        pos = rng.randrange(len(wire))
        mutated[pos] ^= 1 << rng.randrange(8)
        parsed = AttestationReport.from_bytes(bytes(mutated))
        assert not verify_report(parsed, chip.vcek.public)


def test_wire_and_json_round_trips(chip):
    report = issue_report(chip, MEASUREMENT, REPORT_DATA)
    assert AttestationReport.from_bytes(report.to_bytes()) == report
    assert AttestationReport.from_json_dict(report.to_json_dict()) == report


class TestSealingKey:
    def test_same_chip_same_measurement_same_key(self, chip):
        assert derive_sealing_key(chip, MEASUREMENT) == derive_sealing_key(chip, MEASUREMENT)

    def test_one_byte_of_measurement_changes_key(self, chip):
        other = bytearray(MEASUREMENT)
        other[0] ^= 0x01
        assert derive_sealing_key(chip, MEASUREMENT) != derive_sealing_key(chip, bytes(other))

    def test_different_chips_different_keys(self, chip, rand):
        other = ChipState.generate(rand=rand)
        assert derive_sealing_key(chip, MEASUREMENT) != derive_sealing_key(other, MEASUREMENT)

    def test_collision_free_over_corpus(self, rand):
        chips = [ChipState.generate(rand=rand) for _ in range(4)]
        measurements = [hash384(bytes([i])) for i in range(8)]
        keys = {derive_sealing_key(c, m) for c in chips for m in measurements}
        assert len(keys) == len(chips) * len(measurements)
