"""Desk-scale attested-fleet simulation.

A software security processor signs attestation reports over a measured
boot chain that extends down to a Merkle-protected root filesystem; a
fleet protocol distributes one shared TLS identity among mutually
attested VMs; clients verify the whole chain from root of trust to the
key their connection terminates on.
"""

from .boot import BootBundle, BootDecision, build_hash_table, compute_launch_digest, ovmf_verify
from .certs import CertChain, Certificate, build_csr, parse_csr, validate_chain
from .crypto import KeyPair, hash256, hash384
from .fleet import (
    PayloadKind,
    RateLimited,
    ReportBundle,
    RoundOutcome,
    SimulatedCA,
    SpNode,
    Verdict,
    run_certificate_round,
    validate_report_bundle,
)
from .integrity import (
    ImageManifest,
    IntegrityError,
    ManifestEntry,
    ManifestError,
    MerkleDevice,
    RangeError,
    SealedVolume,
    build_image,
    build_merkle,
    seal_volume,
    unseal_volume,
    verified_read,
)
from .kds import KeyDistributionServer, KdsUnreachable, NotProvisioned
from .node import Node, NodeConfig, NodeIdentity, NodePhase
from .provisioning import ImageSources, ProvisionedImage, parse_root_hash, provision
from .scenarios import SCENARIO_NAMES, SCENARIOS, build_world, run_scenario
from .security_processor import (
    AttestationReport,
    ChipState,
    InvalidReportData,
    derive_sealing_key,
    issue_report,
    verify_report,
)
from .verifier import (
    AttestationSession,
    AttestationVerdict,
    TrustedRegistry,
    UsageError,
    VerdictStatus,
    attest_domain,
    monitor_request,
    recompute_expected_measurement,
)

__version__ = "0.1.0"
