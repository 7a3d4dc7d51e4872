"""quorumseal: a threshold-unlocked software key custodian.

The master key lives sealed inside a custodian and can only be used,
never exported, after a quorum of share holders contributes verifiable
shares over authenticated-encrypted channels.
"""

from .field import DEFAULT_MODULUS, FieldElement, FieldModulus, random_element
from .sharing import (
    Share,
    SharePolynomial,
    ThresholdConfig,
    additive_split,
    complement_views,
    robust_n_for,
    shamir_reconstruct,
    shamir_split,
)
from .vss import (
    CommitmentVector,
    VerifiableShare,
    VssGroupParams,
    generate_group,
    vss_reconstruct,
    vss_split,
    vss_verify,
)
from .hsm import Custodian, SealedState, compute_kcv, provision
from .ceremony import Deployment, run_ceremony
from .simnet import FaultRule, FaultScript, SimNetwork, build_network, run_session
from .nodes import RequestMessage, ResultMessage, make_request
from .attacks import run_all as run_attack_scenarios

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_MODULUS",
    "FieldElement",
    "FieldModulus",
    "random_element",
    "Share",
    "SharePolynomial",
    "ThresholdConfig",
    "additive_split",
    "complement_views",
    "robust_n_for",
    "shamir_reconstruct",
    "shamir_split",
    "CommitmentVector",
    "VerifiableShare",
    "VssGroupParams",
    "generate_group",
    "vss_reconstruct",
    "vss_split",
    "vss_verify",
    "Custodian",
    "SealedState",
    "compute_kcv",
    "provision",
    "Deployment",
    "run_ceremony",
    "FaultRule",
    "FaultScript",
    "SimNetwork",
    "build_network",
    "run_session",
    "RequestMessage",
    "ResultMessage",
    "make_request",
    "run_attack_scenarios",
    "__version__",
]
