"""Verifiable secret sharing via discrete-log commitments.

Shares live in Z_q; commitments live in the order-q subgroup of Z_P*
generated by g, where q divides P - 1. Publishing g**a_j for each
polynomial coefficient lets any holder check its share against the
public vector without learning anything about the secret (under the
discrete-log assumption), and lets a reconstructor name exactly which
submitted shares are bad.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

from .field import FieldElement, FieldModulus, Rng, is_probable_prime
from .sharing import Share, SharePolynomial, ThresholdConfig, shamir_reconstruct, shamir_split

logger = logging.getLogger(__name__)

COMMITMENT_FILE_VERSION = 1

# Groups already validated in this process, keyed by (P, q, g).
_validated_groups: set[tuple[int, int, int]] = set()


class InvalidGroup(ValueError):
    """Group parameters failed validation."""


class InsufficientValidShares(Exception):
    """Too few shares survived verification to reach the threshold."""

    def __init__(self, needed: int, got: int, culprits: list[int]):
        self.needed = needed
        self.got = got
        self.culprits = sorted(culprits)
        super().__init__(
            f"needed {needed} valid shares, got {got}; rejected indices {self.culprits}"
        )


@dataclass(frozen=True)
class VssGroupParams:
    """Subgroup description (P, q, g): q prime, q | P-1, g of order q."""

    P: int
    q: int
    g: int

    def __post_init__(self) -> None:
        key = (self.P, self.q, self.g)
        if key in _validated_groups:
            return
        if not is_probable_prime(self.P):
            raise InvalidGroup("P is not prime")
        if not is_probable_prime(self.q):
            raise InvalidGroup("q is not prime")
        if (self.P - 1) % self.q != 0:
            raise InvalidGroup("q does not divide P - 1")
        if not 1 < self.g < self.P:
            raise InvalidGroup("generator outside (1, P)")
        if pow(self.g, self.q, self.P) != 1:
            raise InvalidGroup("generator does not have order q")
        _validated_groups.add(key)

    @cached_property
    def share_field(self) -> FieldModulus:
        """The exponent field Z_q that shares and secrets live in."""
        return FieldModulus(self.q)

    def contains(self, element: int) -> bool:
        """Membership test for the order-q subgroup."""
        return 1 <= element < self.P and pow(element, self.q, self.P) == 1

    def to_json_dict(self) -> dict:
        return {"P": _hex(self.P), "q": _hex(self.q), "g": _hex(self.g)}

    @classmethod
    def from_json_dict(cls, data: dict) -> VssGroupParams:
        return cls(P=int(data["P"], 16), q=int(data["q"], 16), g=int(data["g"], 16))


def _hex(n: int) -> str:
    return n.to_bytes(max(1, (n.bit_length() + 7) // 8), "big").hex()


# Hand-checkable toy group for tests and worked examples. Never deploy.
TOY_GROUP = VssGroupParams(P=23, q=11, g=2)


def generate_group(rng: Rng, p_bits: int = 2048, q_bits: int = 256) -> VssGroupParams:
    """Fresh (P, q, g) with P = q*c + 1, both primes, g of order q."""
    if q_bits < 8 or p_bits <= q_bits + 8:
        raise ValueError("implausible group sizes")
    while True:
        q = rng.getrandbits(q_bits) | (1 << (q_bits - 1)) | 1
        if is_probable_prime(q):
            break
    logger.debug("subgroup order chosen (%d bits)", q.bit_length())
    while True:
        c = rng.getrandbits(p_bits - q_bits)
        P = q * c + 1
        if P.bit_length() != p_bits or P % 2 == 0:
            continue
        # Cheap screen before the full check; most candidates die here.
        if not is_probable_prime(P, rounds=2):
            continue
        if is_probable_prime(P):
            break
    while True:
        h = rng.getrandbits(p_bits) % (P - 3) + 2
        g = pow(h, (P - 1) // q, P)
        if g != 1:
            break
    params = VssGroupParams(P=P, q=q, g=g)
    logger.info("generated group: %d-bit modulus, %d-bit subgroup", p_bits, q_bits)
    return params


@dataclass(frozen=True)
class CommitmentVector:
    """Public commitments g**a_0 .. g**a_{k-1} to polynomial coefficients."""

    values: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("empty commitment vector")

    @property
    def threshold(self) -> int:
        return len(self.values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class VerifiableShare:
    """A share bundled with the commitment vector it should satisfy."""

    share: Share
    commitments: CommitmentVector

    @property
    def index(self) -> int:
        return self.share.index


def commit_coefficients(poly: SharePolynomial, params: VssGroupParams) -> CommitmentVector:
    """g**a_j for each coefficient. Componentwise products of two vectors
    commit to the coefficient-wise sum of the two polynomials."""
    if poly.modulus.p != params.q:
        raise ValueError("polynomial is not over the exponent field Z_q")
    return CommitmentVector(tuple(pow(params.g, c.value, params.P) for c in poly.coefficients))


def vss_split(
    secret: FieldElement,
    cfg: ThresholdConfig,
    params: VssGroupParams,
    rng: Rng,
) -> tuple[list[VerifiableShare], CommitmentVector]:
    """Threshold-split a Z_q secret and publish coefficient commitments.

    The dealing polynomial is wiped before returning; only the shares
    and the public vector survive.
    """
    if secret.modulus.p != params.q:
        raise ValueError("secret must live in the exponent field Z_q")
    poly, shares = shamir_split(secret, cfg, rng)
    try:
        commitments = commit_coefficients(poly, params)
    finally:
        poly.wipe()
    return [VerifiableShare(s, commitments) for s in shares], commitments


def vss_verify(share: Share, commitments: CommitmentVector, params: VssGroupParams) -> bool:
    """Check g**value against the commitment product; False, never raise,
    for malformed inputs so callers can treat bad shares uniformly."""
    if share.value.modulus.p != params.q:
        return False
    lhs = pow(params.g, share.value.value, params.P)
    rhs = 1
    for j, c in enumerate(commitments.values):
        if not 1 <= c < params.P:
            return False
        exponent = pow(share.index, j, params.q)
        rhs = rhs * pow(c, exponent, params.P) % params.P
    return lhs == rhs


def vss_reconstruct(
    shares: list[VerifiableShare],
    k: int,
    commitments: CommitmentVector,
    params: VssGroupParams,
) -> tuple[FieldElement, list[int]]:
    """Reconstruct from the valid subset, naming every rejected index.

    Raises InsufficientValidShares (culprits attached) when fewer than k
    shares survive verification.
    """
    valid: list[Share] = []
    culprits: list[int] = []
    for vs in shares:
        if vss_verify(vs.share, commitments, params):
            valid.append(vs.share)
        else:
            culprits.append(vs.share.index)
    if len(valid) < k:
        raise InsufficientValidShares(k, len(valid), culprits)
    if culprits:
        logger.warning("rejected shares at indices %s", sorted(culprits))
    return shamir_reconstruct(valid, k), sorted(culprits)


# ---------------------------------------------------------------------------
# commitment file format
# ---------------------------------------------------------------------------


def commitments_to_json_dict(params: VssGroupParams, commitments: CommitmentVector) -> dict:
    return {
        "version": COMMITMENT_FILE_VERSION,
        **params.to_json_dict(),
        "commitments": [_hex(c) for c in commitments.values],
    }


def commitments_from_json_dict(data: dict) -> tuple[VssGroupParams, CommitmentVector]:
    if data.get("version") != COMMITMENT_FILE_VERSION:
        raise ValueError(f"unsupported commitments file version {data.get('version')!r}")
    params = VssGroupParams.from_json_dict(data)
    values = tuple(int(c, 16) for c in data["commitments"])
    vector = CommitmentVector(values)
    for c in values:
        if not params.contains(c):
            raise ValueError("commitment outside the order-q subgroup")
    return params, vector


def save_commitments(path: str | Path, params: VssGroupParams, commitments: CommitmentVector) -> None:
    Path(path).write_text(json.dumps(commitments_to_json_dict(params, commitments), indent=2) + "\n")


def load_commitments(path: str | Path) -> tuple[VssGroupParams, CommitmentVector]:
    return commitments_from_json_dict(json.loads(Path(path).read_text()))
