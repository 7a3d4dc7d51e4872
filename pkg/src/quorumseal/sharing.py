"""Secret splitting over a prime field.

Two schemes: additive n-of-n splitting (every addend required, with the
complement-distribution layout where holder j receives every addend
except the j-th), and polynomial (k, n)-threshold splitting where any k
of n evaluations reconstruct the secret by Lagrange interpolation at 0
and any k-1 reveal nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from .field import FieldElement, FieldModulus, ModulusMismatch, Rng, random_element

SHARE_FILE_VERSION = 1


class InsufficientShares(ValueError):
    """Fewer shares supplied than the threshold requires."""


class DuplicateShareIndex(ValueError):
    """Two shares claim the same evaluation index."""


@dataclass(frozen=True)
class ThresholdConfig:
    """k-of-n policy: any k of the n issued shares unlock."""

    k: int
    n: int

    def __post_init__(self) -> None:
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k} n={self.n}")


def robust_n_for(k: int) -> int:
    """Share count tolerating k-1 lost and k-1 corrupted holders at once."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return 2 * k - 1


@dataclass(frozen=True)
class Share:
    """One polynomial evaluation: value = q(index), index >= 1."""

    index: int
    value: FieldElement

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"share index must be >= 1, got {self.index}")

    @property
    def modulus(self) -> FieldModulus:
        return self.value.modulus

    def to_json_dict(self) -> dict:
        return {
            "version": SHARE_FILE_VERSION,
            "index": self.index,
            "value": self.value.to_hex(),
            "modulus": self.modulus.p.to_bytes(self.modulus.byte_length, "big").hex(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> Share:
        if data.get("version") != SHARE_FILE_VERSION:
            raise ValueError(f"unsupported share file version {data.get('version')!r}")
        modulus = FieldModulus(int(data["modulus"], 16))
        value = modulus.element(int(data["value"], 16))
        return cls(index=int(data["index"]), value=value)


def save_share(path: str | Path, share: Share) -> None:
    Path(path).write_text(json.dumps(share.to_json_dict(), indent=2) + "\n")


def load_share(path: str | Path) -> Share:
    return Share.from_json_dict(json.loads(Path(path).read_text()))


class SharePolynomial:
    """Random polynomial of degree k-1 with the secret as constant term.

    Mutable on purpose: ceremony code wipes the coefficients once shares
    and commitments are derived. Python cannot guarantee erasure of the
    underlying integers, so the wipe is best effort.
    """

    def __init__(self, coefficients: list[FieldElement]):
        if not coefficients:
            raise ValueError("polynomial needs at least the constant term")
        moduli = {c.modulus for c in coefficients}
        if len(moduli) != 1:
            raise ModulusMismatch("mixed moduli in one polynomial")
        self.coefficients = list(coefficients)

    @property
    def modulus(self) -> FieldModulus:
        return self.coefficients[0].modulus

    @property
    def secret(self) -> FieldElement:
        return self.coefficients[0]

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def evaluate(self, x: int) -> FieldElement:
        p = self.modulus.p
        acc = 0
        for coeff in reversed(self.coefficients):
            acc = (acc * x + coeff.value) % p
        return self.modulus.element(acc)

    def wipe(self) -> None:
        """Replace every coefficient with zero and drop the references."""
        zero = self.modulus.zero()
        for i in range(len(self.coefficients)):
            self.coefficients[i] = zero
        self.coefficients.clear()

    @classmethod
    def random(cls, secret: FieldElement, k: int, rng: Rng) -> SharePolynomial:
        if k < 1:
            raise ValueError("threshold must be at least 1")
        # The leading coefficient is drawn uniformly and may be zero; the
        # effective degree can drop below k-1 without harm.
        coeffs = [secret]
        coeffs += [random_element(secret.modulus, rng) for _ in range(k - 1)]
        return cls(coeffs)


# ---------------------------------------------------------------------------
# additive n-of-n splitting
# ---------------------------------------------------------------------------


def additive_split(secret: FieldElement, n: int, rng: Rng) -> list[FieldElement]:
    """Split into n addends: the first n-1 uniform, the last the difference."""
    if n < 2:
        raise ValueError("additive splitting needs at least 2 addends")
    addends = [random_element(secret.modulus, rng) for _ in range(n - 1)]
    last = secret
    for a in addends:
        last = last - a
    addends.append(last)
    return addends


def additive_combine(addends: list[FieldElement]) -> FieldElement:
    if not addends:
        raise ValueError("nothing to combine")
    total = addends[0]
    for a in addends[1:]:
        total = total + a
    return total


def complement_views(addends: list[FieldElement], n: int) -> dict[int, dict[int, FieldElement]]:
    """Holder j's view: every addend except the j-th.

    Any n-1 holders jointly miss one addend, so the sum stays hidden
    until all n cooperate.
    """
    if len(addends) != n:
        raise ValueError(f"expected {n} addends, got {len(addends)}")
    views: dict[int, dict[int, FieldElement]] = {}
    for j in range(1, n + 1):
        views[j] = {i: addends[i - 1] for i in range(1, n + 1) if i != j}
    return views


# ---------------------------------------------------------------------------
# (k, n) threshold splitting
# ---------------------------------------------------------------------------


def shamir_split(
    secret: FieldElement, cfg: ThresholdConfig, rng: Rng
) -> tuple[SharePolynomial, list[Share]]:
    """Issue shares q(1) .. q(n) of a fresh degree k-1 polynomial.

    The polynomial is returned so ceremony code can derive commitments
    before wiping it; ordinary callers should wipe it immediately.
    """
    if cfg.n >= secret.modulus.p:
        raise ValueError(f"n={cfg.n} needs more distinct indices than Z_{secret.modulus.p} has")
    poly = SharePolynomial.random(secret, cfg.k, rng)
    shares = [Share(i, poly.evaluate(i)) for i in range(1, cfg.n + 1)]
    return poly, shares


def shamir_reconstruct(shares: list[Share], k: int) -> FieldElement:
    """Interpolate q(0) from the k lowest-index shares supplied.

    Extra shares beyond k are ignored here; consistency checking of an
    oversupplied set belongs to the commitment layer, which can tell a
    bad share from a bad secret.
    """
    if k < 1:
        raise ValueError("threshold must be at least 1")
    shares = list(shares)
    if len(shares) < k:
        raise InsufficientShares(f"need {k} shares, got {len(shares)}")
    moduli = {s.modulus for s in shares}
    if len(moduli) != 1:
        raise ModulusMismatch("shares from different fields")
    indices = [s.index for s in shares]
    if len(set(indices)) != len(indices):
        dupes = sorted({i for i in indices if indices.count(i) > 1})
        raise DuplicateShareIndex(f"duplicate share indices {dupes}")
    chosen = sorted(shares, key=lambda s: s.index)[:k]
    modulus = chosen[0].modulus
    p = modulus.p
    # Lagrange at x=0: sum_i y_i * prod_{j != i} x_j / (x_j - x_i).
    acc = 0
    for i, si in enumerate(chosen):
        num = 1
        den = 1
        for j, sj in enumerate(chosen):
            if j == i:
                continue
            num = num * sj.index % p
            den = den * (sj.index - si.index) % p
        acc = (acc + si.value.value * num % p * pow(den, p - 2, p)) % p
    return modulus.element(acc)
