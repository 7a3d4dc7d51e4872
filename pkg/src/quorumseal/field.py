"""Prime-field arithmetic over Z_p on arbitrary-precision integers.

One code path serves hand-checkable test primes (13, 17, 251) and
production 256-bit moduli alike. Elements are immutable, compare only
within the same field, and encode to minimal big-endian bytes.

Arithmetic here is not constant-time; timing side channels are out of
scope for this library.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from typing import Protocol


class Rng(Protocol):
    """Entropy source. random.Random(seed) for replayable tests,
    secrets.SystemRandom() for production draws."""

    def getrandbits(self, k: int) -> int: ...


def system_rng() -> Rng:
    return secrets.SystemRandom()


def rand_bytes(rng: Rng, n: int) -> bytes:
    """n uniform bytes from any Rng, including ones without randbytes()."""
    if n < 0:
        raise ValueError("byte count must be non-negative")
    if n == 0:
        return b""
    return rng.getrandbits(8 * n).to_bytes(n, "big")


class NotPrime(ValueError):
    """Modulus failed the primality check."""


class ModulusMismatch(ValueError):
    """Binary operation attempted across two different fields."""


def _small_primes(limit: int = 1000) -> tuple[int, ...]:
    sieve = bytearray(b"\x01") * limit
    sieve[0:2] = b"\x00\x00"
    for i in range(2, int(limit**0.5) + 1):
        if sieve[i]:
            sieve[i * i :: i] = b"\x00" * len(sieve[i * i :: i])
    return tuple(i for i in range(limit) if sieve[i])


_SMALL_PRIMES = _small_primes()

# 40 rounds of Miller-Rabin: error probability <= 4**-40 = 2**-80.
MILLER_RABIN_ROUNDS = 40


def is_probable_prime(n: int, rounds: int = MILLER_RABIN_ROUNDS) -> bool:
    """Miller-Rabin with random bases after small-prime trial division."""
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    # n is odd and > 1000 here. Write n - 1 = d * 2**s with d odd.
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = secrets.randbelow(n - 3) + 2
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


# Moduli that already passed the check in this process; saves re-running
# Miller-Rabin every time a share file or sealed state is loaded.
_checked_primes: set[int] = set()


@dataclass(frozen=True)
class FieldModulus:
    """A prime p defining the field Z_p. Validated on construction."""

    p: int

    def __post_init__(self) -> None:
        if not isinstance(self.p, int) or self.p < 3:
            raise NotPrime(f"modulus must be an odd prime, got {self.p!r}")
        if self.p not in _checked_primes:
            if not is_probable_prime(self.p):
                raise NotPrime(f"modulus {self.p} is not prime")
            _checked_primes.add(self.p)

    @property
    def byte_length(self) -> int:
        return max(1, (self.p.bit_length() + 7) // 8)

    def element(self, value: int) -> FieldElement:
        """Reduce an integer into this field."""
        return FieldElement(value % self.p, self)

    def zero(self) -> FieldElement:
        return FieldElement(0, self)

    def one(self) -> FieldElement:
        return FieldElement(1, self)

    def __repr__(self) -> str:  # 256-bit moduli are unreadable in full
        if self.p.bit_length() <= 64:
            return f"FieldModulus({self.p})"
        return f"FieldModulus(<{self.p.bit_length()}-bit prime>)"


@dataclass(frozen=True)
class FieldElement:
    """An element of Z_p. Use FieldModulus.element() to reduce raw ints."""

    value: int
    modulus: FieldModulus

    def __post_init__(self) -> None:
        if not 0 <= self.value < self.modulus.p:
            raise ValueError(f"value {self.value} outside [0, {self.modulus.p})")

    def _coerce(self, other: object) -> FieldElement:
        if isinstance(other, FieldElement):
            if other.modulus != self.modulus:
                raise ModulusMismatch(
                    f"operands in different fields: {self.modulus} vs {other.modulus}"
                )
            return other
        if isinstance(other, int):
            return self.modulus.element(other)
        return NotImplemented  # type: ignore[return-value]

    def __add__(self, other: object) -> FieldElement:
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return FieldElement((self.value + o.value) % self.modulus.p, self.modulus)

    __radd__ = __add__

    def __sub__(self, other: object) -> FieldElement:
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return FieldElement((self.value - o.value) % self.modulus.p, self.modulus)

    def __rsub__(self, other: object) -> FieldElement:
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return o - self

    def __neg__(self) -> FieldElement:
        return FieldElement((-self.value) % self.modulus.p, self.modulus)

    def __mul__(self, other: object) -> FieldElement:
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return FieldElement(self.value * o.value % self.modulus.p, self.modulus)

    __rmul__ = __mul__

    def __pow__(self, exponent: int) -> FieldElement:
        # Built-in pow handles negative exponents via the modular inverse.
        return FieldElement(pow(self.value, exponent, self.modulus.p), self.modulus)

    def inverse(self) -> FieldElement:
        """Multiplicative inverse; ZeroDivisionError for the zero element."""
        if self.value == 0:
            raise ZeroDivisionError("zero has no multiplicative inverse")
        return FieldElement(pow(self.value, self.modulus.p - 2, self.modulus.p), self.modulus)

    def __truediv__(self, other: object) -> FieldElement:
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self * o.inverse()

    def to_bytes(self) -> bytes:
        """Minimal-length big-endian encoding (at least one byte)."""
        return self.value.to_bytes(max(1, (self.value.bit_length() + 7) // 8), "big")

    def to_hex(self) -> str:
        return self.to_bytes().hex()

    def __repr__(self) -> str:
        return f"FieldElement({self.value} mod {self.modulus.p})"


def random_element(modulus: FieldModulus, rng: Rng) -> FieldElement:
    """Uniform element of Z_p by rejection sampling over bit_length(p) draws."""
    bits = modulus.p.bit_length()
    while True:
        candidate = rng.getrandbits(bits)
        if candidate < modulus.p:
            return FieldElement(candidate, modulus)


# Smallest k with 2**256 - k prime; revalidated against an independent
# oracle in the test suite.
DEFAULT_MODULUS = FieldModulus(2**256 - 189)
