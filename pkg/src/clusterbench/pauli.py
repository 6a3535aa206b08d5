"""Hermitian Pauli strings stored as bit-packed X/Z masks.

Bit ``i`` of ``x``/``z`` refers to qubit ``i``.  A qubit with both bits set
carries a ``Y`` (not ``XZ``), so every string with ``sign = +-1`` is Hermitian.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PauliString",
    "PauliPhaseError",
    "pauli_product",
    "product_phase",
    "mask_from_bits",
    "bits_from_mask",
]

_LETTERS = {(0, 0): "I", (1, 0): "X", (0, 1): "Z", (1, 1): "Y"}
_MATS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class PauliPhaseError(ValueError):
    """Raised when a product of Pauli strings ends with phase +-i."""


def mask_from_bits(bits: Iterable[int]) -> int:
    mask = 0
    for i, b in enumerate(bits):
        if b:
            mask |= 1 << i
    return mask


def bits_from_mask(mask: int, n: int) -> np.ndarray:
    return np.array([(mask >> i) & 1 for i in range(n)], dtype=np.uint8)


def product_phase(x1: int, z1: int, x2: int, z2: int) -> int:
    """Power of ``i`` (mod 4) picked up by ``P1 * P2`` on the bare letters.

    Per qubit: X*Y = iZ, Y*Z = iX, Z*X = iY and the reversed orders give -i.
    """
    xo1, zo1, y1 = x1 & ~z1, z1 & ~x1, x1 & z1
    xo2, zo2, y2 = x2 & ~z2, z2 & ~x2, x2 & z2
    plus = (xo1 & y2).bit_count() + (zo1 & xo2).bit_count() + (y1 & zo2).bit_count()
    minus = (xo1 & zo2).bit_count() + (zo1 & y2).bit_count() + (y1 & xo2).bit_count()
    return (plus - minus) % 4


@dataclass(frozen=True)
class PauliString:
    n: int
    x: int = 0
    z: int = 0
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")
        limit = 1 << self.n
        if not (0 <= self.x < limit and 0 <= self.z < limit):
            raise ValueError("mask has bits beyond n")

    @classmethod
    def identity(cls, n: int) -> "PauliString":
        return cls(n)

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        """Parse ``"+ZXZ"``, ``"-YIX"`` or an unsigned ``"XZ"``; qubit 0 first."""
        sign = 1
        if label and label[0] in "+-":
            sign = -1 if label[0] == "-" else 1
            label = label[1:]
        x = z = 0
        for i, ch in enumerate(label.upper()):
            if ch in "XY":
                x |= 1 << i
            if ch in "ZY":
                z |= 1 << i
            if ch not in "IXYZ":
                raise ValueError(f"bad Pauli letter {ch!r}")
        return cls(len(label), x, z, sign)

    @classmethod
    def single(cls, n: int, letters: dict[int, str], sign: int = 1) -> "PauliString":
        """Build from a sparse ``{qubit: letter}`` map."""
        x = z = 0
        for q, ch in letters.items():
            if not 0 <= q < n:
                raise IndexError(f"qubit {q} out of range for n={n}")
            if ch in "XY":
                x |= 1 << q
            if ch in "ZY":
                z |= 1 << q
        return cls(n, x, z, sign)

    @property
    def support(self) -> int:
        return self.x | self.z

    @property
    def weight(self) -> int:
        return self.support.bit_count()

    def letter(self, q: int) -> str:
        return _LETTERS[((self.x >> q) & 1, (self.z >> q) & 1)]

    def letters(self) -> str:
        return "".join(self.letter(q) for q in range(self.n))

    def label(self) -> str:
        return ("+" if self.sign > 0 else "-") + self.letters()

    def __str__(self) -> str:
        return self.label()

    def is_identity(self) -> bool:
        return self.x == 0 and self.z == 0

    def commutes(self, other: "PauliString") -> bool:
        return ((self.x & other.z).bit_count() + (self.z & other.x).bit_count()) % 2 == 0

    def __mul__(self, other: "PauliString") -> "PauliString":
        return pauli_product([self, other])

    def __neg__(self) -> "PauliString":
        return PauliString(self.n, self.x, self.z, -self.sign)

    def x_bits(self) -> np.ndarray:
        return bits_from_mask(self.x, self.n)

    def z_bits(self) -> np.ndarray:
        return bits_from_mask(self.z, self.n)

    def to_matrix(self) -> np.ndarray:
        """Dense ``2^n x 2^n`` matrix, qubit 0 as the most significant factor."""
        if self.n > 14:
            raise ValueError("dense Pauli matrix limited to n <= 14")
        mats = [_MATS[self.letter(q)] for q in range(self.n)]
        return self.sign * reduce(np.kron, mats, np.eye(1, dtype=complex))


def pauli_product(terms: Sequence[PauliString]) -> PauliString:
    """Left-to-right product of Pauli strings.

    The phase is tracked mod 4 in powers of ``i``; a result with an imaginary
    phase is not a Hermitian string and raises :class:`PauliPhaseError`.
    """
    if not terms:
        raise ValueError("pauli_product needs at least one term")
    n = terms[0].n
    x = z = 0
    phase = 0
    for t in terms:
        if t.n != n:
            raise ValueError(f"qubit count mismatch: {t.n} != {n}")
        phase += product_phase(x, z, t.x, t.z) + (0 if t.sign > 0 else 2)
        x ^= t.x
        z ^= t.z
    phase %= 4
    if phase % 2:
        raise PauliPhaseError(f"product has phase {'+i' if phase == 1 else '-i'}")
    return PauliString(n, x, z, 1 if phase == 0 else -1)
