"""Stabilizer tableaux for graph states and exact product-basis sampling.

Rows are packed into ``uint64`` words (qubit ``i`` is bit ``i % 64`` of word
``i // 64``), so row products are word-wise XOR/AND plus popcounts.

Sampling a stabilizer state measured qubit-wise in Pauli bases is exact and
cheap: the outcome law is uniform on the affine subspace fixed by the
stabilizer elements that are diagonal in the measured bases.  Finding that
subgroup is one GF(2) elimination per setting; every shot after that costs a
single random linear combination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import GraphSpec
from .pauli import PauliString, bits_from_mask, pauli_product

__all__ = [
    "StabilizerTableau",
    "WitnessSetting",
    "AffineSampler",
    "stabilizer_of_vertex",
    "build_cluster_tableau",
    "sample_witness_setting",
    "witness_setting",
    "measure_setting",
    "setting_sampler",
    "propagate_depolarizing_frames",
    "pack_bits",
    "unpack_bits",
]

BASIS_CODES = {"I": 0, "X": 1, "Y": 2, "Z": 3}
_ONE = np.uint64(1)


def _words(n: int) -> int:
    return (n + 63) // 64


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a ``(..., n)`` 0/1 array into ``(..., ceil(n/64))`` uint64 words."""
    bits = np.asarray(bits, dtype=np.uint64)
    n = bits.shape[-1]
    pad = _words(n) * 64 - n
    if pad:
        bits = np.concatenate([bits, np.zeros(bits.shape[:-1] + (pad,), np.uint64)], axis=-1)
    bits = bits.reshape(bits.shape[:-1] + (_words(n), 64))
    shifts = np.arange(64, dtype=np.uint64)
    return np.bitwise_or.reduce(bits << shifts, axis=-1)


def unpack_bits(words: np.ndarray, n: int) -> np.ndarray:
    words = np.asarray(words, dtype=np.uint64)
    shifts = np.arange(64, dtype=np.uint64)
    bits = (words[..., None] >> shifts) & _ONE
    return bits.reshape(words.shape[:-1] + (words.shape[-1] * 64,))[..., :n].astype(np.uint8)


def _mask_to_words(mask: int, n: int) -> np.ndarray:
    return np.array([(mask >> (64 * w)) & 0xFFFFFFFFFFFFFFFF for w in range(_words(n))], dtype=np.uint64)


def _words_to_mask(words: np.ndarray) -> int:
    return sum(int(w) << (64 * i) for i, w in enumerate(words))


def _popcount(a: np.ndarray) -> np.ndarray:
    return np.bitwise_count(a).sum(axis=-1, dtype=np.int64)


def _row_products(px, pz, psign, rx, rz, rsign):
    """Multiply pivot row ``p`` into rows ``r`` (``p * r``), returning new rows.

    Signs are 0/1 bits; an imaginary result phase raises ``ArithmeticError``.
    """
    xo1, zo1, y1 = px & ~pz, pz & ~px, px & pz
    xo2, zo2, y2 = rx & ~rz, rz & ~rx, rx & rz
    plus = _popcount(xo1 & y2) + _popcount(zo1 & xo2) + _popcount(y1 & zo2)
    minus = _popcount(xo1 & zo2) + _popcount(zo1 & y2) + _popcount(y1 & xo2)
    phase = (plus - minus + 2 * (int(psign) + rsign.astype(np.int64))) % 4
    if np.any(phase % 2):
        raise ArithmeticError("row product left an imaginary phase (rows do not commute)")
    return px ^ rx, pz ^ rz, (phase // 2).astype(np.uint8)


@dataclass(eq=False)
class StabilizerTableau:
    """Stabilizer generators of an ``n``-qubit state in packed symplectic form.

    ``x``/``z`` have shape ``(n, words)``; ``signs[i] = 1`` means generator
    ``i`` carries a minus sign.
    """

    n: int
    x: np.ndarray
    z: np.ndarray
    signs: np.ndarray

    @classmethod
    def from_paulis(cls, rows: list[PauliString]) -> "StabilizerTableau":
        n = rows[0].n
        if len(rows) != n:
            raise ValueError(f"need {n} generators, got {len(rows)}")
        x = np.stack([_mask_to_words(p.x, n) for p in rows])
        z = np.stack([_mask_to_words(p.z, n) for p in rows])
        signs = np.array([0 if p.sign > 0 else 1 for p in rows], dtype=np.uint8)
        return cls(n, x, z, signs)

    @property
    def x_matrix(self) -> np.ndarray:
        return unpack_bits(self.x, self.n).astype(bool)

    @property
    def z_matrix(self) -> np.ndarray:
        return unpack_bits(self.z, self.n).astype(bool)

    @property
    def phase(self) -> np.ndarray:
        return self.signs.copy()

    def row(self, i: int) -> PauliString:
        return PauliString(self.n, _words_to_mask(self.x[i]), _words_to_mask(self.z[i]),
                           -1 if self.signs[i] else 1)

    def rows(self) -> list[PauliString]:
        return [self.row(i) for i in range(self.n)]

    def commutation_matrix(self) -> np.ndarray:
        """Symplectic inner products of all row pairs (0 = commute)."""
        xm = self.x_matrix.astype(np.int64)
        zm = self.z_matrix.astype(np.int64)
        return (xm @ zm.T + zm @ xm.T) % 2

    def rank(self) -> int:
        m = np.concatenate([self.x_matrix, self.z_matrix], axis=1).astype(np.uint8)
        return _gf2_rank(m)

    def is_valid(self) -> bool:
        return self.rank() == self.n and not self.commutation_matrix().any()

    def product(self, subset) -> PauliString:
        """Signed product of the generators selected by a 0/1 vector."""
        idx = np.flatnonzero(np.asarray(subset))
        if idx.size == 0:
            return PauliString.identity(self.n)
        return pauli_product([self.row(int(i)) for i in idx])


def _gf2_rank(m: np.ndarray) -> int:
    m = m.copy() % 2
    rank = 0
    rows, cols = m.shape
    for c in range(cols):
        piv = np.flatnonzero(m[rank:, c])
        if piv.size == 0:
            continue
        p = rank + piv[0]
        m[[rank, p]] = m[[p, rank]]
        hit = np.flatnonzero(m[:, c])
        hit = hit[hit != rank]
        m[hit] ^= m[rank]
        rank += 1
        if rank == rows:
            break
    return rank


def stabilizer_of_vertex(graph: GraphSpec, i: int) -> PauliString:
    """``X`` on ``i`` and ``Z`` on each neighbour of ``i``."""
    if not 0 <= i < graph.n:
        raise IndexError(f"vertex {i} out of range for n={graph.n}")
    z = 0
    for j in graph.neighbors(i):
        z |= 1 << j
    return PauliString(graph.n, 1 << i, z, 1)


def build_cluster_tableau(graph: GraphSpec) -> StabilizerTableau:
    return StabilizerTableau.from_paulis([stabilizer_of_vertex(graph, i) for i in range(graph.n)])


@dataclass(frozen=True)
class WitnessSetting:
    """A random stabilizer-group element and the local bases it needs."""

    subset: tuple[int, ...]
    pauli: PauliString
    per_qubit_basis: str

    @property
    def n(self) -> int:
        return self.pauli.n

    @property
    def support_bits(self) -> np.ndarray:
        return bits_from_mask(self.pauli.support, self.pauli.n).astype(bool)


def _basis_string(p: PauliString) -> str:
    return p.letters()


def witness_setting(tableau: StabilizerTableau, subset) -> WitnessSetting:
    subset = tuple(int(b) & 1 for b in subset)
    if len(subset) != tableau.n:
        raise ValueError("subset length must equal n")
    pauli = tableau.product(subset)
    return WitnessSetting(subset, pauli, _basis_string(pauli))


def sample_witness_setting(graph_or_tableau, rng) -> WitnessSetting:
    """Include each stabilizer generator independently with probability 1/2."""
    tableau = graph_or_tableau
    if isinstance(graph_or_tableau, GraphSpec):
        tableau = build_cluster_tableau(graph_or_tableau)
    rng = np.random.default_rng(rng)
    subset = rng.integers(0, 2, size=tableau.n)
    return witness_setting(tableau, subset)


class AffineSampler:
    """Uniform sampler over ``{offset + c @ basis : c in GF(2)^k}``."""

    def __init__(self, n: int, offset: np.ndarray, basis: np.ndarray):
        self.n = n
        self.offset = offset.astype(np.uint8)
        self.basis = basis.astype(np.uint8).reshape(-1, n)

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    def sample(self, shots: int, rng) -> np.ndarray:
        rng = np.random.default_rng(rng)
        k = self.dimension
        if k == 0:
            return np.repeat(self.offset[None, :], shots, axis=0)
        coeffs = rng.integers(0, 2, size=(shots, k), dtype=np.uint8)
        # float32 matmul is exact here: entries are sums of at most k <= 2^24 ones
        out = (coeffs.astype(np.float32) @ self.basis.astype(np.float32)).astype(np.int64)
        return ((out & 1).astype(np.uint8)) ^ self.offset

    def enumerate(self) -> np.ndarray:
        """All ``2^k`` outcomes (small ``k`` only)."""
        k = self.dimension
        if k > 20:
            raise ValueError("affine space too large to enumerate")
        coeffs = ((np.arange(2 ** k)[:, None] >> np.arange(k)[None, :]) & 1).astype(np.int64)
        out = (coeffs @ self.basis.astype(np.int64)) & 1
        return out.astype(np.uint8) ^ self.offset

    def probabilities(self) -> dict[tuple[int, ...], float]:
        pts = self.enumerate()
        p = 1.0 / len(pts)
        return {tuple(int(b) for b in row): p for row in pts}


def _basis_codes(bases) -> np.ndarray:
    if isinstance(bases, str):
        return np.array([BASIS_CODES[c] for c in bases], dtype=np.int8)
    return np.asarray(bases, dtype=np.int8)


def setting_sampler(tableau: StabilizerTableau, bases) -> AffineSampler:
    """Exact outcome law of ``tableau`` measured in per-qubit Pauli bases.

    ``I`` qubits are measured in ``Z``.
    """
    n = tableau.n
    codes = _basis_codes(bases)
    if codes.shape != (n,):
        raise ValueError(f"need {n} bases, got {codes.shape}")
    on_x = pack_bits(codes == 1)
    on_y = pack_bits(codes == 2)
    on_z = pack_bits((codes == 3) | (codes == 0))
    x, z, s = tableau.x.copy(), tableau.z.copy(), tableau.signs.copy()
    # "bad" bits: a generator component that does not commute with the local basis
    bad = (z & on_x) | ((x ^ z) & on_y) | (x & on_z)
    free = np.ones(n, dtype=bool)
    for c in range(n):
        w, b = divmod(c, 64)
        col = ((bad[:, w] >> np.uint64(b)) & _ONE).astype(bool) & free
        hits = np.flatnonzero(col)
        if hits.size == 0:
            continue
        p, rest = hits[0], hits[1:]
        free[p] = False
        if rest.size:
            x[rest], z[rest], s[rest] = _row_products(x[p], z[p], s[p], x[rest], z[rest], s[rest])
            bad[rest] ^= bad[p]
    keep = np.flatnonzero(free)
    a = unpack_bits(x[keep] | z[keep], n)
    rhs = s[keep]
    return _affine_solutions(a, rhs, n)


def _affine_solutions(a: np.ndarray, rhs: np.ndarray, n: int) -> AffineSampler:
    """Solution set of ``a @ s = rhs`` over GF(2) as offset + span(basis)."""
    m = np.concatenate([a, rhs[:, None]], axis=1).astype(np.uint8)
    pivots: list[int] = []
    r = 0
    for c in range(n):
        if r == m.shape[0]:
            break
        piv = np.flatnonzero(m[r:, c])
        if piv.size == 0:
            continue
        p = r + piv[0]
        if p != r:
            m[[r, p]] = m[[p, r]]
        hit = np.flatnonzero(m[:, c])
        hit = hit[hit != r]
        m[hit] ^= m[r]
        pivots.append(c)
        r += 1
    if np.any(m[r:, n]):
        raise ArithmeticError("inconsistent stabilizer constraints")
    offset = np.zeros(n, dtype=np.uint8)
    offset[pivots] = m[:r, n]
    free_cols = [c for c in range(n) if c not in set(pivots)]
    basis = np.zeros((len(free_cols), n), dtype=np.uint8)
    for i, f in enumerate(free_cols):
        basis[i, f] = 1
        basis[i, pivots] = m[:r, f]
    return AffineSampler(n, offset, basis)


def propagate_depolarizing_frames(graph: GraphSpec, p: float, shots: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Pauli error frames accumulated while preparing the cluster state.

    After every CZ layer each qubit it touched receives, with probability
    ``p``, a uniformly random non-identity Pauli.  Earlier errors are pushed
    through later layers (``CZ: X_a -> X_a Z_b``).  Returns ``(fx, fz)``
    arrays of shape ``(shots, n)`` describing the frame at measurement time.
    """
    rng = np.random.default_rng(rng)
    n = graph.n
    fx = np.zeros((shots, n), dtype=np.uint8)
    fz = np.zeros((shots, n), dtype=np.uint8)
    if p <= 0:
        return fx, fz
    for layer in graph.cz_patterns:
        if not layer:
            continue
        a = np.array([e[0] for e in layer])
        b = np.array([e[1] for e in layer])
        fz[:, a] ^= fx[:, b]
        fz[:, b] ^= fx[:, a]
        touched = np.concatenate([a, b])
        hit = rng.random((shots, touched.size)) < p
        kind = rng.integers(1, 4, size=(shots, touched.size))  # 1=X 2=Y 3=Z
        fx[:, touched] ^= (hit & (kind <= 2)).astype(np.uint8)
        fz[:, touched] ^= (hit & (kind >= 2)).astype(np.uint8)
    return fx, fz


def frame_flips(fx: np.ndarray, fz: np.ndarray, bases) -> np.ndarray:
    """Outcome flips caused by error frames for the given measurement bases."""
    codes = _basis_codes(bases)
    on_x = codes == 1
    on_y = codes == 2
    on_z = (codes == 3) | (codes == 0)
    return (fz & on_x) | ((fx ^ fz) & on_y) | (fx & on_z)


def measure_setting(tableau: StabilizerTableau, setting: WitnessSetting, shots: int, rng,
                    depolarizing: tuple[GraphSpec, float] | None = None) -> np.ndarray:
    """Raw outcome bits, shape ``(shots, n)``.

    ``depolarizing=(graph, p)`` adds the preparation error frames of
    :func:`propagate_depolarizing_frames`.
    """
    if setting.n != tableau.n:
        raise ValueError(f"setting has n={setting.n}, tableau has n={tableau.n}")
    rng = np.random.default_rng(rng)
    bits = setting_sampler(tableau, setting.per_qubit_basis).sample(shots, rng)
    if depolarizing is not None:
        graph, p = depolarizing
        if p > 0:
            fx, fz = propagate_depolarizing_frames(graph, p, shots, rng)
            bits ^= frame_flips(fx, fz, setting.per_qubit_basis)
    return bits
