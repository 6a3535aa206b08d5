"""Dense-statevector reference implementations used to check the fast paths.

Everything here is deliberately naive: full ``2^n`` vectors, explicit
matrices, exhaustive enumeration.  Qubit 0 is the most significant bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .graphs import GraphSpec
from .noise import ReadoutNoiseModel, channel_matrix
from .pauli import PauliString
from .tableau import WitnessSetting
from .teleport import TeleportConfig, WireProgram, build_wire_circuit, input_clifford

__all__ = [
    "MAX_DENSE",
    "MAX_BRANCH",
    "DenseState",
    "MbqcReport",
    "MBQC_PATTERNS",
    "dense_run",
    "dense_outcome_distribution",
    "cluster_state",
    "setting_distribution",
    "feedforward_fidelity",
    "verify_mbqc_pattern",
    "dense_apply_inverse",
    "depolarized_cluster_fidelity",
    "bit_index",
]

MAX_DENSE = 14
MAX_BRANCH = 9

_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.diag([1.0 + 0j, -1.0])
_PAULI = {"X": _X, "Y": np.array([[0, -1j], [1j, 0]]), "Z": _Z}


def _check_size(n: int, cap: int = MAX_DENSE) -> None:
    if n > cap:
        raise ValueError(f"dense oracle limited to {cap} qubits, got {n}")


@dataclass
class DenseState:
    n: int
    amplitudes: np.ndarray

    def __post_init__(self):
        _check_size(self.n)
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(2 ** self.n)
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1) > 1e-12:
            raise ValueError(f"state norm {norm} is not 1")

    @classmethod
    def product(cls, vectors) -> "DenseState":
        return cls(len(vectors), reduce(np.kron, vectors, np.ones(1, dtype=complex)))

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((2,) * self.n)

    def apply(self, qubits, mat: np.ndarray) -> None:
        qubits = list(qubits)
        k = len(qubits)
        t = np.moveaxis(self.tensor(), qubits, range(k))
        shape = t.shape
        t = (np.asarray(mat).reshape(2 ** k, 2 ** k) @ t.reshape(2 ** k, -1)).reshape(shape)
        self.amplitudes = np.moveaxis(t, range(k), qubits).reshape(-1)

    def cz(self, a: int, b: int) -> None:
        self.apply((a, b), np.diag([1, 1, 1, -1]).astype(complex))

    def expectation(self, pauli: PauliString) -> float:
        return float(np.real(np.vdot(self.amplitudes, pauli.to_matrix() @ self.amplitudes)))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def bit_index(bits) -> int:
    out = 0
    for b in bits:
        out = 2 * out + int(b)
    return out


def dense_run(program: WireProgram) -> tuple[DenseState, dict[int, np.ndarray]]:
    """Unitary part of a wire program on the full register.

    Returns the pre-measurement state and each qubit's measurement basis.
    Measurements are deferred, which is valid because the program never
    touches a qubit after measuring it.
    """
    n1 = program.num_qubits
    _check_size(n1)
    preps: dict[int, np.ndarray] = {}
    bases: dict[int, np.ndarray] = {}
    gates = []
    for op in program.ops:
        tag = op[0]
        if tag == "prep":
            preps[op[1]] = op[2]
        elif tag == "measure":
            bases[op[1]] = op[2]
        else:
            qs = (op[1], op[2]) if tag == "cz" else tuple(op[1])
            if any(q in bases for q in qs):
                raise ValueError("program acts on an already measured qubit")
            gates.append((tag, qs, None if tag == "cz" else op[2]))
    state = DenseState.product([preps[q] for q in range(n1)])
    for tag, qs, mat in gates:
        if tag == "cz":
            state.cz(*qs)
        else:
            state.apply(qs, mat)
    return state, bases


def dense_outcome_distribution(program: WireProgram) -> dict[tuple[int, ...], float]:
    state, bases = dense_run(program)
    for q, v in bases.items():
        state.apply((q,), v.conj().T)
    probs = state.probabilities()
    n1 = program.num_qubits
    out = {}
    for idx in np.flatnonzero(probs > 0):
        out[tuple((int(idx) >> (n1 - 1 - q)) & 1 for q in range(n1))] = float(probs[idx])
    return out


def cluster_state(graph: GraphSpec) -> DenseState:
    _check_size(graph.n)
    plus = np.array([1, 1], dtype=complex) / math.sqrt(2)
    state = DenseState.product([plus] * graph.n)
    for a, b in graph.edges:
        state.cz(a, b)
    return state


def setting_distribution(graph: GraphSpec, setting: WitnessSetting) -> dict[tuple[int, ...], float]:
    """Born law of the cluster state measured in the setting's local bases (``I`` -> ``Z``)."""
    state = cluster_state(graph)
    for q, letter in enumerate(setting.per_qubit_basis):
        if letter == "X":
            state.apply((q,), _H)
        elif letter == "Y":
            state.apply((q,), _H @ np.diag([1, -1j]))
    probs = state.probabilities()
    n = graph.n
    return {tuple((int(i) >> (n - 1 - q)) & 1 for q in range(n)): float(probs[i]) for i in np.flatnonzero(probs > 1e-15)}


def feedforward_fidelity(config: TeleportConfig) -> float:
    """Exact fidelity of the wire with adaptive Pauli correction.

    For every outcome string ``s`` of qubits ``0..n-1`` the unnormalised
    output ``phi_s`` is compared with ``B_s |psi_in>`` where
    ``B_s = X^{s_{n-1}} H ... X^{s_0} H`` is the ideal wire map.
    """
    n = config.n
    _check_size(n, MAX_BRANCH)
    program = build_wire_circuit(config)
    state, bases = dense_run(program)
    for q in range(n):
        state.apply((q,), bases[q].conj().T)
    phi = state.amplitudes.reshape(2 ** n, 2)
    s = ((np.arange(2 ** n)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1).astype(bool)
    psi_in = input_clifford(config.input_label)[:, 0]
    ideal = np.tile(psi_in, (2 ** n, 1))
    for j in range(n):
        ideal = ideal @ _H.T
        ideal[s[:, j]] = ideal[s[:, j]][:, ::-1]
    overlaps = np.sum(ideal.conj() * phi, axis=1)
    return float(np.sum(np.abs(overlaps) ** 2))


@dataclass
class MbqcReport:
    pattern: str
    passed: bool
    max_error: float
    branches: int
    inputs: int
    byproducts: dict = field(default_factory=dict)


MBQC_PATTERNS = {
    # name: (qubits, input qubits, CZ edges, measured qubits, output qubits, target gate)
    "identity_wire": (3, (0,), ((0, 1), (1, 2)), (0, 1), (2,), np.eye(2, dtype=complex)),
    "hadamard_step": (2, (0,), ((0, 1),), (0,), (1,), _H),
    "cnot_2d": (4, (0, 1), ((0, 2), (1, 2), (2, 3)), (1, 2), (0, 3),
                np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)),
}


def _byproduct(pattern: str, s: tuple[int, ...]) -> np.ndarray:
    """Pauli byproduct on the output register for outcomes ``s`` of the measured qubits."""
    eye = np.eye(2, dtype=complex)

    def pw(p, e):
        return p if e else eye

    if pattern == "identity_wire":
        s1, s2 = s
        return pw(_X, s2) @ pw(_Z, s1)
    if pattern == "hadamard_step":
        return pw(_X, s[0])
    if pattern == "cnot_2d":
        s2, s3 = s
        return np.kron(pw(_Z, s2), pw(_X, s3) @ pw(_Z, s2))
    raise ValueError(f"unknown pattern {pattern!r}")


def _haar_state(dim: int, rng) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def verify_mbqc_pattern(pattern: str, inputs: int = 20, rng=None, tol: float = 1e-10) -> MbqcReport:
    """Check ``byproduct(s) @ gate |psi> == |out_s>`` on every branch for random inputs.

    Qubits are numbered from 0 (qubit ``j`` here is qubit ``j+1`` in the
    usual figure labels).  Measured qubits are read in ``X``.
    """
    if pattern not in MBQC_PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; choose from {sorted(MBQC_PATTERNS)}")
    nq, ins, edges, measured, outs, gate = MBQC_PATTERNS[pattern]
    rng = np.random.default_rng(rng)
    plus = np.array([1, 1], dtype=complex) / math.sqrt(2)
    worst = 0.0
    branches = 2 ** len(measured)
    byproducts = {}
    for _ in range(inputs):
        psi = _haar_state(2 ** len(ins), rng)
        rest = reduce(np.kron, [plus] * (nq - len(ins)), np.ones(1, dtype=complex))
        # inputs occupy the leading qubits in every pattern
        state = DenseState(nq, np.kron(psi, rest))
        for a, b in edges:
            state.cz(a, b)
        for q in measured:
            state.apply((q,), _H)
        t = np.moveaxis(state.tensor(), list(measured) + list(outs), range(nq))
        t = t.reshape(branches, 2 ** len(outs))
        for idx in range(branches):
            s = tuple((idx >> (len(measured) - 1 - j)) & 1 for j in range(len(measured)))
            out = t[idx]
            prob = np.linalg.norm(out) ** 2
            if abs(prob - 1.0 / branches) > tol:
                worst = max(worst, abs(prob - 1.0 / branches))
                continue
            bp = _byproduct(pattern, s)
            byproducts[s] = bp
            expect = bp @ gate @ psi
            phase = np.vdot(expect, out / math.sqrt(prob))
            worst = max(worst, float(np.linalg.norm(out / math.sqrt(prob) - phase / abs(phase) * expect)))
    return MbqcReport(pattern, worst < tol, worst, branches, inputs, byproducts)


def dense_apply_inverse(model, distribution, observable) -> float:
    """``sum_x O(x) [inv(Lambda) p](x)`` with dense linear algebra.

    ``model`` is a :class:`ReadoutNoiseModel` or an explicit matrix,
    ``distribution`` a length-``2^n`` vector or ``{bits: prob}`` mapping and
    ``observable`` a length-``2^n`` vector or a :class:`WitnessSetting`.
    """
    lam = channel_matrix(model) if isinstance(model, ReadoutNoiseModel) else np.asarray(model, dtype=float)
    dim = lam.shape[0]
    n = int(round(math.log2(dim)))
    if n > 10:
        raise ValueError("dense inverse limited to n <= 10")
    if isinstance(distribution, dict):
        p = np.zeros(dim)
        for bits, w in distribution.items():
            p[bit_index(bits)] += w
    else:
        p = np.asarray(distribution, dtype=float)
    if isinstance(observable, WitnessSetting):
        states = (np.arange(dim)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
        par = states[:, observable.support_bits].sum(axis=1) & 1
        obs = observable.pauli.sign * (1.0 - 2.0 * par)
    else:
        obs = np.asarray(observable, dtype=float)
    if abs(np.linalg.det(lam)) < 1e-300 or np.linalg.cond(lam) > 1e14:
        raise np.linalg.LinAlgError("noise matrix is singular")
    return float(obs @ np.linalg.solve(lam, p))


def depolarized_cluster_fidelity(graph: GraphSpec, p: float) -> float:
    """``<CL|rho|CL>`` when every qubit touched by a CZ layer then depolarizes with probability ``p``."""
    n = graph.n
    _check_size(n, 8)
    target = cluster_state(graph).amplitudes
    plus = np.array([1, 1], dtype=complex) / math.sqrt(2)
    psi = reduce(np.kron, [plus] * n, np.ones(1, dtype=complex))
    rho = np.outer(psi, psi.conj())

    def op_on(q, m):
        mats = [np.eye(2, dtype=complex)] * n
        mats[q] = m
        return reduce(np.kron, mats, np.eye(1, dtype=complex))

    for layer in graph.cz_patterns:
        for a, b in layer:
            diag = np.ones(2 ** n, dtype=complex)
            idx = np.arange(2 ** n)
            both = ((idx >> (n - 1 - a)) & 1) & ((idx >> (n - 1 - b)) & 1)
            diag[both == 1] = -1
            rho = diag[:, None] * rho * diag.conj()[None, :]
        touched = sorted({q for e in layer for q in e})
        for q in touched:
            paulis = [op_on(q, _PAULI[c]) for c in "XYZ"]
            rho = (1 - p) * rho + (p / 3) * sum(P @ rho @ P.conj().T for P in paulis)
    return float(np.real(np.vdot(target, rho @ target)))
