"""One-dimensional measurement-based wire: teleportation through a perturbed cluster chain.

Qubit 0 carries the input ``C_in|0>``, qubits ``1..n`` start in ``|+>`` and a
CZ chain entangles ``0..n``.  Qubits ``0..n-1`` are measured in ``X``; the
last qubit is measured in the basis ``{H^n C_in|0>, H^n C_in|1>}``.

Each X-measurement applies ``X^m H`` to the travelling state, so the output
is ``U H^n |psi_in>`` with a Pauli byproduct ``U``.  Its anticommutation
with the input stabilizer decides the sign of each one-shot fidelity, which
removes the need for feed-forward.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
import scipy.optimize

from .mitigation import MitigatedEstimate, summarize, tp_bit_factors, tp_overhead
from .noise import ReadoutNoiseModel, apply_readout_noise
from .pauli import PauliString

__all__ = [
    "INPUT_LABELS",
    "PERTURBATION_KINDS",
    "WindowOverflowError",
    "Perturbation",
    "TeleportConfig",
    "WireProgram",
    "WireShot",
    "WireShots",
    "AlphaScan",
    "OscillationFit",
    "input_clifford",
    "input_stabilizer",
    "group_perturbations",
    "build_wire_circuit",
    "simulate_wire",
    "wire_distribution",
    "wire_expectation",
    "correction_parity",
    "sign_exponent",
    "postfree_fidelity",
    "exact_postfree_fidelity",
    "scan_alpha",
    "fit_oscillation",
]

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
_S = np.diag([1, 1j])
_PLUS = np.array([1, 1], dtype=complex) / math.sqrt(2)

INPUT_LABELS = ("0", "1", "+", "-", "+i", "-i")
_CLIFFORD = {
    "0": _I2,
    "1": _X,
    "+": _H,
    "-": _H @ _X,
    "+i": _S @ _H,
    "-i": _S @ _H @ _X,
}
_STABILIZER = {"0": "+Z", "1": "-Z", "+": "+X", "-": "-X", "+i": "+Y", "-i": "-Y"}
_ALIASES = {"|0>": "0", "|1>": "1", "|+>": "+", "|->": "-", "|+i>": "+i", "|-i>": "-i",
            "plus": "+", "minus": "-", "plus_i": "+i", "minus_i": "-i"}

PERTURBATION_KINDS = ("S", "SB_odd", "SB_even")
_KIND_ALIASES = {"s": "S", "sb_odd": "SB_odd", "sb-odd": "SB_odd", "sb_even": "SB_even", "sb-even": "SB_even"}


class WindowOverflowError(RuntimeError):
    pass


def _label(label: str) -> str:
    label = _ALIASES.get(label, label)
    if label not in INPUT_LABELS:
        raise ValueError(f"input must be one of {INPUT_LABELS}, got {label!r}")
    return label


def input_clifford(label: str) -> np.ndarray:
    """``C_in`` with ``|psi_in> = C_in|0>``."""
    return _CLIFFORD[_label(label)].copy()


def input_stabilizer(label: str) -> PauliString:
    """``P_in = C_in Z C_in^dagger`` as a signed one-qubit Pauli."""
    return PauliString.from_label(_STABILIZER[_label(label)])


@dataclass(frozen=True)
class Perturbation:
    """``exp(i beta Z_a X_{a+1} Z_{a+2}) exp(i alpha R)`` on window ``(a, a+1, a+2)``.

    ``R`` is ``X_{a+2}`` for ``S``, ``Y_{a+2}`` for ``SB_odd`` and
    ``Y_{a+1}`` for ``SB_even``.
    """

    kind: str
    alpha: float
    beta: float = 0.0
    anchor: int = 1

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind.lower(), self.kind) if isinstance(self.kind, str) else self.kind
        if kind not in PERTURBATION_KINDS:
            raise ValueError(f"kind must be one of {PERTURBATION_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ValueError("alpha and beta must be finite")
        if self.anchor < 1:
            raise ValueError("perturbation windows start on a chain qubit (anchor >= 1)")

    @property
    def window(self) -> tuple[int, int, int]:
        a = self.anchor
        return a, a + 1, a + 2

    def local_paulis(self) -> tuple[str, str]:
        rot = {"S": "IIX", "SB_odd": "IIY", "SB_even": "IYI"}[self.kind]
        return "ZXZ", rot

    def matrix(self) -> np.ndarray:
        """8x8 unitary on the window, first window qubit most significant."""
        stab, rot = (PauliString.from_label(p).to_matrix() for p in self.local_paulis())
        eye = np.eye(8)
        u_beta = math.cos(self.beta) * eye + 1j * math.sin(self.beta) * stab
        u_alpha = math.cos(self.alpha) * eye + 1j * math.sin(self.alpha) * rot
        return u_beta @ u_alpha

    def with_alpha(self, alpha: float) -> "Perturbation":
        return Perturbation(self.kind, alpha, self.beta, self.anchor)


def group_perturbations(kind: str, k: int, alpha: float, beta: float = 0.0, first_anchor: int = 1,
                        spacing: int = 4) -> tuple[Perturbation, ...]:
    """``k`` equal perturbations with one idle qubit between windows (anchors 1, 5, 9, ...)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return tuple(Perturbation(kind, alpha, beta, first_anchor + spacing * g) for g in range(k))


@dataclass(frozen=True)
class TeleportConfig:
    n: int
    input_label: str = "0"
    perturbations: tuple[Perturbation, ...] = ()
    shots: int = 1000
    noise: ReadoutNoiseModel | None = None
    window_cap: int = 6

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("wire needs at least one resource qubit")
        object.__setattr__(self, "input_label", _label(self.input_label))
        object.__setattr__(self, "perturbations", tuple(self.perturbations))
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.noise is not None and self.noise.n != self.n + 1:
            raise ValueError(f"noise model must cover n + 1 = {self.n + 1} recorded bits")
        used: set[int] = set()
        for p in self.perturbations:
            if p.window[-1] > self.n:
                raise ValueError(f"perturbation window {p.window} does not fit a chain of {self.n}")
            if used.intersection(p.window):
                raise ValueError(f"perturbation window {p.window} overlaps another")
            used.update(p.window)

    def with_alpha(self, alpha: float) -> "TeleportConfig":
        return TeleportConfig(self.n, self.input_label, tuple(p.with_alpha(alpha) for p in self.perturbations),
                              self.shots, self.noise, self.window_cap)


@dataclass(frozen=True)
class WireProgram:
    """Flat op list over qubits ``0..n``.

    Ops: ``("prep", q, vec)``, ``("cz", a, b)``, ``("unitary", qubits, mat)``,
    ``("measure", q, V)`` where outcome ``i`` projects onto ``V|i>``.
    Every qubit is prepared before its first use and measured exactly once,
    in increasing order.
    """

    n: int
    input_label: str
    ops: tuple
    final_basis_label: str

    @property
    def num_qubits(self) -> int:
        return self.n + 1

    def measure_order(self) -> list[int]:
        return [op[1] for op in self.ops if op[0] == "measure"]


def build_wire_circuit(config: TeleportConfig) -> WireProgram:
    n = config.n
    c_in = input_clifford(config.input_label)
    final_rot = c_in if n % 2 == 0 else _H @ c_in
    final_label = ("C_in" if n % 2 == 0 else "H C_in") + f" [{config.input_label}]"
    trigger: dict[int, list[Perturbation]] = {}
    last_trigger = {}
    for p in config.perturbations:
        k = min(p.window[-1], n - 1)  # applied after CZ(k, k+1)
        trigger.setdefault(k, []).append(p)
        for q in p.window:
            last_trigger[q] = k
    ops: list = [("prep", 0, c_in[:, 0].copy())]
    measured = 0
    for k in range(n):
        ops.append(("prep", k + 1, _PLUS.copy()))
        ops.append(("cz", k, k + 1))
        for p in trigger.get(k, ()):
            ops.append(("unitary", p.window, p.matrix()))
        while measured <= k and measured < n and last_trigger.get(measured, -1) <= k:
            ops.append(("measure", measured, _H.copy()))
            measured += 1
    ops.append(("measure", n, final_rot))
    return WireProgram(n, config.input_label, tuple(ops), final_label)


class _Window:
    """State vectors of the active qubits, one row per shot or branch."""

    def __init__(self, rows: int, cap: int):
        self.psi = np.ones((rows,), dtype=complex)
        self.active: list[int] = []
        self.cap = cap

    def axis(self, q: int) -> int:
        return 1 + self.active.index(q)

    def prep(self, q: int, vec: np.ndarray) -> None:
        if len(self.active) + 1 > self.cap:
            raise WindowOverflowError(f"window needs more than {self.cap} qubits")
        self.psi = self.psi[..., None] * vec
        self.active.append(q)

    def cz(self, a: int, b: int) -> None:
        idx = [slice(None)] * self.psi.ndim
        idx[self.axis(a)] = 1
        idx[self.axis(b)] = 1
        self.psi[tuple(idx)] *= -1

    def unitary(self, qubits, mat: np.ndarray) -> None:
        axes = [self.axis(q) for q in qubits]
        k = len(axes)
        moved = np.moveaxis(self.psi, axes, range(-k, 0))
        shape = moved.shape
        out = moved.reshape(shape[:-k] + (2 ** k,)) @ mat.T
        self.psi = np.moveaxis(out.reshape(shape), range(-k, 0), axes)

    def rotate_out(self, q: int, basis: np.ndarray) -> np.ndarray:
        """Remove qubit ``q``; return amplitudes ``(rows, ..., 2)`` in the given basis."""
        ax = self.axis(q)
        moved = np.moveaxis(self.psi, ax, -1) @ basis.conj()
        self.active.remove(q)
        return moved


def _run_window(program: WireProgram, rows: int, cap: int, on_measure) -> None:
    win = _Window(rows, cap)
    for op in program.ops:
        tag = op[0]
        if tag == "prep":
            win.prep(op[1], op[2])
        elif tag == "cz":
            win.cz(op[1], op[2])
        elif tag == "unitary":
            if len(set(op[1]) | set(win.active)) > cap:
                raise WindowOverflowError(f"unitary on {op[1]} exceeds window cap {cap}")
            win.unitary(op[1], op[2])
        elif tag == "measure":
            on_measure(win, op[1], op[2])
        else:
            raise ValueError(f"unknown op {tag!r}")


@dataclass(frozen=True)
class WireShot:
    m: np.ndarray
    final_outcome: int
    final_basis_label: str


@dataclass
class WireShots:
    """Batch of shots: ``m`` is ``(shots, n)``, ``final`` is ``(shots,)``."""

    m: np.ndarray
    final: np.ndarray
    final_basis_label: str = ""

    def __len__(self) -> int:
        return len(self.final)

    def __getitem__(self, i: int) -> WireShot:
        return WireShot(self.m[i], int(self.final[i]), self.final_basis_label)

    def __iter__(self) -> Iterator[WireShot]:
        return (self[i] for i in range(len(self)))

    @property
    def n(self) -> int:
        return self.m.shape[1]

    def bits(self) -> np.ndarray:
        """All recorded bits ``(m_0..m_{n-1}, final)``."""
        return np.column_stack([self.m, self.final]).astype(np.uint8)

    @classmethod
    def from_bits(cls, bits: np.ndarray, label: str = "") -> "WireShots":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(bits[:, :-1].copy(), bits[:, -1].copy(), label)


def simulate_wire(program: WireProgram, noise: ReadoutNoiseModel | None, shots: int, rng,
                  window_cap: int = 6) -> WireShots:
    """Born-rule sampling with qubits retired left to right, then readout noise."""
    rng = np.random.default_rng(rng)
    n1 = program.num_qubits
    out = np.zeros((shots, n1), dtype=np.uint8)
    rows = np.arange(shots)

    def measure(win: _Window, q: int, basis: np.ndarray) -> None:
        amps = win.rotate_out(q, basis)
        flat = amps.reshape(shots, -1, 2)
        p1 = np.sum(np.abs(flat[:, :, 1]) ** 2, axis=1)
        p0 = np.sum(np.abs(flat[:, :, 0]) ** 2, axis=1)
        b = (rng.random(shots) * (p0 + p1) < p1).astype(np.uint8)
        out[:, q] = b
        kept = amps[rows, ..., b] if amps.ndim > 2 else amps[rows, b]
        norm = np.sqrt(np.where(b == 1, p1, p0))
        win.psi = kept / norm.reshape((-1,) + (1,) * (kept.ndim - 1))

    _run_window(program, shots, window_cap, measure)
    if noise is not None:
        out = apply_readout_noise(out, noise, rng)
    return WireShots.from_bits(out, program.final_basis_label)


def wire_distribution(program: WireProgram, window_cap: int = 6, cutoff: float = 0.0) -> dict[tuple[int, ...], float]:
    """Exact joint outcome law by enumerating branches (noiseless).

    Branches with probability ``<= cutoff`` are dropped.
    """
    state = {"bits": np.zeros((1, 0), dtype=np.uint8), "weight": np.ones(1)}

    def measure(win: _Window, q: int, basis: np.ndarray) -> None:
        amps = win.rotate_out(q, basis)
        rows = amps.shape[0]
        flat = amps.reshape(rows, -1, 2)
        probs = np.sum(np.abs(flat) ** 2, axis=1)  # (rows, 2), conditional on the branch
        new_bits, new_w, new_psi = [], [], []
        for b in (0, 1):
            w = state["weight"] * probs[:, b]
            keep = w > cutoff
            if not keep.any():
                continue
            new_bits.append(np.column_stack([state["bits"][keep], np.full(keep.sum(), b, dtype=np.uint8)]))
            new_w.append(w[keep])
            piece = amps[keep, ..., b]
            new_psi.append(piece / np.sqrt(probs[keep, b]).reshape((-1,) + (1,) * (piece.ndim - 1)))
        state["bits"] = np.concatenate(new_bits)
        state["weight"] = np.concatenate(new_w)
        win.psi = np.concatenate(new_psi)

    _run_window(program, 1, window_cap, measure)
    return {tuple(int(v) for v in row): float(w) for row, w in zip(state["bits"], state["weight"])}


def wire_expectation(program: WireProgram, observables: dict[int, np.ndarray], window_cap: int = 6) -> float:
    """Exact ``E[prod_q g_q(b_q)]`` for diagonal per-outcome weights ``g_q = (g(0), g(1))``.

    Qubits absent from ``observables`` are traced out.  Uses a density
    matrix on the active window, so the cost is linear in ``n``.
    """
    rho = np.ones((), dtype=complex)
    active: list[int] = []
    scale = 1.0 + 0j

    def axes_of(q):
        i = active.index(q)
        return i, i + len(active)

    for op in program.ops:
        tag = op[0]
        if tag == "prep":
            if len(active) + 1 > window_cap:
                raise WindowOverflowError(f"window needs more than {window_cap} qubits")
            v = op[2]
            w = len(active)
            rho = np.tensordot(rho, np.outer(v, v.conj()), axes=0)  # ket axes..., bra axes..., k, b
            order = list(range(w)) + [2 * w] + list(range(w, 2 * w)) + [2 * w + 1]
            rho = rho.transpose(order)
            active.append(op[1])
        elif tag == "cz":
            (ka, ba), (kb, bb) = axes_of(op[1]), axes_of(op[2])
            for x, y in ((ka, kb), (ba, bb)):
                idx = [slice(None)] * rho.ndim
                idx[x] = 1
                idx[y] = 1
                rho[tuple(idx)] *= -1
        elif tag in ("unitary", "measure"):
            qs = op[1] if tag == "unitary" else (op[1],)
            mat = op[2] if tag == "unitary" else op[2].conj().T
            k = len(qs)
            kets = [axes_of(q)[0] for q in qs]
            bras = [axes_of(q)[1] for q in qs]
            moved = np.moveaxis(rho, kets, range(-k, 0))
            shape = moved.shape
            moved = (moved.reshape(shape[:-k] + (2 ** k,)) @ mat.T).reshape(shape)
            rho = np.moveaxis(moved, range(-k, 0), kets)
            moved = np.moveaxis(rho, bras, range(-k, 0))
            moved = (moved.reshape(shape[:-k] + (2 ** k,)) @ mat.conj().T).reshape(shape)
            rho = np.moveaxis(moved, range(-k, 0), bras)
            if tag == "measure":
                q = op[1]
                kx, bx = axes_of(q)
                diag = np.diagonal(rho, axis1=kx, axis2=bx)  # trailing axis is the outcome
                g = np.asarray(observables.get(q, (1.0, 1.0)), dtype=complex)
                rho = diag @ g
                active.remove(q)
        else:
            raise ValueError(f"unknown op {tag!r}")
    return float(np.real(rho * scale))


def correction_parity(shot) -> tuple:
    """``(x_pow, z_pow)`` of the byproduct ``Z^z_pow X^x_pow``.

    ``x_pow`` sums outcomes of odd chain qubits, ``z_pow`` sums the input
    outcome ``m_0`` and even chain qubits (all below ``n``).  Accepts a
    :class:`WireShot`, a :class:`WireShots` batch or a bare ``m`` array.
    """
    m = shot.m if isinstance(shot, (WireShot, WireShots)) else np.asarray(shot)
    m = np.asarray(m, dtype=np.int64)
    x_pow = m[..., 1::2].sum(axis=-1) & 1
    z_pow = (m[..., 0] + m[..., 2::2].sum(axis=-1)) & 1
    if np.ndim(x_pow) == 0:
        return int(x_pow), int(z_pow)
    return x_pow, z_pow


def _parity_masks(n: int, label: str) -> np.ndarray:
    """Recorded bits (``m`` then final) whose XOR gives ``a + i``."""
    letter = input_stabilizer(label).letter(0)
    idx = np.arange(n)
    odd = (idx % 2 == 1)
    even = ~odd  # includes m_0
    mask = np.zeros(n + 1, dtype=bool)
    if letter in "XY":
        mask[:n] ^= even
    if letter in "ZY":
        mask[:n] ^= odd
    mask[n] = True
    return mask


def sign_exponent(shots: WireShots, label: str) -> np.ndarray:
    """``a`` per shot: does ``P_in`` anticommute with ``Z^z_pow X^x_pow``."""
    x_pow, z_pow = correction_parity(shots)
    letter = input_stabilizer(label).letter(0)
    return {"X": z_pow, "Z": x_pow, "Y": x_pow ^ z_pow}[letter]


def postfree_fidelity(shots: WireShots, input_label: str, tp_params=None, delta: float = 0.003,
                      error_mode: str = "hoeffding") -> MitigatedEstimate:
    """Mean one-shot fidelity ``(1 + (-1)^(a + i)) / 2``.

    With ``tp_params`` (one row per recorded bit) every bit's sign is
    replaced by its TP-inverted factor; the estimator then ranges over an
    interval of width ``Gamma_TP``.
    """
    n = shots.n
    mask = _parity_masks(n, input_label)
    bits = shots.bits()[:, mask]
    if tp_params is None:
        par = (bits.sum(axis=1, dtype=np.int64) & 1)
        vals = 0.5 * (1.0 + (1.0 - 2.0 * par))
        gamma, Gamma, method = 0.0, 1.0, "raw"
    else:
        tp = np.asarray(tp_params, dtype=float)
        if tp.shape != (n + 1, 2):
            raise ValueError(f"tp_params must have shape ({n + 1}, 2)")
        f = tp_bit_factors(tp)[mask]
        vals = 0.5 * (1.0 + np.prod(np.where(bits == 1, f[:, 1], f[:, 0]), axis=1))
        gamma, Gamma = tp_overhead(tp)
        method = "TP"
    est = summarize(np.array([vals.mean()]), K=len(vals), delta=delta, gamma=gamma, Gamma=Gamma,
                    method=method, n=n, range_width=Gamma, error_mode=error_mode)
    est.empirical_error = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else float("nan")
    return est


def exact_postfree_fidelity(program: WireProgram, noise: ReadoutNoiseModel | None = None, tp_params=None,
                            window_cap: int = 6) -> float:
    """Expected estimator value computed exactly (independent TP readout noise only)."""
    n = program.n
    mask = _parity_masks(n, program.input_label)
    if noise is not None and noise.channel != "tp":
        raise ValueError("exact expectation supports independent (TP) readout noise only")
    f = tp_bit_factors(tp_params) if tp_params is not None else np.array([[1.0, -1.0]] * (n + 1))
    obs = {}
    for q in np.flatnonzero(mask):
        g = f[q]
        if noise is not None:
            eps, eta = noise.tp_rates[q]
            g = np.array([(1 - eps) * g[0] + eps * g[1], eta * g[0] + (1 - eta) * g[1]])
        obs[int(q)] = g
    return 0.5 * (1.0 + wire_expectation(program, obs, window_cap))


@dataclass
class AlphaScan:
    alphas: np.ndarray
    fidelity: np.ndarray
    std_error: np.ndarray
    mode: str
    common_random_numbers: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "fidelity", "std_error"])
        for a, f, s in zip(self.alphas, self.fidelity, self.std_error):
            w.writerow([repr(float(a)), repr(float(f)), repr(float(s))])
        return buf.getvalue()


def scan_alpha(config: TeleportConfig, alphas: Sequence[float], mode: str = "sample", rng=None,
               tp_params=None, common_random_numbers: bool = False, delta: float = 0.003) -> AlphaScan:
    """Fidelity for each ``alpha`` with the config's perturbations re-angled.

    ``mode="exact"`` returns the expected estimator value (zero error);
    ``mode="sample"`` draws ``config.shots`` shots per point, seeded per
    point from one :class:`numpy.random.SeedSequence`, or with one shared
    seed when ``common_random_numbers`` is set.
    """
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size == 0:
        raise ValueError("alpha grid is empty")
    if mode not in ("sample", "exact"):
        raise ValueError(f"unknown mode {mode!r}")
    ss = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    seeds = [ss] * alphas.size if common_random_numbers else ss.spawn(alphas.size)
    fid = np.zeros(alphas.size)
    err = np.zeros(alphas.size)
    for i, a in enumerate(alphas):
        cfg = config.with_alpha(float(a))
        prog = build_wire_circuit(cfg)
        if mode == "exact":
            fid[i] = exact_postfree_fidelity(prog, cfg.noise, tp_params, cfg.window_cap)
        else:
            shots = simulate_wire(prog, cfg.noise, cfg.shots, np.random.default_rng(seeds[i]), cfg.window_cap)
            est = postfree_fidelity(shots, cfg.input_label, tp_params, delta)
            fid[i], err[i] = est.value, est.std_error
    return AlphaScan(alphas, fid, err, mode, common_random_numbers)


@dataclass
class OscillationFit:
    """``f(x) = B + sum_h A_h sin(h x / T + theta_h)``."""

    amplitudes: np.ndarray
    T: float
    thetas: np.ndarray
    B: float
    residual_rms: float
    converged: bool = True

    @property
    def A(self) -> float:
        return float(self.amplitudes[0])

    @property
    def theta(self) -> float:
        return float(self.thetas[0])

    @property
    def fluctuation(self) -> float:
        return 2.0 * float(np.max(self.amplitudes)) if self.amplitudes.size else 0.0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h = np.arange(1, self.amplitudes.size + 1)
        return self.B + np.sum(self.amplitudes[:, None] * np.sin(h[:, None] * x[None, :] / self.T
                                                                + self.thetas[:, None]), axis=0)

    def as_dict(self) -> dict:
        return {"A": self.A, "T": self.T, "theta": self.theta, "B": self.B, "fluctuation": self.fluctuation,
                "amplitudes": [float(a) for a in self.amplitudes], "thetas": [float(t) for t in self.thetas],
                "residual_rms": self.residual_rms, "converged": self.converged}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def _linear_fit(x, y, T, k):
    cols = [np.ones_like(x)]
    for h in range(1, k + 1):
        cols += [np.sin(h * x / T), np.cos(h * x / T)]
    design = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef, float(np.sum((design @ coef - y) ** 2))


def _normalize(coef, k):
    amps, thetas = np.zeros(k), np.zeros(k)
    for h in range(k):
        s, c = coef[1 + 2 * h], coef[2 + 2 * h]
        amps[h] = math.hypot(s, c)
        thetas[h] = math.atan2(c, s) if amps[h] > 0 else 0.0
    return amps, thetas


def fit_oscillation(x, y, harmonics: int = 1, T_range: tuple[float, float] = (0.1, 5.0), grid: int = 400,
                    flat_tol: float = 1e-9) -> OscillationFit:
    """Least-squares trigonometric fit, fluctuation ``2A``.

    ``T`` is scanned on a log grid with the linear parameters solved
    exactly, then all parameters are refined jointly.  A curve whose spread
    is below ``flat_tol`` is reported as flat (``A = 0``).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = int(harmonics)
    if k < 1:
        raise ValueError("need at least one harmonic")
    if x.size < 4 * k + 2:
        raise ValueError(f"need at least {4 * k + 2} points for {k} harmonic(s)")
    if np.ptp(y) <= flat_tol:
        return OscillationFit(np.zeros(k), 1.0, np.zeros(k), float(y.mean()),
                              float(np.sqrt(np.mean((y - y.mean()) ** 2))))
    Ts = np.geomspace(*T_range, grid)
    sse = [_linear_fit(x, y, T, k)[1] for T in Ts]
    order = np.argsort(sse)[:5]

    def resid(p):
        T, B = p[0], p[1]
        out = B - y
        for h in range(k):
            out = out + p[2 + 2 * h] * np.sin((h + 1) * x / T) + p[3 + 2 * h] * np.cos((h + 1) * x / T)
        return out

    best = None
    for i in order:
        coef, _ = _linear_fit(x, y, Ts[i], k)
        p0 = np.concatenate([[Ts[i], coef[0]], coef[1:]])
        res = scipy.optimize.least_squares(resid, p0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        if best is None or res.cost < best.cost:
            best = res
    T, B = float(best.x[0]), float(best.x[1])
    coef = np.concatenate([[B], best.x[2:]])
    amps, thetas = _normalize(coef, k)
    if T < 0:
        T, thetas = -T, -thetas + math.pi
    thetas = np.mod(thetas + math.pi, 2 * math.pi) - math.pi
    rms = float(np.sqrt(np.mean(resid(best.x) ** 2)))
    return OscillationFit(amps, T, thetas, B, rms, bool(best.success))
