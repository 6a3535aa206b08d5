"""Readout-noise models: independent bit flips and correlated Markov generators.

The correlated model is ``Lambda = exp(G)`` with ``G = sum_t r_t G_t`` built
from one- and two-qubit flip generators, evolved for unit time.  Bit strings
index matrices with qubit 0 as the most significant bit, matching
``np.kron`` ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "KINDS",
    "GeneratorTerm",
    "ReadoutNoiseModel",
    "NoiseRanges",
    "ModelFormatError",
    "apply_tp_noise",
    "apply_ctmp_noise",
    "apply_readout_noise",
    "exact_lambda",
    "tp_lambda",
    "channel_matrix",
    "generator_matrix",
    "flip_rates_from_tp",
    "tp_from_flip_rates",
    "exit_rate_form",
    "exit_rates",
    "synth_device",
    "format_model",
    "parse_model",
    "read_model",
    "write_model",
]

# kind -> (source bits, target bits) on (j,) or (j, k)
KINDS: dict[str, tuple[tuple[int, ...], tuple[int, ...]]] = {
    "0->1": ((0,), (1,)),
    "1->0": ((1,), (0,)),
    "01->10": ((0, 1), (1, 0)),
    "10->01": ((1, 0), (0, 1)),
    "00->11": ((0, 0), (1, 1)),
    "11->00": ((1, 1), (0, 0)),
}
PAIR_KINDS = ("01->10", "10->01", "00->11", "11->00")


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorTerm:
    kind: str
    qubits: tuple[int, ...]
    rate: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        arity = len(KINDS[self.kind][0])
        if len(self.qubits) != arity:
            raise ValueError(f"{self.kind} acts on {arity} qubit(s), got {self.qubits}")
        if arity == 2 and not self.qubits[0] < self.qubits[1]:
            raise ValueError(f"pair generator needs j < k, got {self.qubits}")
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValueError(f"generator rate must be finite and >= 0, got {self.rate}")

    @property
    def source(self) -> tuple[int, ...]:
        return KINDS[self.kind][0]

    @property
    def target(self) -> tuple[int, ...]:
        return KINDS[self.kind][1]


@dataclass(frozen=True, eq=False)
class ReadoutNoiseModel:
    """Ground-truth readout noise for ``n`` qubits.

    ``tp_rates[i] = (eps_i, eta_i)`` are the 0->1 and 1->0 flip probabilities
    of the independent channel.  ``generator_terms`` define the correlated
    channel; when present it is the one :func:`apply_readout_noise` uses.
    ``depolarizing_p`` is a synthetic preparation-error knob, not a readout
    parameter.
    """

    n: int
    tp_rates: np.ndarray = None
    generator_terms: tuple[GeneratorTerm, ...] = ()
    depolarizing_p: float | None = None

    def __post_init__(self):
        rates = np.zeros((self.n, 2)) if self.tp_rates is None else np.asarray(self.tp_rates, float)
        if rates.shape != (self.n, 2):
            raise ValueError(f"tp_rates must have shape ({self.n}, 2)")
        if np.any(rates < 0) or np.any(rates > 1):
            raise ValueError("flip probabilities must lie in [0, 1]")
        rates = rates.copy()
        rates.setflags(write=False)
        object.__setattr__(self, "tp_rates", rates)
        terms = tuple(self.generator_terms)
        for t in terms:
            if max(t.qubits) >= self.n:
                raise ValueError(f"generator on qubits {t.qubits} exceeds n={self.n}")
        object.__setattr__(self, "generator_terms", terms)
        if self.depolarizing_p is not None and not 0 <= self.depolarizing_p <= 1:
            raise ValueError("depolarizing_p must be a probability")

    @classmethod
    def noiseless(cls, n: int) -> "ReadoutNoiseModel":
        return cls(n)

    @property
    def eps(self) -> np.ndarray:
        return self.tp_rates[:, 0]

    @property
    def eta(self) -> np.ndarray:
        return self.tp_rates[:, 1]

    @property
    def channel(self) -> str:
        return "ctmp" if self.generator_terms else "tp"

    def tp_invertible(self) -> bool:
        return bool(np.all(self.eps + self.eta < 1))

    def __eq__(self, other):
        if not isinstance(other, ReadoutNoiseModel):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.tp_rates, other.tp_rates)
                and self.generator_terms == other.generator_terms
                and self.depolarizing_p == other.depolarizing_p)

    def __hash__(self):
        return hash((self.n, self.tp_rates.tobytes(), self.generator_terms, self.depolarizing_p))


def flip_rates_from_tp(eps: float, eta: float) -> tuple[float, float]:
    """Generator rates ``(r01, r10)`` whose unit-time exponential has flip probabilities ``(eps, eta)``.

    For the two-state chain ``P(1|0) = r01 (1 - e^{-s}) / s`` with ``s = r01 + r10``.
    """
    total = eps + eta
    if total >= 1:
        raise ValueError("eps + eta must be < 1")
    if total == 0:
        return 0.0, 0.0
    s = -math.log1p(-total)
    return eps * s / total, eta * s / total


def tp_from_flip_rates(r01: float, r10: float) -> tuple[float, float]:
    s = r01 + r10
    if s == 0:
        return 0.0, 0.0
    mix = -math.expm1(-s) / s
    return r01 * mix, r10 * mix


def _as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.uint8)
    return arr.copy()


def apply_tp_noise(bits, model: ReadoutNoiseModel, rng) -> np.ndarray:
    """Flip each bit independently: 0->1 w.p. eps_i, 1->0 w.p. eta_i.

    Accepts one bit string ``(n,)`` or a batch ``(shots, n)``.
    """
    rng = np.random.default_rng(rng)
    out = _as_bits(bits)
    if out.shape[-1] != model.n:
        raise ValueError(f"bit strings have length {out.shape[-1]}, model has n={model.n}")
    u = rng.random(out.shape)
    flip = np.where(out == 0, u < model.eps, u < model.eta)
    return out ^ flip.astype(np.uint8)


@dataclass
class _TermArrays:
    j: np.ndarray
    k: np.ndarray  # -1 for single-qubit terms
    sj: np.ndarray
    sk: np.ndarray
    rate: np.ndarray

    @classmethod
    def build(cls, terms: Sequence[GeneratorTerm]) -> "_TermArrays":
        terms = [t for t in terms if t.rate > 0]
        j = np.array([t.qubits[0] for t in terms], dtype=np.int64)
        k = np.array([t.qubits[1] if len(t.qubits) == 2 else -1 for t in terms], dtype=np.int64)
        sj = np.array([t.source[0] for t in terms], dtype=np.uint8)
        sk = np.array([t.source[1] if len(t.source) == 2 else 0 for t in terms], dtype=np.uint8)
        rate = np.array([t.rate for t in terms], dtype=float)
        return cls(j, k, sj, sk, rate)

    def __len__(self):
        return self.rate.size

    def matches(self, states: np.ndarray) -> np.ndarray:
        """Boolean ``(walkers, terms)``: does each term's source fit each state."""
        ok = states[:, self.j] == self.sj
        pair = self.k >= 0
        if pair.any():
            kk = np.where(pair, self.k, 0)
            ok &= (states[:, kk] == self.sk) | ~pair
        return ok

    def apply(self, states: np.ndarray, rows: np.ndarray, chosen: np.ndarray) -> None:
        states[rows, self.j[chosen]] ^= 1
        pair = self.k[chosen] >= 0
        states[rows[pair], self.k[chosen][pair]] ^= 1


def apply_ctmp_noise(bits, model_or_terms, rng, time: float = 1.0) -> np.ndarray:
    """Sample the continuous-time jump process ``exp(time * G)`` exactly.

    Uses uniformisation: events arrive as a Poisson process with the total
    rate ``S`` of all terms; each event proposes term ``t`` with probability
    ``r_t / S`` and fires only if the term's source pattern matches the
    current bits.  This has the same law as Gillespie sampling and
    vectorises across shots.
    """
    rng = np.random.default_rng(rng)
    terms = model_or_terms.generator_terms if isinstance(model_or_terms, ReadoutNoiseModel) else model_or_terms
    arr = _TermArrays.build(terms)
    out = _as_bits(bits)
    single = out.ndim == 1
    states = out.reshape(1, -1) if single else out
    if len(arr) == 0:
        return out
    total = float(arr.rate.sum())
    cum = np.cumsum(arr.rate) / total
    events = rng.poisson(total * time, size=states.shape[0])
    for step in range(int(events.max(initial=0))):
        rows = np.flatnonzero(events > step)
        chosen = np.minimum(np.searchsorted(cum, rng.random(rows.size), side="right"), len(arr) - 1)
        sub = states[rows]
        fire = sub[np.arange(rows.size), arr.j[chosen]] == arr.sj[chosen]
        pair = arr.k[chosen] >= 0
        kk = np.where(pair, arr.k[chosen], 0)
        fire &= ~pair | (sub[np.arange(rows.size), kk] == arr.sk[chosen])
        arr.apply(states, rows[fire], chosen[fire])
    return states.reshape(-1) if single else states


def apply_readout_noise(bits, model: ReadoutNoiseModel | None, rng) -> np.ndarray:
    if model is None:
        return _as_bits(bits)
    if model.channel == "ctmp":
        return apply_ctmp_noise(bits, model, rng)
    return apply_tp_noise(bits, model, rng)


def _all_bitstrings(n: int) -> np.ndarray:
    idx = np.arange(2 ** n)
    return ((idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1).astype(np.uint8)


def generator_matrix(terms: Iterable[GeneratorTerm], n: int) -> np.ndarray:
    """Dense ``G`` (columns = source states), ``n <= 12``."""
    if n > 12:
        raise ValueError("dense generator limited to n <= 12")
    dim = 2 ** n
    g = np.zeros((dim, dim))
    states = _all_bitstrings(n)
    weights = 1 << (n - 1 - np.arange(n))
    for t in terms:
        if t.rate == 0:
            continue
        q = list(t.qubits)
        match = np.all(states[:, q] == np.array(t.source), axis=1)
        src = np.flatnonzero(match)
        flip = int(sum(weights[i] for i in q))
        dst = src ^ flip
        np.add.at(g, (dst, src), t.rate)
        np.add.at(g, (src, src), -t.rate)
    return g


def exact_lambda(model_or_terms, n: int | None = None) -> np.ndarray:
    """``exp(G)`` by scaling and squaring for the correlated channel."""
    if isinstance(model_or_terms, ReadoutNoiseModel):
        n = model_or_terms.n
        terms = model_or_terms.generator_terms
    else:
        terms = list(model_or_terms)
        if n is None:
            raise ValueError("n is required when passing bare generator terms")
    if n > 12:
        raise ValueError("exact_lambda limited to n <= 12")
    return scipy.linalg.expm(generator_matrix(terms, n))


def tp_lambda(tp_rates) -> np.ndarray:
    rates = np.asarray(tp_rates, float)
    if rates.shape[0] > 12:
        raise ValueError("tp_lambda limited to n <= 12")
    out = np.eye(1)
    for eps, eta in rates:
        out = np.kron(out, np.array([[1 - eps, eta], [eps, 1 - eta]]))
    return out


def channel_matrix(model: ReadoutNoiseModel) -> np.ndarray:
    """Dense stochastic matrix of whichever channel the model applies."""
    if model.channel == "ctmp":
        return exact_lambda(model)
    return tp_lambda(model.tp_rates)


def exit_rate_form(terms: Iterable[GeneratorTerm], n: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Write the exit rate ``R(x) = -<x|G|x>`` as ``c + h.x + x.J.x``.

    ``J`` is strictly upper triangular.  Indicators expand as
    ``[x=1] = x`` and ``[x=0] = 1 - x``.
    """
    c = 0.0
    h = np.zeros(n)
    J = np.zeros((n, n))
    for t in terms:
        r = t.rate
        if r == 0:
            continue
        if len(t.qubits) == 1:
            (j,), (a,) = t.qubits, t.source
            if a:
                h[j] += r
            else:
                c += r
                h[j] -= r
        else:
            (j, k), (a, b) = t.qubits, t.source
            # (alpha_j + beta_j x_j)(alpha_k + beta_k x_k)
            aj, bj = (0.0, 1.0) if a else (1.0, -1.0)
            ak, bk = (0.0, 1.0) if b else (1.0, -1.0)
            c += r * aj * ak
            h[j] += r * bj * ak
            h[k] += r * aj * bk
            J[j, k] += r * bj * bk
    return c, h, J


def exit_rates(states: np.ndarray, form: tuple[float, np.ndarray, np.ndarray]) -> np.ndarray:
    c, h, J = form
    s = np.asarray(states, dtype=float)
    return c + s @ h + np.einsum("wi,ij,wj->w", s, J, s)


@dataclass(frozen=True)
class NoiseRanges:
    eps: tuple[float, float] = (0.002, 0.02)
    eta: tuple[float, float] = (0.002, 0.02)
    pair_rate: tuple[float, float] = (0.0, 0.002)

    def __post_init__(self):
        for name in ("eps", "eta", "pair_rate"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi) or not math.isfinite(hi):
                raise ValueError(f"invalid {name} range {(lo, hi)}")
        if self.eps[1] + self.eta[1] >= 1:
            raise ValueError("eps + eta must stay below 1")


def synth_device(n: int, seed: int, ranges: NoiseRanges | None = None,
                 pairs: Sequence[tuple[int, int]] | None = None,
                 depolarizing_p: float | None = None) -> ReadoutNoiseModel:
    """Synthetic device: uniform draws of flip probabilities and pair rates.

    Single-qubit generator terms reproduce ``(eps_i, eta_i)`` exactly through
    :func:`flip_rates_from_tp`.  Every pair in ``pairs`` (default: chain
    neighbours) gets all four correlated kinds.  Zero-rate pair terms are
    dropped.
    """
    ranges = ranges or NoiseRanges()
    rng = np.random.default_rng(seed)
    eps = rng.uniform(*ranges.eps, size=n)
    eta = rng.uniform(*ranges.eta, size=n)
    terms: list[GeneratorTerm] = []
    for i in range(n):
        r01, r10 = flip_rates_from_tp(eps[i], eta[i])
        terms.append(GeneratorTerm("0->1", (i,), r01))
        terms.append(GeneratorTerm("1->0", (i,), r10))
    if pairs is None:
        pairs = [(i, i + 1) for i in range(n - 1)]
    for a, b in pairs:
        j, k = min(a, b), max(a, b)
        for kind in PAIR_KINDS:
            r = float(rng.uniform(*ranges.pair_rate))
            if r > 0:
                terms.append(GeneratorTerm(kind, (j, k), r))
    return ReadoutNoiseModel(n, np.column_stack([eps, eta]), tuple(terms), depolarizing_p)


def format_model(model: ReadoutNoiseModel) -> str:
    lines = [f"n {model.n}"]
    if model.depolarizing_p is not None:
        lines.append(f"depol {model.depolarizing_p!r}")
    for i, (e, h) in enumerate(model.tp_rates):
        lines.append(f"tp {i} {float(e)!r} {float(h)!r}")
    for t in model.generator_terms:
        lines.append(f"gen {t.kind} {' '.join(map(str, t.qubits))} {float(t.rate)!r}")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> ReadoutNoiseModel:
    """Inverse of :func:`format_model`; ``repr`` floats make the round trip bit-exact."""
    n = None
    depol = None
    tp: dict[int, tuple[float, float]] = {}
    terms: list[GeneratorTerm] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "n":
                n = int(parts[1])
            elif parts[0] == "depol":
                depol = float(parts[1])
            elif parts[0] == "tp":
                tp[int(parts[1])] = (float(parts[2]), float(parts[3]))
            elif parts[0] == "gen":
                kind = parts[1]
                qubits = tuple(int(q) for q in parts[2:-1])
                terms.append(GeneratorTerm(kind, qubits, float(parts[-1])))
            else:
                raise ModelFormatError(f"line {lineno}: unknown record {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(f"line {lineno}: {exc}") from exc
    if n is None:
        qubits = list(tp) + [q for t in terms for q in t.qubits]
        if not qubits:
            raise ModelFormatError("empty model without an 'n' record")
        n = max(qubits) + 1
    rates = np.zeros((n, 2))
    for i, v in tp.items():
        if not 0 <= i < n:
            raise ModelFormatError(f"tp record for qubit {i} exceeds n={n}")
        rates[i] = v
    try:
        return ReadoutNoiseModel(n, rates, tuple(terms), depol)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc


def read_model(path) -> ReadoutNoiseModel:
    return parse_model(Path(path).read_text())


def write_model(model: ReadoutNoiseModel, path) -> None:
    Path(path).write_text(format_model(model))
