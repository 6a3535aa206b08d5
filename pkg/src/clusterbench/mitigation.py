"""Readout-error mitigation for diagonal (signed-parity) observables.

Two inverses are provided:

* TP: the channel is a tensor product of 2x2 flip matrices, so the
  mitigated parity of a shot is a product of per-qubit factors.
* CTMP: the channel is ``exp(G)``.  Writing ``G = gamma (Q - I)`` with the
  stochastic kernel ``Q = I + G / gamma`` gives
  ``exp(-G) = e^{2 gamma} sum_a Pois(a; gamma) (-1)^a Q^a``, which is
  sampled by random walks of Poisson length.

``gamma`` must dominate the exit rate ``R(x) = -<x|G|x>`` of every state.
It is found by maximising a quadratic pseudo-Boolean function.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.stats

from .calibration import CalibrationResult, RateSet, correlation_coefficients, extract_rates
from .graphs import GraphSpec
from .noise import GeneratorTerm, ReadoutNoiseModel, _TermArrays, exit_rate_form
from .tableau import WitnessSetting

__all__ = [
    "SingularChannelError",
    "MitigatedEstimate",
    "CtmpExpansion",
    "GammaResult",
    "CtmpSampler",
    "tp_inverse_factor",
    "tp_bit_factors",
    "tp_overhead",
    "hoeffding_half_width",
    "raw_shot_values",
    "tp_shot_values",
    "raw_estimate",
    "tp_mitigated_estimate",
    "maximize_exit_rate",
    "ctmp_gamma",
    "ctmp_overhead",
    "ctmp_mitigated_estimate",
    "select_generator_set",
    "summarize",
    "REPORT_FIELDS",
    "report_row",
    "write_report",
]

METHODS = ("raw", "TP", "CTMP")
GENERATOR_MODES = ("tp", "nearest_neighbor", "full", "most_correlated")


class SingularChannelError(ValueError):
    pass


def hoeffding_half_width(n_samples: int, delta: float, Gamma: float = 1.0, range_width: float | None = None) -> float:
    """Half-width ``eps`` with ``P(|mean - mu| >= eps) <= delta``.

    Samples lie in an interval of length ``range_width`` (default ``2 Gamma``).
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    width = 2.0 * Gamma if range_width is None else range_width
    return width * math.sqrt(math.log(2.0 / delta) / (2.0 * n_samples))


@dataclass
class MitigatedEstimate:
    """Estimate of a mean signed parity (or fidelity) with its error budget.

    ``std_error`` is the Hoeffding half-width at confidence ``1 - delta``
    over ``n_independent`` samples; ``empirical_error`` is the spread of the
    per-setting means divided by ``sqrt(M)``.
    """

    value: float
    std_error: float
    confidence: float
    gamma: float
    Gamma: float
    shots: tuple[int, int, int]
    method: str
    n: int = 0
    empirical_error: float = float("nan")
    setting_means: np.ndarray | None = field(default=None, repr=False)
    error_mode: str = "hoeffding"
    alpha_overflow: int = 0

    @property
    def half_width(self) -> float:
        return self.std_error if self.error_mode == "hoeffding" else self.empirical_error

    @property
    def M(self) -> int:
        return self.shots[0]

    @property
    def K(self) -> int:
        return self.shots[1]

    @property
    def T(self) -> int:
        return self.shots[2]

    def interval(self) -> tuple[float, float]:
        return self.value - self.half_width, self.value + self.half_width

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "empirical_error": self.empirical_error,
            "confidence": self.confidence,
            "gamma": self.gamma,
            "Gamma": self.Gamma,
            "M": self.M,
            "K": self.K,
            "T": self.T,
            "method": self.method,
            "n": self.n,
            "error_mode": self.error_mode,
            "alpha_overflow": self.alpha_overflow,
        }


def summarize(setting_means: np.ndarray, *, K: int, T: int = 1, delta: float, gamma: float, Gamma: float,
              method: str, n: int, range_width: float | None = None, error_mode: str = "hoeffding",
              alpha_overflow: int = 0) -> MitigatedEstimate:
    """Fold per-setting means (equal shot counts) into one estimate."""
    means = np.asarray(setting_means, dtype=float)
    M = means.size
    if M == 0:
        raise ValueError("no settings")
    if error_mode not in ("hoeffding", "empirical"):
        raise ValueError(f"unknown error mode {error_mode!r}")
    emp = float(np.std(means, ddof=1) / math.sqrt(M)) if M > 1 else float("nan")
    return MitigatedEstimate(
        value=float(means.mean()),
        std_error=hoeffding_half_width(M * K, delta, Gamma, range_width),
        confidence=1.0 - delta,
        gamma=gamma,
        Gamma=Gamma,
        shots=(M, K, T),
        method=method,
        n=n,
        empirical_error=emp,
        setting_means=means,
        error_mode=error_mode,
        alpha_overflow=alpha_overflow,
    )


# ---------------------------------------------------------------- TP


def tp_inverse_factor(eps: float, eta: float) -> np.ndarray:
    """Inverse of ``[[1-eps, eta], [eps, 1-eta]]``."""
    d = 1.0 - eps - eta
    if d <= 0:
        raise SingularChannelError(f"eps + eta = {eps + eta} >= 1: flip channel is not invertible")
    return np.array([[1.0 - eta, -eta], [-eps, 1.0 - eps]]) / d


def tp_bit_factors(tp_params) -> np.ndarray:
    """``f[i, s] = sum_x (-1)^x <x|inv(Lambda_i)|s>`` for observed bit ``s``."""
    p = np.asarray(tp_params, dtype=float).reshape(-1, 2)
    eps, eta = p[:, 0], p[:, 1]
    d = 1.0 - eps - eta
    if np.any(d <= 0):
        bad = np.flatnonzero(d <= 0).tolist()
        raise SingularChannelError(f"qubits {bad} have eps + eta >= 1")
    return np.column_stack([(1.0 + eps - eta) / d, -(1.0 - eps + eta) / d])


def tp_overhead(tp_params) -> tuple[float, float]:
    """``(gamma_TP, Gamma_TP)`` with ``Gamma_TP = prod (1 + |eps - eta|) / (1 - eps - eta)``."""
    p = np.asarray(tp_params, dtype=float).reshape(-1, 2)
    eps, eta = p[:, 0], p[:, 1]
    d = 1.0 - eps - eta
    if np.any(d <= 0):
        raise SingularChannelError("eps + eta >= 1 on some qubit")
    Gamma = float(np.exp(np.sum(np.log1p(np.abs(eps - eta)) - np.log(d))))
    gamma = float(np.sum(np.maximum(eps, eta)))
    return gamma, Gamma


def _parity_sign(setting: WitnessSetting) -> tuple[np.ndarray, int]:
    return setting.support_bits, setting.pauli.sign


def raw_shot_values(bits: np.ndarray, setting: WitnessSetting) -> np.ndarray:
    """Signed parity of each shot on the setting's support."""
    support, sign = _parity_sign(setting)
    par = (bits[:, support].sum(axis=1, dtype=np.int64) & 1)
    return sign * (1.0 - 2.0 * par)


def tp_shot_values(bits: np.ndarray, setting: WitnessSetting, factors: np.ndarray) -> np.ndarray:
    """Per-shot TP-mitigated signed parity (product of per-qubit factors)."""
    support, sign = _parity_sign(setting)
    f = factors[support]
    base = float(np.prod(f[:, 0]))
    ratio = f[:, 1] / f[:, 0]
    s = bits[:, support]
    log_abs = s @ np.log(np.abs(ratio))
    neg = (s @ (ratio < 0).astype(np.int64)) & 1
    return sign * base * np.exp(log_abs) * (1.0 - 2.0 * neg)


def raw_estimate(shot_batches: Sequence[np.ndarray], settings: Sequence[WitnessSetting], delta: float = 0.003,
                 error_mode: str = "hoeffding") -> MitigatedEstimate:
    _check_aligned(shot_batches, settings)
    means = np.array([raw_shot_values(b, s).mean() for b, s in zip(shot_batches, settings)])
    return summarize(means, K=_shots_per_setting(shot_batches), delta=delta, gamma=0.0, Gamma=1.0,
                     method="raw", n=settings[0].n, error_mode=error_mode)


def tp_mitigated_estimate(shot_batches: Sequence[np.ndarray], settings: Sequence[WitnessSetting], tp_params,
                          delta: float = 0.003, error_mode: str = "hoeffding") -> MitigatedEstimate:
    _check_aligned(shot_batches, settings)
    factors = tp_bit_factors(tp_params)
    gamma, Gamma = tp_overhead(tp_params)
    means = np.array([tp_shot_values(b, s, factors).mean() for b, s in zip(shot_batches, settings)])
    return summarize(means, K=_shots_per_setting(shot_batches), delta=delta, gamma=gamma, Gamma=Gamma,
                     method="TP", n=settings[0].n, error_mode=error_mode)


def _check_aligned(shot_batches, settings) -> None:
    if len(shot_batches) != len(settings):
        raise ValueError(f"{len(shot_batches)} shot batches for {len(settings)} settings")
    if not settings:
        raise ValueError("no settings")
    for b, s in zip(shot_batches, settings):
        if b.ndim != 2 or b.shape[1] != s.n:
            raise ValueError(f"shot batch of shape {b.shape} does not fit n={s.n}")


def _shots_per_setting(shot_batches) -> int:
    sizes = {len(b) for b in shot_batches}
    if len(sizes) != 1:
        raise ValueError("all settings must have the same number of shots")
    return sizes.pop()


# ---------------------------------------------------------------- gamma


@dataclass(frozen=True)
class GammaResult:
    gamma: float
    state: np.ndarray
    exact: bool
    method: str


def _all_bits(m: int) -> np.ndarray:
    idx = np.arange(2 ** m)
    return ((idx[:, None] >> np.arange(m)[None, :]) & 1).astype(float)


def _exhaustive(h: np.ndarray, J: np.ndarray) -> tuple[float, np.ndarray]:
    """Max of ``h.x + x.J.x`` over all bit strings by splitting into halves."""
    m = h.size
    lo = m // 2
    L, H = np.arange(lo), np.arange(lo, m)
    bl, bh = _all_bits(lo), _all_bits(m - lo)
    el = bl @ h[L] + np.einsum("wi,ij,wj->w", bl, J[np.ix_(L, L)], bl)
    eh = bh @ h[H] + np.einsum("wi,ij,wj->w", bh, J[np.ix_(H, H)], bh)
    total = el[:, None] + eh[None, :] + bl @ (J[np.ix_(L, H)] + J[np.ix_(H, L)].T) @ bh.T
    a, b = np.unravel_index(int(np.argmax(total)), total.shape)
    return float(total[a, b]), np.concatenate([bl[a], bh[b]]).astype(np.uint8)


def _tree_dp(h: np.ndarray, Js: np.ndarray) -> tuple[float, np.ndarray]:
    """Exact max on a tree-shaped interaction graph (``Js`` symmetric)."""
    m = h.size
    nbrs = [np.flatnonzero(Js[i]) for i in range(m)]
    order, parent = [0], {0: -1}
    for v in order:
        for u in nbrs[v]:
            if u not in parent:
                parent[u] = v
                order.append(u)
    best = np.zeros((m, 2))
    pick = np.zeros((m, 2), dtype=np.uint8)  # child's bit given parent bit
    for v in reversed(order):
        best[v, 1] += h[v]
        p = parent[v]
        if p >= 0:
            for bp in (0, 1):
                cand = best[v] + Js[p, v] * bp * np.array([0.0, 1.0])
                pick[v, bp] = int(np.argmax(cand))
                best[p, bp] += cand[pick[v, bp]]
    x = np.zeros(m, dtype=np.uint8)
    x[0] = int(np.argmax(best[0]))
    for v in order[1:]:
        x[v] = pick[v, x[parent[v]]]
    return float(best[0, x[0]]), x


def _anneal(h: np.ndarray, Js: np.ndarray, rng, restarts: int = 16, sweeps: int = 400) -> tuple[float, np.ndarray]:
    """Metropolis single-flip annealing, vectorised over restarts, then greedy polish."""
    rng = np.random.default_rng(rng)
    m = h.size
    x = rng.integers(0, 2, size=(restarts, m)).astype(float)
    field_ = h + x @ Js
    energy = x @ h + 0.5 * np.einsum("ri,ij,rj->r", x, Js, x)
    scale = float(np.max(np.abs(h)) + np.max(np.abs(Js).sum(axis=1))) or 1.0
    temps = np.geomspace(scale, scale * 1e-5, sweeps)
    best_e, best_x = energy.copy(), x.copy()
    rows = np.arange(restarts)

    def flip(i, accept):
        nonlocal field_, energy
        d = (1 - 2 * x[accept, i]) * field_[accept, i]
        energy[accept] += d
        step = 1 - 2 * x[accept, i]
        x[accept, i] += step
        field_[accept] += step[:, None] * Js[i][None, :]

    for temp in temps:
        for i in rng.permutation(m):
            d = (1 - 2 * x[:, i]) * field_[:, i]
            accept = rows[(d > 0) | (rng.random(restarts) < np.exp(np.minimum(d, 0) / temp))]
            if accept.size:
                flip(i, accept)
        better = energy > best_e
        best_e[better], best_x[better] = energy[better], x[better]
    x = best_x.copy()
    field_ = h + x @ Js
    energy = best_e.copy()
    improved = True
    while improved:
        improved = False
        for i in range(m):
            d = (1 - 2 * x[:, i]) * field_[:, i]
            accept = rows[d > 1e-15]
            if accept.size:
                flip(i, accept)
                improved = True
    k = int(np.argmax(energy))
    return float(energy[k]), x[k].astype(np.uint8)


def _terms_of(source) -> tuple[list[GeneratorTerm], int | None]:
    if isinstance(source, ReadoutNoiseModel):
        return list(source.generator_terms), source.n
    if isinstance(source, RateSet):
        return list(source.terms), source.n
    return list(source), None


def maximize_exit_rate(source, n: int | None = None, method: str = "auto", rng=0,
                       exhaustive_limit: int = 22, restarts: int = 16, sweeps: int = 400) -> GammaResult:
    """Maximise ``R(x)`` over bit strings.

    The interaction graph is split into connected components.  ``auto``
    solves each exactly when it has at most ``exhaustive_limit`` qubits or
    is a tree, and anneals it otherwise.  ``exhaustive`` and ``anneal``
    force one method for every component.
    """
    terms, n0 = _terms_of(source)
    n = n if n is not None else n0
    if n is None:
        raise ValueError("n is required for bare generator terms")
    if method not in ("auto", "exhaustive", "anneal"):
        raise ValueError(f"unknown method {method!r}")
    c, h, J = exit_rate_form(terms, n)
    Js = J + J.T
    x = np.zeros(n, dtype=np.uint8)
    total = c
    exact = True
    used = set()
    seen = np.zeros(n, dtype=bool)
    rng = np.random.default_rng(rng)
    for start in range(n):
        if seen[start]:
            continue
        comp, stack = [], [start]
        seen[start] = True
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in np.flatnonzero(Js[v]):
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
        comp = np.array(sorted(comp))
        hc, Jc, Jsc = h[comp], J[np.ix_(comp, comp)], Js[np.ix_(comp, comp)]
        edges = int(np.count_nonzero(np.triu(Jsc, 1)))
        if comp.size == 1:
            val, xc = max(hc[0], 0.0), np.array([1 if hc[0] > 0 else 0], dtype=np.uint8)
            kind = "separable"
        elif method == "anneal" or (method == "auto" and comp.size > exhaustive_limit and edges != comp.size - 1):
            val, xc = _anneal(hc, Jsc, rng, restarts, sweeps)
            kind = "anneal"
            exact = False
        elif method == "auto" and edges == comp.size - 1:
            val, xc = _tree_dp(hc, Jsc)
            kind = "tree"
        else:
            if comp.size > 30:
                raise ValueError(f"component of {comp.size} qubits is too large to enumerate")
            val, xc = _exhaustive(hc, Jc)
            kind = "exhaustive"
        used.add(kind)
        total += val
        x[comp] = xc
    return GammaResult(max(float(total), 0.0), x, exact, "+".join(sorted(used)) or "empty")


def ctmp_gamma(source, n: int | None = None, **kwargs) -> float:
    """Noise strength ``gamma = max_x R(x) = -min_x <x|G|x>``."""
    return maximize_exit_rate(source, n, **kwargs).gamma


def ctmp_overhead(gamma: float) -> float:
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return math.exp(2.0 * gamma)


@dataclass(frozen=True)
class CtmpExpansion:
    """Poisson-weighted series ``inv(Lambda) = Gamma sum_a q_a (-1)^a Q^a``."""

    gamma: float

    @property
    def Gamma(self) -> float:
        return ctmp_overhead(self.gamma)

    def q(self, alpha) -> np.ndarray:
        return scipy.stats.poisson.pmf(alpha, self.gamma)

    def sign_weights(self, alpha) -> np.ndarray:
        """``c_a = e^gamma (-gamma)^a / a!``."""
        a = np.asarray(alpha)
        return self.Gamma * self.q(a) * np.where(a % 2 == 0, 1.0, -1.0)

    def truncation_order(self, tail: float = 1e-12) -> int:
        return int(scipy.stats.poisson.isf(tail, self.gamma)) + 1 if self.gamma > 0 else 0

    def cap(self) -> int:
        return int(math.ceil(self.gamma + 40.0 * math.sqrt(self.gamma) + 50.0))

    def kernel(self, generator: np.ndarray) -> np.ndarray:
        """Dense ``Q = I + G / gamma`` (oracle use)."""
        if self.gamma == 0:
            return np.eye(generator.shape[0])
        return np.eye(generator.shape[0]) + generator / self.gamma


class CtmpSampler:
    """Random walks with kernel ``Q`` started from observed bit strings."""

    def __init__(self, source, n: int | None = None, gamma: float | None = None, max_cells: int = 4_000_000,
                 **gamma_kwargs):
        terms, n0 = _terms_of(source)
        self.n = n if n is not None else n0
        self.arrays = _TermArrays.build(terms)
        if gamma is None:
            gamma = ctmp_gamma(terms, self.n, **gamma_kwargs)
        if gamma == 0 and len(self.arrays):
            raise ValueError("gamma is 0 but the rate set has nonzero rates")
        self.expansion = CtmpExpansion(float(gamma))
        self.max_cells = max_cells
        self.overflow = 0

    @property
    def gamma(self) -> float:
        return self.expansion.gamma

    @property
    def Gamma(self) -> float:
        return self.expansion.Gamma

    def walk(self, states: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
        """Return end points and walk lengths for each start state (copied)."""
        rng = np.random.default_rng(rng)
        states = np.array(states, dtype=np.uint8, copy=True)
        w = states.shape[0]
        alpha = rng.poisson(self.gamma, size=w) if self.gamma > 0 else np.zeros(w, dtype=np.int64)
        cap = self.expansion.cap()
        over = alpha > cap
        if over.any():
            self.overflow += int(over.sum())
            alpha = np.minimum(alpha, cap)
        if len(self.arrays) == 0:
            return states, alpha
        chunk = max(1, self.max_cells // len(self.arrays))
        rate = self.arrays.rate
        for step in range(int(alpha.max(initial=0))):
            active = np.flatnonzero(alpha > step)
            for lo in range(0, active.size, chunk):
                rows = active[lo:lo + chunk]
                weights = self.arrays.matches(states[rows]) * rate
                cum = np.cumsum(weights, axis=1)
                exit_rate = cum[:, -1]
                if np.any(exit_rate > self.gamma * (1 + 1e-9) + 1e-15):
                    raise ArithmeticError("exit rate above gamma at a visited state; gamma is underestimated")
                u = rng.random(rows.size) * self.gamma
                jump = u < exit_rate
                if not jump.any():
                    continue
                cj = cum[jump]
                chosen = (cj < u[jump][:, None]).sum(axis=1)
                chosen = np.minimum(chosen, cj.shape[1] - 1)
                self.arrays.apply(states, rows[jump], chosen)
        return states, alpha

    def shot_values(self, bits: np.ndarray, setting: WitnessSetting, T: int, rng) -> np.ndarray:
        """Per-shot mean over ``T`` walks of ``Gamma (-1)^a O(end)``."""
        if T < 1:
            raise ValueError("T must be >= 1")
        starts = np.repeat(bits, T, axis=0)
        end, alpha = self.walk(starts, rng)
        vals = raw_shot_values(end, setting) * np.where(alpha % 2 == 0, 1.0, -1.0) * self.Gamma
        return vals.reshape(len(bits), T).mean(axis=1)


def ctmp_mitigated_estimate(shot_batches: Sequence[np.ndarray], settings: Sequence[WitnessSetting], rate_set,
                            T: int = 1, rng=None, delta: float = 0.003, gamma: float | None = None,
                            error_mode: str = "hoeffding", sampler: CtmpSampler | None = None) -> MitigatedEstimate:
    """CTMP estimate; the Hoeffding count is ``M K`` (shot-level averages are bounded by ``Gamma``)."""
    _check_aligned(shot_batches, settings)
    rng = np.random.default_rng(rng)
    if sampler is None:
        sampler = CtmpSampler(rate_set, settings[0].n, gamma)
    means = np.array([sampler.shot_values(b, s, T, rng).mean() for b, s in zip(shot_batches, settings)])
    return summarize(means, K=_shots_per_setting(shot_batches), T=T, delta=delta, gamma=sampler.gamma,
                     Gamma=sampler.Gamma, method="CTMP", n=settings[0].n, error_mode=error_mode,
                     alpha_overflow=sampler.overflow)


# ---------------------------------------------------------------- generator sets


def select_generator_set(mode: str, calibration: CalibrationResult, graph: GraphSpec | None = None,
                         threshold: float = 0.3) -> RateSet:
    """Pick which pair generators enter the mitigation model.

    ``tp`` keeps one-qubit terms, ``nearest_neighbor`` the graph's edges,
    ``full`` every calibrated pair and ``most_correlated`` the pairs whose
    flip-event correlation exceeds ``threshold`` in magnitude.
    """
    if mode not in GENERATOR_MODES:
        raise ValueError(f"unknown generator-set mode {mode!r}; choose from {GENERATOR_MODES}")
    gens = calibration.pair_generators
    if mode == "tp":
        pairs: Iterable[tuple[int, int]] = []
    elif mode == "nearest_neighbor":
        if graph is None:
            raise ValueError("nearest_neighbor mode needs the graph")
        pairs = [(min(a, b), max(a, b)) for a, b in graph.edges]
    elif mode == "full":
        pairs = list(gens)
    else:
        _, pairs = correlation_coefficients(calibration.covariance, threshold)
    pairs = sorted(p for p in pairs if p in gens)
    rates = extract_rates(gens, calibration.n, pair_subset=pairs)
    rates.mode = mode
    return rates


# ---------------------------------------------------------------- reports

REPORT_FIELDS = ("method", "n", "M", "K", "T", "value", "std_error", "gamma", "Gamma", "wall_time")


def report_row(est: MitigatedEstimate, wall_time: float) -> dict:
    return {
        "method": est.method,
        "n": est.n,
        "M": est.M,
        "K": est.K,
        "T": est.T,
        "value": repr(float(est.value)),
        "std_error": repr(float(est.std_error)),
        "gamma": repr(float(est.gamma)),
        "Gamma": repr(float(est.Gamma)),
        "wall_time": f"{wall_time:.3f}",
    }


def write_report(rows: Iterable[dict], path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
