"""Readout calibration from random-state-preparation data.

A dataset holds weighted records ``(x, y, count)``: prepared string ``x`` was
read out as ``y`` ``count`` times.  From it we estimate per-qubit flip
probabilities, conditional two-qubit transition matrices, their clipped
matrix logarithms (pair generators), the generator rates, and covariance
diagnostics of flip events.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .noise import GeneratorTerm, ReadoutNoiseModel, apply_readout_noise

__all__ = [
    "CalibrationDataset",
    "CalibrationError",
    "PairStats",
    "CovarianceTable",
    "RateSet",
    "CalibrationResult",
    "design_random_states",
    "simulate_calibration",
    "estimate_tp_params",
    "estimate_pair_lambda",
    "pair_generator",
    "extract_rates",
    "covariance_matrix",
    "correlation_coefficients",
    "calibrate",
    "swap_conjugate",
    "FLIP_TYPES",
]

log = logging.getLogger(__name__)

FLIP_TYPES = ("00->11", "01->10", "10->01", "11->00")
_SWAP = np.eye(4)[[0, 2, 1, 3]]


class CalibrationError(ValueError):
    pass


@dataclass(eq=False)
class CalibrationDataset:
    n: int
    x: np.ndarray
    y: np.ndarray
    counts: np.ndarray
    num_states: int = 0
    shots_per_state: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.uint8).reshape(-1, self.n)
        self.y = np.asarray(self.y, dtype=np.uint8).reshape(-1, self.n)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not (len(self.x) == len(self.y) == len(self.counts)):
            raise ValueError("x, y and counts must have the same length")
        if np.any(self.counts < 1):
            raise ValueError("record counts must be >= 1")

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def is_complete(self) -> bool:
        return self.total == self.num_states * self.shots_per_state

    def records(self) -> Iterable[tuple[np.ndarray, np.ndarray, int]]:
        for xi, yi, c in zip(self.x, self.y, self.counts):
            yield xi, yi, int(c)

    @property
    def flips(self) -> np.ndarray:
        return self.x ^ self.y

    def to_jsonl(self, path=None, header: dict | None = None) -> str:
        """One record per line after a first ``{"header": {...}}`` line of metadata; returns the text."""
        meta = {"num_states": self.num_states, "shots_per_state": self.shots_per_state, **(header or {})}
        lines = [json.dumps({"header": meta}, sort_keys=True)]
        for xi, yi, c in self.records():
            lines.append(json.dumps({"x": "".join(map(str, xi)), "y": "".join(map(str, yi)), "count": c}))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_jsonl(cls, path) -> "CalibrationDataset":
        xs, ys, cs = [], [], []
        meta: dict = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    if "header" in rec:
                        meta = rec["header"]
                        continue
                    xs.append([int(ch) for ch in rec["x"]])
                    ys.append([int(ch) for ch in rec["y"]])
                    cs.append(int(rec["count"]))
                except (KeyError, ValueError, TypeError) as exc:
                    raise CalibrationError(f"{path}:{lineno}: bad record ({exc})") from exc
        if not xs:
            raise CalibrationError(f"{path}: no records")
        n = len(xs[0])
        if any(len(r) != n for r in xs + ys):
            raise CalibrationError(f"{path}: bit strings of different lengths")
        if any(b not in (0, 1) for r in xs + ys for b in r):
            raise CalibrationError(f"{path}: bit strings must contain only 0 and 1")
        if any(c < 0 for c in cs):
            raise CalibrationError(f"{path}: negative count")
        x = np.array(xs, dtype=np.uint8)
        counts = np.array(cs)
        num_states = int(meta.get("num_states") or len(np.unique(x, axis=0)))
        per_state = int(meta.get("shots_per_state") or counts.sum() // num_states)
        return cls(n, x, np.array(ys, dtype=np.uint8), counts, num_states, per_state)


def design_random_states(n: int, count: int | None = None, rng=None) -> np.ndarray:
    """Uniform random preparation strings; ``count`` defaults to ``2 n^2``."""
    if count is None:
        count = 2 * n * n
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng)
    return rng.integers(0, 2, size=(count, n), dtype=np.uint8)


def simulate_calibration(model: ReadoutNoiseModel, states: np.ndarray, shots: int, rng,
                         chunk: int = 200_000) -> CalibrationDataset:
    """Run every prepared state through the model ``shots`` times and tally."""
    rng = np.random.default_rng(rng)
    states = np.asarray(states, dtype=np.uint8)
    n = model.n
    per_chunk = max(1, chunk // max(shots, 1))
    tallies: dict[bytes, int] = {}
    nbytes = (2 * n + 7) // 8
    shifts = np.arange(2 * n - 1, -1, -1, dtype=np.int64)
    weights = np.left_shift(np.int64(1), shifts)
    for start in range(0, len(states), per_chunk):
        block = states[start:start + per_chunk]
        x = np.repeat(block, shots, axis=0)
        y = apply_readout_noise(x, model, rng)
        xy = np.concatenate([x, y], axis=1)
        if 2 * n <= 62:
            # one integer key per shot, MSB first so the order matches the packed-bytes path
            ints, cnt = np.unique(xy.astype(np.int64) @ weights, return_counts=True)
            keys = np.packbits(((ints[:, None] >> shifts) & 1).astype(np.uint8), axis=1)
        else:
            keys, cnt = np.unique(np.packbits(xy, axis=1), axis=0, return_counts=True)
        for key, c in zip(keys, cnt):
            kb = key.tobytes()
            tallies[kb] = tallies.get(kb, 0) + int(c)
    keys = np.frombuffer(b"".join(tallies.keys()), dtype=np.uint8).reshape(-1, nbytes)
    bits = np.unpackbits(keys, axis=1)[:, : 2 * n]
    counts = np.fromiter(tallies.values(), dtype=np.int64, count=len(tallies))
    return CalibrationDataset(n, bits[:, :n], bits[:, n:], counts, len(states), shots)


def estimate_tp_params(data: CalibrationDataset) -> np.ndarray:
    """Count-weighted flip frequencies ``(eps_i, eta_i)`` per qubit."""
    w = data.counts[:, None].astype(float)
    prep0 = (data.x == 0)
    prep1 = ~prep0
    flips = data.flips.astype(bool)
    n0 = (w * prep0).sum(axis=0)
    n1 = (w * prep1).sum(axis=0)
    bad = np.flatnonzero((n0 == 0) | (n1 == 0))
    if bad.size:
        raise CalibrationError(f"qubits {bad.tolist()} never prepared in both 0 and 1")
    eps = (w * (prep0 & flips)).sum(axis=0) / n0
    eta = (w * (prep1 & flips)).sum(axis=0) / n1
    return np.column_stack([eps, eta])


def swap_conjugate(m: np.ndarray) -> np.ndarray:
    """Re-express a 4x4 pair matrix with the two qubits' roles exchanged."""
    return _SWAP @ m @ _SWAP


def _pair_counts(data: CalibrationDataset, j: int, k: int, conditioned: bool,
                 flip_total: np.ndarray | None = None) -> np.ndarray:
    flips = data.flips
    w = data.counts
    if conditioned:
        if flip_total is None:
            flip_total = flips.sum(axis=1, dtype=np.int64)
        keep = (flip_total - flips[:, j] - flips[:, k]) == 0
        w = np.where(keep, w, 0)
    v = 2 * data.x[:, j].astype(np.int64) + data.x[:, k]
    u = 2 * data.y[:, j].astype(np.int64) + data.y[:, k]
    return np.bincount(4 * u + v, weights=w, minlength=16).reshape(4, 4)


def estimate_pair_lambda(data: CalibrationDataset, j: int, k: int, conditioned: bool = True,
                         _flip_total: np.ndarray | None = None) -> np.ndarray:
    """Column-stochastic ``<u|Lambda(j,k)|v> = Pr[y_jk = u | x_jk = v, rest unflipped]``.

    Index ``2*b_j + b_k``.  ``conditioned=False`` drops the "other qubits
    read correctly" filter, which keeps far more records at large ``n``.
    """
    if j == k:
        raise ValueError("pair needs two distinct qubits")
    for q in (j, k):
        if not 0 <= q < data.n:
            raise IndexError(f"qubit {q} out of range")
    v = 2 * data.x[:, j].astype(np.int64) + data.x[:, k]
    seen = np.bincount(v, minlength=4)
    if np.any(seen == 0):
        missing = [format(i, "02b") for i in np.flatnonzero(seen == 0)]
        raise CalibrationError(f"pair ({j},{k}) never prepared as {missing}")
    counts = _pair_counts(data, j, k, conditioned, _flip_total)
    cols = counts.sum(axis=0)
    if np.any(cols == 0):
        raise CalibrationError(f"pair ({j},{k}): conditioning left an empty column")
    return counts / cols


def _principal_log(m: np.ndarray) -> np.ndarray:
    w, vecs = np.linalg.eig(m)
    if np.any((np.abs(w.imag) < 1e-12) & (w.real <= 0)):
        raise CalibrationError("matrix has an eigenvalue on the closed negative real axis; no real logarithm")
    if np.linalg.cond(vecs) < 1e8:
        out = vecs @ np.diag(np.log(w)) @ np.linalg.inv(vecs)
    else:
        out = scipy.linalg.logm(m)
    if np.max(np.abs(np.imag(out))) > 1e-10:
        raise CalibrationError("matrix logarithm is not real")
    return np.real(out)


def pair_generator(lambda_jk: np.ndarray) -> np.ndarray:
    """Clipped principal log: negative off-diagonals -> 0, columns re-summed to 0."""
    g = _principal_log(np.asarray(lambda_jk, dtype=float))
    off = ~np.eye(4, dtype=bool)
    g = np.where(off & (g < 0), 0.0, g)
    np.fill_diagonal(g, 0.0)
    np.fill_diagonal(g, -g.sum(axis=0))
    return g


@dataclass
class RateSet:
    """Generator terms chosen for mitigation plus extraction diagnostics."""

    terms: list[GeneratorTerm]
    n: int
    clamped: int = 0
    mode: str = "custom"

    def __iter__(self):
        return iter(self.terms)

    def __len__(self):
        return len(self.terms)

    def pair_terms(self) -> list[GeneratorTerm]:
        return [t for t in self.terms if len(t.qubits) == 2]

    def pairs(self) -> set[tuple[int, int]]:
        return {t.qubits for t in self.pair_terms()}

    def as_model(self) -> ReadoutNoiseModel:
        return ReadoutNoiseModel(self.n, generator_terms=tuple(self.terms))


# (row u, column v) of G(j,k) for each pair kind
_PAIR_ENTRIES = {"00->11": (3, 0), "11->00": (0, 3), "01->10": (2, 1), "10->01": (1, 2)}


def extract_rates(pair_generators: dict[tuple[int, int], np.ndarray], n: int,
                  pair_subset: Iterable[tuple[int, int]] | None = None) -> RateSet:
    """Read generator rates off the pair generators.

    Two-qubit rates are single entries of ``G(j,k)``.  One-qubit rates average
    the matching entries over every available pair containing the qubit,
    which for the complete pair set is the ``1 / (2 (n-1))`` normalisation.
    ``pair_subset`` limits which pairs contribute two-qubit terms.
    """
    sums = np.zeros((n, 2))
    seen = np.zeros(n, dtype=np.int64)
    clamped = 0
    for (j, k), g in pair_generators.items():
        for q, gq in ((j, g), (k, swap_conjugate(g))):
            # q is the first bit of gq
            sums[q, 0] += gq[2, 0] + gq[3, 1]
            sums[q, 1] += gq[0, 2] + gq[1, 3]
            seen[q] += 1
    terms: list[GeneratorTerm] = []
    for q in range(n):
        for col, kind in ((0, "0->1"), (1, "1->0")):
            r = sums[q, col] / (2 * seen[q]) if seen[q] else 0.0
            if r < 0:
                clamped += 1
                r = 0.0
            terms.append(GeneratorTerm(kind, (q,), float(r)))
    chosen = pair_generators.keys() if pair_subset is None else {(min(p), max(p)) for p in pair_subset}
    for j, k in sorted(chosen):
        g = pair_generators.get((j, k))
        if g is None:
            raise CalibrationError(f"no generator estimated for pair ({j},{k})")
        for kind, (u, v) in _PAIR_ENTRIES.items():
            r = float(g[u, v])
            if r < 0:
                clamped += 1
                r = 0.0
            terms.append(GeneratorTerm(kind, (j, k), r))
    if clamped:
        log.info("clamped %d negative rate estimates to zero", clamped)
    return RateSet(terms, n, clamped)


@dataclass
class CovarianceTable:
    """Per-pair flip-event covariances keyed by flip type ``"ab->a'b'"``.

    ``cov[t][j, k]`` (``j < k``) is the covariance of the events "qubit j
    flipped" and "qubit k flipped" among shots prepared with ``x_j x_k = ab``.
    ``corr`` holds the matching correlation coefficients (NaN where a
    variance vanishes).
    """

    n: int
    cov: dict[str, np.ndarray]
    corr: dict[str, np.ndarray]
    support: dict[str, np.ndarray]

    def pairs(self) -> list[tuple[int, int]]:
        return list(combinations(range(self.n), 2))

    def values(self, flip_type: str) -> np.ndarray:
        iu = np.triu_indices(self.n, 1)
        return self.cov[flip_type][iu]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["j", "k", "type", "cov", "corr", "shots"])
        for j, k in self.pairs():
            for t in FLIP_TYPES:
                w.writerow([j, k, t, repr(float(self.cov[t][j, k])), repr(float(self.corr[t][j, k])),
                            int(self.support[t][j, k])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def covariance_matrix(data: CalibrationDataset) -> CovarianceTable:
    w = data.counts.astype(float)
    f = data.flips.astype(float)
    cov: dict[str, np.ndarray] = {}
    corr: dict[str, np.ndarray] = {}
    support: dict[str, np.ndarray] = {}
    for t in FLIP_TYPES:
        a, b = int(t[0]), int(t[1])
        ia = (data.x == a).astype(float)
        ib = (data.x == b).astype(float)
        n_ab = (ia * w[:, None]).T @ ib
        e_j = (ia * f * w[:, None]).T @ ib
        e_k = (ia * w[:, None]).T @ (ib * f)
        e_jk = (ia * f * w[:, None]).T @ (ib * f)
        with np.errstate(invalid="ignore", divide="ignore"):
            pj = e_j / n_ab
            pk = e_k / n_ab
            c = e_jk / n_ab - pj * pk
            denom = np.sqrt(pj * (1 - pj) * pk * (1 - pk))
            r = np.where(denom > 0, c / np.where(denom > 0, denom, 1), np.nan)
        c = np.where(n_ab > 0, c, np.nan)
        cov[t] = np.triu(np.nan_to_num(c), 1)
        corr[t] = np.where(np.triu(np.ones_like(r, dtype=bool), 1), np.clip(r, -1, 1), np.nan)
        support[t] = np.triu(n_ab, 1)
    return CovarianceTable(data.n, cov, corr, support)


def correlation_coefficients(data_or_table, threshold: float = 0.3
                             ) -> tuple[dict[tuple[int, int], dict[str, float]], set[tuple[int, int]]]:
    """Correlation coefficients per pair and the pairs with any ``|r| > threshold``."""
    table = data_or_table if isinstance(data_or_table, CovarianceTable) else covariance_matrix(data_or_table)
    coeffs: dict[tuple[int, int], dict[str, float]] = {}
    selected: set[tuple[int, int]] = set()
    skipped = 0
    for j, k in table.pairs():
        row = {}
        for t in FLIP_TYPES:
            r = float(table.corr[t][j, k])
            if np.isnan(r):
                skipped += 1
                continue
            row[t] = r
            if abs(r) > threshold:
                selected.add((j, k))
        coeffs[(j, k)] = row
    if skipped:
        warnings.warn(f"{skipped} flip-event pairs had zero variance and were excluded", RuntimeWarning,
                      stacklevel=2)
    return coeffs, selected


@dataclass(frozen=True)
class PairStats:
    pair: tuple[int, int]
    lambda_jk: np.ndarray
    g_jk: np.ndarray
    covariances: dict[str, float]
    corr_coeffs: dict[str, float]


@dataclass
class CalibrationResult:
    n: int
    tp_params: np.ndarray
    pair_lambdas: dict[tuple[int, int], np.ndarray]
    pair_generators: dict[tuple[int, int], np.ndarray]
    covariance: CovarianceTable
    failed_pairs: dict[tuple[int, int], str] = field(default_factory=dict)

    def pair_stats(self, j: int, k: int) -> PairStats:
        key = (min(j, k), max(j, k))
        return PairStats(key, self.pair_lambdas[key], self.pair_generators[key],
                         {t: float(self.covariance.cov[t][key]) for t in FLIP_TYPES},
                         {t: float(self.covariance.corr[t][key]) for t in FLIP_TYPES})


def calibrate(data: CalibrationDataset, pairs: Sequence[tuple[int, int]] | None = None,
              conditioned: bool = True) -> CalibrationResult:
    """All estimates in one pass.  ``pairs`` defaults to every qubit pair."""
    tp = estimate_tp_params(data)
    if pairs is None:
        pairs = list(combinations(range(data.n), 2))
    flip_total = data.flips.sum(axis=1, dtype=np.int64)
    lambdas, gens, failed = {}, {}, {}
    for j, k in pairs:
        key = (min(j, k), max(j, k))
        try:
            lam = estimate_pair_lambda(data, *key, conditioned=conditioned, _flip_total=flip_total)
            gens[key] = pair_generator(lam)
            lambdas[key] = lam
        except CalibrationError as exc:
            failed[key] = str(exc)
    if failed:
        log.warning("%d pairs could not be calibrated", len(failed))
    return CalibrationResult(data.n, tp, lambdas, gens, covariance_matrix(data), failed)
