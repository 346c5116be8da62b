"""Probability outputs for linear SVMs.

* Platt scaling: a two-parameter sigmoid ``1 / (1 + exp(a*f + b))`` fitted to
  decision values by regularized maximum likelihood (Newton with backtracking).
* One-vs-one training with cross-fitted calibration per class pair.
* Pairwise coupling of the K(K-1)/2 pairwise probabilities into one posterior.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Any, Sequence

import numpy as np
from scipy.special import expit

from subclassrep._seeding import derive_seed, rng_for
from subclassrep.errors import DataError, InvariantError
from subclassrep.svm import LinearModel, TrainConfig, train_binary

# pairwise probabilities are clipped into [MIN_PROB, 1 - MIN_PROB] before coupling
MIN_PROB = 1e-7


@dataclass(frozen=True)
class PlattParams:
    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise InvariantError(f"non-finite sigmoid parameters ({self.a}, {self.b})")


def sigmoid_prob(params: PlattParams, f):
    """``1 / (1 + exp(a*f + b))`` without overflow for large ``|a*f + b|``."""
    z = params.a * np.asarray(f, dtype=np.float64) + params.b
    p = expit(-z)
    return float(p) if p.ndim == 0 else p


def _platt_nll(f, t, a, b) -> float:
    z = a * f + b
    return float(np.sum(np.logaddexp(0.0, z) - (1.0 - t) * z))


def fit_platt(decisions, labels, max_iter: int = 100, grad_tol: float = 1e-8) -> PlattParams:
    """Fit sigmoid parameters to decision values and binary labels.

    Labels may be booleans, {0, 1} or {-1, +1}; positive means "in class".
    Targets are smoothed to ``(N+ + 1)/(N+ + 2)`` and ``1/(N- + 2)`` so a
    perfectly separated input still gives finite parameters.
    """
    f = np.asarray(decisions, dtype=np.float64).reshape(-1)
    lab = np.asarray(labels).reshape(-1)
    if f.shape != lab.shape:
        raise DataError("decisions and labels differ in length")
    if not np.all(np.isfinite(f)):
        raise DataError("decision values must be finite")
    pos = lab > 0
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("Platt fitting needs both positive and negative examples")

    t = np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a, b = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    fval = _platt_nll(f, t, a, b)
    sigma = 1e-12
    for _ in range(max_iter):
        p = expit(-(a * f + b))
        d2 = p * (1.0 - p)
        d1 = t - p
        g1 = float(f @ d1)
        g2 = float(d1.sum())
        if max(abs(g1), abs(g2)) <= grad_tol:
            break
        h11 = sigma + float(f * f @ d2)
        h22 = sigma + float(d2.sum())
        h21 = float(f @ d2)
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nf = _platt_nll(f, t, na, nb)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            # no further decrease representable in floating point
            break
    return PlattParams(a, b)


@dataclass(frozen=True)
class CalibratedBinary:
    """A linear separator and its sigmoid; ``identity`` names what it detects."""

    model: LinearModel
    platt: PlattParams
    identity: tuple

    def decision_function(self, X) -> np.ndarray:
        return self.model.decision_function(X)

    def probability(self, X) -> np.ndarray:
        return np.asarray(sigmoid_prob(self.platt, self.decision_function(X)), dtype=np.float64).reshape(-1)

    def to_dict(self) -> dict[str, Any]:
        return {"identity": list(self.identity), "model": self.model.to_dict(), "platt": asdict(self.platt)}

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "CalibratedBinary":
        return cls(LinearModel.from_dict(obj["model"]), PlattParams(**obj["platt"]), tuple(obj["identity"]))


def fold_assignment(y, folds: int, seed: int) -> np.ndarray:
    """Stratified fold ids: each label's examples are shuffled and dealt round-robin."""
    y = np.asarray(y)
    rng = rng_for(seed)
    out = np.empty(y.shape[0], dtype=np.int64)
    for value in np.unique(y):
        idx = np.flatnonzero(y == value)
        out[idx[rng.permutation(idx.size)]] = np.arange(idx.size) % folds
    return out


def cross_fit_decisions(X, y, config: TrainConfig, folds: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-fold decision values and the fold ids used to produce them."""
    fold = fold_assignment(y, folds, seed)
    out = np.empty(y.shape[0])
    for k in range(folds):
        held = fold == k
        model, _ = train_binary(X[~held], y[~held], config)
        out[held] = model.decision_function(X[held])
    return out, fold


def train_calibrated_binary(X, y, config: TrainConfig, folds: int, seed: int, identity: tuple = ()) -> CalibratedBinary:
    """Train on all of (X, y); fit the sigmoid on pooled out-of-fold decisions."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if folds < 2:
        raise DataError(f"calibration needs at least 2 folds, got {folds}")
    for value in (-1.0, 1.0):
        count = int(np.sum(y == value))
        if count < folds:
            raise DataError(f"{count} example(s) labelled {value:+.0f}; calibration with {folds} folds needs at least {folds}")
    cfg = _with_seed(config, derive_seed(seed, 0))
    decisions, _ = cross_fit_decisions(X, y, cfg, folds, derive_seed(seed, 1))
    platt = fit_platt(decisions, y)
    model, _ = train_binary(X, y, cfg)
    return CalibratedBinary(_strip(model), platt, tuple(identity))


def _with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return TrainConfig(**{**asdict(config), "seed": seed})


def _strip(model: LinearModel) -> LinearModel:
    return LinearModel(model.weights, model.bias)


def couple(r, tolerance: float = 1e-10, max_iter: int | None = None) -> np.ndarray:
    """Combine pairwise probabilities ``r[i, j] = P(i | i or j)`` into a posterior.

    Minimizes ``sum_{i<j} (r[j, i] p_i - r[i, j] p_j)^2`` over the simplex with
    the usual fixed-point sweep, renormalizing after each coordinate update.
    The diagonal of ``r`` is ignored.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] < 2:
        raise DataError(f"r must be a square matrix with K >= 2, got shape {r.shape}")
    k = r.shape[0]
    off = ~np.eye(k, dtype=bool)
    if not np.all((r[off] > 0) & (r[off] < 1)):
        raise DataError("pairwise probabilities must lie strictly inside (0, 1)")
    if np.max(np.abs((r + r.T)[off] - 1.0)) > 1e-9:
        raise DataError("pairwise probabilities are not complementary (r_ij + r_ji != 1)")
    if max_iter is None:
        max_iter = 100 * k

    Q = -r.T * r
    Q[np.diag_indices(k)] = 0.0
    Q[np.diag_indices(k)] = np.sum(np.where(off, r.T * r.T, 0.0), axis=1)
    p = np.full(k, 1.0 / k)
    Qp = Q @ p
    pQp = p @ Qp
    for _ in range(max_iter):
        max_change = 0.0
        for t in range(k):
            diff = (-Qp[t] + pQp) / Q[t, t]
            p[t] += diff
            pQp = (pQp + diff * (diff * Q[t, t] + 2.0 * Qp[t])) / (1.0 + diff) ** 2
            Qp = (Qp + diff * Q[t]) / (1.0 + diff)
            p /= 1.0 + diff
            max_change = max(max_change, abs(diff))
        if max_change <= tolerance:
            break
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def coupling_objective(r, p) -> float:
    r = np.asarray(r, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    k = r.shape[0]
    return float(sum((r[j, i] * p[i] - r[i, j] * p[j]) ** 2 for i in range(k) for j in range(i + 1, k)))


@dataclass(frozen=True)
class PairwiseModel:
    """One calibrated binary per class pair (i, j), i < j, with class i positive."""

    classes: tuple[str, ...]
    binaries: tuple[CalibratedBinary, ...]

    def __post_init__(self):
        k = len(self.classes)
        if len(self.binaries) != k * (k - 1) // 2:
            raise InvariantError(f"{len(self.binaries)} binaries for {k} classes")

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(combinations(range(len(self.classes)), 2))

    def pairwise_matrix(self, X) -> np.ndarray:
        """(n, K, K) array of clipped pairwise probabilities."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        k = len(self.classes)
        r = np.full((X.shape[0], k, k), 0.5)
        for (i, j), binary in zip(self.pairs, self.binaries):
            p = np.clip(binary.probability(X), MIN_PROB, 1.0 - MIN_PROB)
            r[:, i, j] = p
            r[:, j, i] = 1.0 - p
        return r

    def predict_proba(self, X) -> np.ndarray:
        return np.vstack([couple(ri) for ri in self.pairwise_matrix(X)])

    def to_dict(self) -> dict[str, Any]:
        return {
            "classes": list(self.classes),
            "pairs": [
                {"pair": [i, j], "model": b.model.to_dict(), "platt": asdict(b.platt)}
                for (i, j), b in zip(self.pairs, self.binaries)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "PairwiseModel":
        classes = tuple(obj["classes"])
        by_pair = {tuple(e["pair"]): e for e in obj["pairs"]}
        binaries = []
        for i, j in combinations(range(len(classes)), 2):
            e = by_pair[(i, j)]
            binaries.append(
                CalibratedBinary(LinearModel.from_dict(e["model"]), PlattParams(**e["platt"]), (classes[i], classes[j]))
            )
        return cls(classes, tuple(binaries))


def train_one_vs_one(
    X,
    y,
    classes: Sequence[str],
    config: TrainConfig = TrainConfig(),
    calibration_folds: int = 3,
    seed: int = 0,
    jobs: int = 1,
) -> PairwiseModel:
    """Train and calibrate one binary per class pair.

    ``y`` holds class indices into ``classes``. Pair ``(i, j)`` uses only the
    examples of classes i and j, with i as the positive label. Pair seeds
    derive from ``(seed, pair index)`` so results do not depend on ``jobs``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    k = len(classes)
    if k < 2:
        raise DataError("one-vs-one needs at least 2 classes")
    counts = np.bincount(y, minlength=k)
    if counts.shape[0] > k:
        raise DataError("class index out of range")
    for idx, cnt in enumerate(counts):
        if cnt < calibration_folds:
            raise DataError(f"class {classes[idx]!r} has {cnt} example(s); at least {calibration_folds} are needed")

    pairs = list(combinations(range(k), 2))

    def job(pair_index: int) -> CalibratedBinary:
        i, j = pairs[pair_index]
        mask = (y == i) | (y == j)
        yy = np.where(y[mask] == i, 1.0, -1.0)
        return train_calibrated_binary(
            X[mask], yy, config, calibration_folds, derive_seed(seed, pair_index), identity=(classes[i], classes[j])
        )

    binaries = _map_jobs(job, range(len(pairs)), jobs)
    return PairwiseModel(tuple(classes), tuple(binaries))


def _map_jobs(fn, items, jobs: int) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
