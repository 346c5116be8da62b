"""Linear L1-loss soft-margin SVM trained by dual coordinate descent.

The bias is learned by appending a constant 1.0 to every example, so the dual
has only box constraints ``0 <= alpha_i <= C`` and each coordinate step is a
clipped one-dimensional Newton update (exact for this quadratic).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any

import numba
import numpy as np

from subclassrep.dataset import BinaryTrainingSet
from subclassrep.errors import DataError, InvariantError


POLISH_FACTOR = 10.0


@dataclass(frozen=True)
class TrainConfig:
    c: float = 1.0
    tolerance: float = 1e-3
    max_epochs: int = 1000
    seed: int = 0
    standardize: bool = False
    debug: bool = False

    def __post_init__(self):
        if not self.c > 0:
            raise DataError(f"c must be positive, got {self.c}")
        if not self.tolerance > 0:
            raise DataError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_epochs < 1:
            raise DataError(f"max_epochs must be positive, got {self.max_epochs}")


@dataclass(frozen=True)
class SolverReport:
    epochs_run: int
    final_violation: float
    converged: bool
    dual_objective: float


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Separator ``<weights, x> + bias`` on raw (unscaled) features.

    ``duals`` and ``scale`` are kept only for in-memory inspection of a fresh
    fit and are not persisted.
    """

    weights: np.ndarray
    bias: float
    duals: np.ndarray | None = field(default=None, repr=False)
    scale: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise InvariantError("model has non-finite parameters")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DataError(f"expected features of dimension {self.dim}, got shape {X.shape}")
        return X @ self.weights + self.bias

    def to_dict(self) -> dict[str, Any]:
        return {"dim": self.dim, "weights": [float(v) for v in self.weights], "bias": self.bias}

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "LinearModel":
        w = np.asarray(obj["weights"], dtype=np.float64)
        if w.shape != (int(obj["dim"]),):
            raise DataError("model 'dim' does not match its weight vector")
        return cls(w, float(obj["bias"]))


def decision_value(model: LinearModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise DataError(f"expected a vector of dimension {model.dim}, got shape {x.shape}")
    return float(x @ model.weights + model.bias)


@numba.njit(cache=True, nogil=True)
def _cd_epoch(Z, alpha, w, qdiag, order, c):
    # Z rows are y_i * [x_i, 1]; w tracks sum_i alpha_i Z_i
    d = Z.shape[1]
    for i in order:
        g = -1.0
        for k in range(d):
            g += Z[i, k] * w[k]
        a = alpha[i]
        if a == 0.0:
            pg = min(g, 0.0)
        elif a == c:
            pg = max(g, 0.0)
        else:
            pg = g
        if pg != 0.0:
            new = min(max(a - g / qdiag[i], 0.0), c)
            delta = new - a
            if delta != 0.0:
                alpha[i] = new
                for k in range(d):
                    w[k] += delta * Z[i, k]


def _violations(Z: np.ndarray, alpha: np.ndarray, w: np.ndarray, c: float) -> np.ndarray:
    g = Z @ w - 1.0
    v = np.abs(g)
    v = np.where(alpha <= 0.0, np.maximum(-g, 0.0), v)
    v = np.where(alpha >= c, np.maximum(g, 0.0), v)
    return v


def _dual_objective(alpha: np.ndarray, w: np.ndarray) -> float:
    return float(alpha.sum() - 0.5 * (w @ w))


def _augment(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))]) * y[:, None]


def _as_xy(data, y=None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, BinaryTrainingSet):
        return data.arrays()
    X = np.asarray(data, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return X, y


def train_binary(data, y=None, config: TrainConfig = TrainConfig()) -> tuple[LinearModel, SolverReport]:
    """Fit a binary linear SVM.

    ``data`` is either a BinaryTrainingSet or a feature matrix accompanied by
    labels ``y`` in {-1, +1}. Coordinates are visited in a fresh seeded random
    permutation each epoch; training stops once the largest KKT violation over
    all examples is at most ``config.tolerance / POLISH_FACTOR`` or after
    ``max_epochs``; ``converged`` reports whether it is within ``tolerance``.
    """
    X, y = _as_xy(data, y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError("features and labels are misaligned")
    if X.shape[1] == 0:
        raise DataError("features have zero dimension")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError("labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DataError("training data must contain both labels")
    if not np.all(np.isfinite(X)):
        raise DataError("features contain NaN or infinite values")

    scale = None
    Xs = X
    if config.standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        Xs = (X - mu) / sd
        scale = (mu, sd)

    Z = np.ascontiguousarray(_augment(Xs, y))
    n = Z.shape[0]
    c = float(config.c)
    qdiag = np.einsum("ij,ij->i", Z, Z)
    alpha = np.zeros(n)
    w = np.zeros(Z.shape[1])
    rng = np.random.default_rng(config.seed)

    # iterate a decade past the requested threshold so that solutions reached
    # through different visiting orders agree on decision values to ~tolerance
    target = config.tolerance / POLISH_FACTOR
    epochs = 0
    viol = float(_violations(Z, alpha, w, c).max())
    prev_obj = 0.0
    while viol > target and epochs < config.max_epochs:
        _cd_epoch(Z, alpha, w, qdiag, rng.permutation(n), c)
        epochs += 1
        if config.debug:
            obj = _dual_objective(alpha, w)
            if obj < prev_obj - 1e-12 * max(1.0, abs(prev_obj)):
                raise InvariantError(f"dual objective decreased at epoch {epochs}: {prev_obj} -> {obj}")
            prev_obj = obj
        # recompute w from alpha each epoch to stop rounding drift
        w = Z.T @ alpha
        viol = float(_violations(Z, alpha, w, c).max())

    report = SolverReport(
        epochs_run=epochs,
        final_violation=viol,
        converged=viol <= config.tolerance,
        dual_objective=_dual_objective(alpha, w),
    )
    weights, bias = w[:-1], w[-1]
    if scale is not None:
        mu, sd = scale
        weights = weights / sd
        bias = bias - float(weights @ mu)
    return LinearModel(weights, bias, duals=alpha, scale=scale), report


def primal_weights(model: LinearModel, data, y=None) -> np.ndarray:
    """``sum_i alpha_i y_i [x_i, 1]`` in the space the solver worked in."""
    if model.duals is None:
        raise DataError("model carries no dual variables")
    X, y = _as_xy(data, y)
    if model.scale is not None:
        mu, sd = model.scale
        X = (X - mu) / sd
    return _augment(X, y).T @ model.duals


def kkt_violation(model: LinearModel, data, y=None, c: float = 1.0) -> float:
    """Largest projected-gradient violation of the dual optimality conditions.

    Zero at an exact optimum. The weights are recomputed from the stored duals,
    so the value reflects the dual iterate itself.
    """
    if model.duals is None:
        raise DataError("model carries no dual variables")
    X, y = _as_xy(data, y)
    if model.scale is not None:
        mu, sd = model.scale
        X = (X - mu) / sd
    Z = _augment(X, y)
    if Z.shape[0] != model.duals.shape[0]:
        raise DataError("dual vector does not match the training set")
    return float(_violations(Z, model.duals, Z.T @ model.duals, float(c)).max())


def model_to_json(model: LinearModel, config: TrainConfig, report: SolverReport) -> str:
    obj = model.to_dict()
    obj["config"] = asdict(config)
    obj["report"] = asdict(report)
    return json.dumps(obj)


def model_from_json(text: str) -> tuple[LinearModel, TrainConfig, SolverReport]:
    obj = json.loads(text)
    return LinearModel.from_dict(obj), TrainConfig(**obj["config"]), SolverReport(**obj["report"])
