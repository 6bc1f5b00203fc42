"""Small built-in nuisance learners: ridge regression, k-nearest neighbours, oracles.

These are deliberately minimal; anything fancier (forests, survival models)
should be fit elsewhere and imported as precomputed nuisance columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SchemaError

__all__ = ["LearnerSpec", "RidgeModel", "KnnModel", "fit", "predict", "oracle_nuisances"]

TARGETS = ("m0", "m1", "e", "censoring")

# Propensity predictions are kept strictly inside (0, 1); the score builders
# apply their own, wider clipping on top of this.
_E_EPS = 1e-6


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    lam: float = 1.0
    k_neighbors: int = 10
    scenario: object = None
    target: str = "m0"

    def __post_init__(self):
        if self.kind not in ("ridge", "knn", "oracle"):
            raise SchemaError(f"unknown learner {self.kind!r}")
        if self.target not in TARGETS:
            raise SchemaError(f"unknown learner target {self.target!r}")
        if self.kind == "ridge" and not self.lam > 0:
            raise SchemaError("ridge penalty must be > 0")
        if self.kind == "knn" and self.k_neighbors < 1:
            raise SchemaError("knn needs k_neighbors >= 1")
        if self.kind == "oracle" and self.scenario is None:
            raise SchemaError("oracle learner needs a scenario")

    def for_target(self, target: str) -> "LearnerSpec":
        return LearnerSpec(self.kind, self.lam, self.k_neighbors, self.scenario, target)


@dataclass(frozen=True)
class RidgeModel:
    x_mean: np.ndarray
    x_scale: np.ndarray
    coef: np.ndarray
    intercept: float
    clip: bool = False

    @property
    def dim(self) -> int:
        return self.x_mean.shape[0]


@dataclass(frozen=True)
class KnnModel:
    X: np.ndarray
    y: np.ndarray
    k: int
    clip: bool = False

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise SchemaError("features must be a 2-d matrix")
    return X


def fit(spec: LearnerSpec, X, targets, subset=None):
    """Fit a learner on rows ``subset`` (all rows when ``None``)."""
    if spec.kind == "oracle":
        raise SchemaError("oracle learners are not fit; use oracle_nuisances")
    X = _as_matrix(X)
    y = np.asarray(targets, dtype=float)
    if subset is not None:
        subset = np.sort(np.asarray(subset, dtype=np.int64))
        X, y = X[subset], y[subset]
    if y.shape[0] == 0:
        raise SchemaError("cannot fit a learner on an empty subset")
    if not np.all(np.isfinite(y)):
        raise SchemaError("learner targets must be finite")
    clip = spec.target == "e"
    if spec.kind == "ridge":
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        Z = (X - mu) / sd
        y_mean = y.mean()
        gram = Z.T @ Z + spec.lam * np.eye(Z.shape[1])
        coef = np.linalg.solve(gram, Z.T @ (y - y_mean))
        return RidgeModel(mu, sd, coef, float(y_mean), clip)
    return KnnModel(X.copy(), y.copy(), min(spec.k_neighbors, y.shape[0]), clip)


def _knn_predict(model: KnnModel, X_new: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty(X_new.shape[0])
    k = model.k
    for start in range(0, X_new.shape[0], chunk):
        block = X_new[start:start + chunk]
        d2 = ((block[:, None, :] - model.X[None, :, :]) ** 2).sum(axis=2)
        # stable sort: equal distances resolve to the lowest training index
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
        out[start:start + chunk] = model.y[nearest].mean(axis=1)
    return out


def predict(model, X_new) -> np.ndarray:
    X_new = _as_matrix(X_new)
    if X_new.shape[1] != model.dim:
        raise SchemaError(f"feature dimension mismatch: model has {model.dim}, got {X_new.shape[1]}")
    if isinstance(model, RidgeModel):
        pred = ((X_new - model.x_mean) / model.x_scale) @ model.coef + model.intercept
    else:
        pred = _knn_predict(model, X_new)
    if model.clip:
        pred = np.clip(pred, _E_EPS, 1 - _E_EPS)
    return pred


def oracle_nuisances(scenario, d, **kwargs):
    """Exact nuisance evaluations from a simulation scenario's data-generating process."""
    if not hasattr(scenario, "oracle_nuisances"):
        raise SchemaError(f"scenario {scenario!r} has no closed-form nuisances")
    return scenario.oracle_nuisances(d, **kwargs)
