"""RATE weight functions.

A RATE is specified by a weight function ``alpha(u)`` on the TOC curve. The
same metric can be written as a weighted average of treatment effects with
population weights ``w(t) = int_t^1 alpha(u)/u du - int_0^1 alpha(u) du``
evaluated at ``t = 1 - F_S(S(X))``, and estimated with empirical weights
``w_n(k) = sum_{j>=k} alpha(j/n)/j - mean_j alpha(j/n)`` applied to the
score at rank ``k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import SchemaError
from .model import PriorityRanking

__all__ = [
    "WeightSpec",
    "EmpiricalWeights",
    "population_weight",
    "empirical_weights",
    "tie_average_weights",
    "ranked_weights",
    "alpha_grid",
    "read_alpha_grid",
]

KINDS = ("autoc", "qini", "high_vs_others", "custom")


@dataclass(frozen=True, eq=False)
class WeightSpec:
    """A RATE weighting.

    ``alpha`` is only used for ``kind == "custom"``: either a tabulated grid
    (values at ``u = j/n`` for the evaluation ``n``) or a callable on (0, 1].
    """

    kind: str
    u: float | None = None
    alpha: np.ndarray | Callable[[np.ndarray], np.ndarray] | None = None
    rescale_to_unit_variance: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown weight kind {self.kind!r}")
        if self.kind == "high_vs_others":
            if self.u is None or not (0 < self.u <= 1):
                raise SchemaError("high_vs_others requires 0 < u <= 1")
        if self.kind == "custom":
            if self.alpha is None:
                raise SchemaError("custom weights require an alpha grid or function")
            if not callable(self.alpha):
                grid = np.array(self.alpha, dtype=float)
                if grid.ndim != 1 or grid.size == 0 or not np.all(np.isfinite(grid)):
                    raise SchemaError("custom alpha grid must be a non-empty finite vector")
                grid.setflags(write=False)
                object.__setattr__(self, "alpha", grid)

    @classmethod
    def autoc(cls, rescale: bool = False) -> "WeightSpec":
        return cls("autoc", rescale_to_unit_variance=rescale)

    @classmethod
    def qini(cls, rescale: bool = False) -> "WeightSpec":
        return cls("qini", rescale_to_unit_variance=rescale)

    @classmethod
    def high_vs_others(cls, u: float) -> "WeightSpec":
        return cls("high_vs_others", u=float(u))

    @classmethod
    def custom(cls, alpha, rescale: bool = False) -> "WeightSpec":
        return cls("custom", alpha=alpha, rescale_to_unit_variance=rescale)

    @property
    def id(self) -> str:
        if self.kind == "high_vs_others":
            return f"toc({self.u!r})"
        suffix = "-rescaled" if self.rescale_to_unit_variance else ""
        return self.kind + suffix

    def __repr__(self) -> str:
        return f"WeightSpec({self.id})"


@dataclass(frozen=True)
class EmpiricalWeights:
    n: int
    w_n: np.ndarray


def _top_count(u: float, n: int) -> int:
    """``ceil(u n)`` robust to representation error in ``u``."""
    return max(1, min(n, math.ceil(round(u * n, 9))))


def alpha_grid(spec: WeightSpec, n: int) -> np.ndarray:
    """``alpha(j/n)`` for ``j = 1..n`` (AUTOC, Qini and custom weightings).

    A tabulated custom grid of length ``N`` is read as a step function,
    constant on each ``((i-1)/N, i/N]``, so it can be evaluated at any
    ``n <= N`` (half-samples); ``u = j/n`` takes grid point ``ceil(j N/n)``,
    which is exact when ``n`` divides ``N``. Larger ``n`` is refused.
    """
    u = np.arange(1, n + 1) / n
    if spec.kind == "autoc":
        return np.ones(n)
    if spec.kind == "qini":
        return u
    if spec.kind == "custom":
        if callable(spec.alpha):
            out = np.asarray(spec.alpha(u), dtype=float)
            if out.shape != (n,) or not np.all(np.isfinite(out)):
                raise SchemaError("custom alpha function must return finite values on j/n")
            return out
        grid = spec.alpha
        if grid.shape[0] == n:
            return np.array(grid)
        big = grid.shape[0]
        if n > big:
            raise SchemaError(f"custom alpha grid has {big} values; cannot evaluate at u = j/{n}")
        j = np.arange(1, n + 1)
        return np.array(grid[(j * big + n - 1) // n - 1])
    raise SchemaError(f"{spec.kind} has no alpha grid (point-mass weighting)")


def _rev_cumsum(a: np.ndarray) -> np.ndarray:
    return np.cumsum(a[::-1])[::-1]


def empirical_weights(spec: WeightSpec, n: int) -> EmpiricalWeights:
    """Empirical weights ``w_n(k)``, ``k = 1..n``, in decreasing-priority rank order."""
    if n < 2:
        raise SchemaError("empirical weights need n >= 2")
    k = np.arange(1, n + 1)
    if spec.kind == "autoc":
        # H_n - H_{k-1} - 1
        w = _rev_cumsum(1.0 / k) - 1.0
    elif spec.kind == "qini":
        w = (n - k + 1) / n - (n + 1) / (2 * n)
    elif spec.kind == "high_vs_others":
        m = _top_count(spec.u, n)
        w = np.where(k <= m, n / m, 0.0) - 1.0
    else:
        a = alpha_grid(spec, n)
        w = _rev_cumsum(a / k) - a.mean()
    if spec.rescale_to_unit_variance:
        sd = w.std()
        if sd > 0:
            w = w / sd
    return EmpiricalWeights(n=n, w_n=w)


def tie_average_weights(ew: EmpiricalWeights, ranking: PriorityRanking) -> EmpiricalWeights:
    """Replace weights inside each tie group by the group mean."""
    if ew.n != ranking.n:
        raise SchemaError(f"size mismatch: weights for n={ew.n}, ranking has n={ranking.n}")
    if not ranking.tie_groups:
        return ew
    return EmpiricalWeights(n=ew.n, w_n=_group_mean(ew.w_n, ranking.group_ids))


def _group_mean(w: np.ndarray, gid: np.ndarray) -> np.ndarray:
    sums = np.bincount(gid, weights=w)
    counts = np.bincount(gid)
    return (sums / counts)[gid]


def ranked_weights(spec: WeightSpec, sorted_priority: np.ndarray) -> np.ndarray:
    """Tie-averaged empirical weights for a priority vector already sorted descending."""
    n = sorted_priority.shape[0]
    w = empirical_weights(spec, n).w_n
    p = sorted_priority
    if n > 1 and np.any(p[1:] == p[:-1]):
        gid = np.concatenate(([0], np.cumsum(p[1:] != p[:-1])))
        w = _group_mean(w, gid)
    return w


def _population_sd(spec: WeightSpec) -> float:
    if spec.kind == "autoc":
        return 1.0
    if spec.kind == "qini":
        return math.sqrt(1.0 / 12.0)
    if spec.kind == "high_vs_others":
        return math.sqrt(1.0 / spec.u - 1.0)
    second, _ = integrate.quad(lambda t: population_weight(WeightSpec.custom(spec.alpha), t) ** 2, 0, 1, limit=200)
    return math.sqrt(second)


def population_weight(spec: WeightSpec, t) -> np.ndarray | float:
    """Population weight ``w(t)`` applied to a unit at upper quantile ``t = 1 - F_S(S(X))``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any((t_arr <= 0) | (t_arr >= 1)):
        raise SchemaError("population weight is defined for 0 < t < 1")
    if spec.kind == "autoc":
        w = -np.log(t_arr) - 1.0
    elif spec.kind == "qini":
        w = 0.5 - t_arr
    elif spec.kind == "high_vs_others":
        w = np.where(t_arr <= spec.u, 1.0 / spec.u, 0.0) - 1.0
    else:
        if not callable(spec.alpha):
            raise SchemaError("population weight needs a custom alpha function, not a tabulated grid")
        f = lambda u: float(spec.alpha(np.array([u]))[0])  # noqa: E731
        total, _ = integrate.quad(f, 0, 1, limit=200)
        w = np.vectorize(lambda s: integrate.quad(lambda u: f(u) / u, s, 1, limit=200)[0] - total)(t_arr)
    if spec.rescale_to_unit_variance:
        sd = _population_sd(spec)
        if sd > 0:
            w = w / sd
    return float(w) if np.ndim(w) == 0 else w


def read_alpha_grid(path) -> np.ndarray:
    """Single-column CSV of alpha values at ``u = j/n`` (optional non-numeric header)."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            cell = line.strip().split(",")[0].strip()
            if not cell:
                continue
            try:
                values.append(float(cell))
            except ValueError:
                if lineno == 1:
                    continue
                raise SchemaError(f"non-numeric alpha value {cell!r} at line {lineno}") from None
    grid = np.array(values)
    if grid.size == 0 or not np.all(np.isfinite(grid)):
        raise SchemaError("alpha grid must be a non-empty finite column")
    return grid
