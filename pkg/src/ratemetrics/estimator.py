"""TOC curve and RATE point estimation with tie handling."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .model import PriorityRanking, ScoreVector
from .weights import WeightSpec, empirical_weights, ranked_weights, tie_average_weights

__all__ = ["TocCurve", "toc_curve", "toc_from_sorted", "rate_point", "rate_difference", "rate_from_sorted"]


@dataclass(frozen=True)
class TocCurve:
    """Estimated TOC on ``u = j/n``; optional pointwise bands on ``band_u``."""

    grid: np.ndarray
    values: np.ndarray
    gamma_mean: float
    band_u: np.ndarray | None = None
    band_values: np.ndarray | None = None
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None

    def at(self, u: float) -> float:
        """TOC estimate at ``floor(u n)/n`` (``u >= 1/n``)."""
        n = self.grid.shape[0]
        m = math.floor(round(u * n, 9))
        if m < 1:
            raise SchemaError(f"u={u} is below the first grid point 1/{n}")
        return float(self.values[min(m, n) - 1])

    def to_csv(self) -> str:
        """``u,toc`` on the full grid, or ``u,toc,ci_low,ci_high`` on the band grid."""
        buf = io.StringIO()
        if self.band_u is None:
            buf.write("u,toc\n")
            for u, v in zip(self.grid, self.values):
                buf.write(f"{float(u)!r},{float(v)!r}\n")
        else:
            buf.write("u,toc,ci_low,ci_high\n")
            for row in zip(self.band_u, self.band_values, self.ci_low, self.ci_high):
                buf.write(",".join(repr(float(x)) for x in row) + "\n")
        return buf.getvalue()


def _values(scores) -> np.ndarray:
    v = scores.values if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=float)
    if v.ndim != 1 or v.shape[0] == 0:
        raise SchemaError("scores must be a non-empty vector")
    return v


def centered(values: np.ndarray) -> np.ndarray:
    # Exact zeros for constant input so degenerate cases give exact 0 estimates.
    if np.all(values == values[0]):
        return np.zeros_like(values, dtype=float)
    return values - values.mean()


def _group_bounds(sorted_priority: np.ndarray):
    """Per rank position (0-based): number of ranks strictly above its tie group, and group end."""
    n = sorted_priority.shape[0]
    brk = np.flatnonzero(sorted_priority[1:] != sorted_priority[:-1]) + 1
    starts = np.concatenate(([0], brk))
    ends = np.concatenate((brk, [n]))
    sizes = ends - starts
    return np.repeat(starts, sizes), np.repeat(ends, sizes)


def toc_from_sorted(g: np.ndarray, sorted_priority: np.ndarray) -> np.ndarray:
    """TOC values at ``j/n`` for scores ``g`` already arranged in rank order."""
    n = g.shape[0]
    c = centered(g)
    csum = np.concatenate(([0.0], np.cumsum(c)))
    m = np.arange(1, n + 1)
    k, kp = _group_bounds(sorted_priority)
    inside = csum[k] + (m - k) / (kp - k) * (csum[kp] - csum[k])
    toc = inside / m - csum[n] / n
    toc[-1] = 0.0
    return toc


def toc_curve(scores, ranking: PriorityRanking) -> TocCurve:
    """Estimated TOC at every grid point ``j/n``, averaging over tie orders."""
    v = _values(scores)
    if v.shape[0] != ranking.n:
        raise SchemaError(f"size mismatch: {v.shape[0]} scores, ranking over {ranking.n} units")
    n = v.shape[0]
    values = toc_from_sorted(v[ranking.order], ranking.sorted_priority)
    return TocCurve(grid=np.arange(1, n + 1) / n, values=values, gamma_mean=float(v.mean()))


def rate_from_sorted(g: np.ndarray, sorted_priority: np.ndarray, spec: WeightSpec) -> float:
    """RATE for scores ``g`` in rank order with matching (descending) priorities."""
    w = ranked_weights(spec, sorted_priority)
    return float(np.dot(w, centered(g)) / g.shape[0])


def rate_point(scores, ranking: PriorityRanking, spec: WeightSpec) -> float:
    """Weighted-score RATE estimate ``(1/n) sum_j w_n(j) Gamma_{i(j)}``."""
    v = _values(scores)
    n = v.shape[0]
    if n < 2:
        raise SchemaError("RATE estimation needs n >= 2")
    ew = tie_average_weights(empirical_weights(spec, n), ranking)
    return float(np.dot(ew.w_n, centered(v[ranking.order])) / n)


def rate_difference(scores, ranking_a: PriorityRanking, ranking_b: PriorityRanking, spec: WeightSpec) -> float:
    """RATE of rule a minus RATE of rule b on the same scores."""
    if ranking_a.n != ranking_b.n:
        raise SchemaError("rankings cover different numbers of units")
    return rate_point(scores, ranking_a, spec) - rate_point(scores, ranking_b, spec)
