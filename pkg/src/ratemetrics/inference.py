"""Half-sample bootstrap inference for RATE estimates and TOC curves.

Each replicate re-estimates on a random subset of ``floor(n/2)`` units drawn
without replacement, re-ranking inside the subset. The spread of replicate
estimates is used directly as the standard error of the full-sample
estimate. Replicate ``b`` draws from ``numpy.random.default_rng([seed, b])``,
so results do not depend on how replicates are scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import SchemaError
from .estimator import TocCurve, _values, centered, rate_point, toc_curve, toc_from_sorted
from .model import PriorityRanking, RateEstimate
from .weights import WeightSpec, empirical_weights

__all__ = [
    "BootstrapConfig",
    "half_sample_bootstrap",
    "paired_bootstrap_difference",
    "toc_band",
    "replicate_subsets",
    "BAND_GRID",
]

BAND_GRID = np.round(np.arange(1, 21) * 0.05, 2)


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 200
    seed: int = 0
    level: float = 0.95
    threads: int = 1

    def __post_init__(self):
        if self.replicates < 2:
            raise SchemaError("bootstrap needs at least 2 replicates")
        if not 0 < self.level < 1:
            raise SchemaError("confidence level must be in (0, 1)")
        if self.threads < 1:
            raise SchemaError("threads must be >= 1")

    @property
    def z(self) -> float:
        return float(norm.ppf(1 - (1 - self.level) / 2))


def replicate_subsets(n: int, cfg: BootstrapConfig, b: int) -> np.ndarray:
    """Sorted positions (into a canonical unit order) kept by replicate ``b``."""
    rng = np.random.default_rng([cfg.seed, b])
    return np.sort(rng.choice(n, n // 2, replace=False))


def _priority_by_unit(ranking: PriorityRanking) -> np.ndarray:
    p = np.empty(ranking.n)
    p[ranking.order] = ranking.sorted_priority
    return p


class _RankedRate:
    """RATE on rank-ordered subsamples of a fixed size, reusing base weights."""

    def __init__(self, spec: WeightSpec, m: int):
        self.base = empirical_weights(spec, m).w_n

    def __call__(self, g: np.ndarray, p: np.ndarray) -> float:
        w = self.base
        tied = p[1:] == p[:-1]
        if tied.any():
            gid = np.concatenate(([0], np.cumsum(~tied)))
            w = (np.bincount(gid, weights=w) / np.bincount(gid))[gid]
        return float(np.dot(w, centered(g)) / g.shape[0])


def _run(fn, cfg: BootstrapConfig) -> np.ndarray:
    if cfg.threads == 1:
        out = [fn(b) for b in range(cfg.replicates)]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            out = list(pool.map(fn, range(cfg.replicates)))
    return np.asarray(out)


def _summarize(point: float, reps: np.ndarray, cfg: BootstrapConfig, weight: str, n: int) -> RateEstimate:
    sigma = float(np.std(reps, ddof=1))
    if sigma == 0.0 or not np.isfinite(sigma):
        return RateEstimate(weight, point, 0.0, point, point, 1.0, cfg.replicates, cfg.seed, n, True)
    half = cfg.z * sigma
    p_value = float(min(1.0, 2 * norm.cdf(-abs(point) / sigma)))
    return RateEstimate(weight, point, sigma, point - half, point + half, p_value, cfg.replicates, cfg.seed, n, False)


def _check(v: np.ndarray, ranking: PriorityRanking):
    if v.shape[0] != ranking.n:
        raise SchemaError(f"size mismatch: {v.shape[0]} scores, ranking over {ranking.n} units")
    if v.shape[0] < 4:
        raise SchemaError("half-sample bootstrap needs n >= 4")


def half_sample_bootstrap(scores, ranking: PriorityRanking, spec: WeightSpec, cfg: BootstrapConfig | None = None) -> RateEstimate:
    """RATE estimate with half-sample bootstrap SE, normal CI and two-sided p-value.

    A zero replicate spread (e.g. constant scores) is reported with
    ``degenerate=True`` and ``p_value = 1``.
    """
    cfg = cfg or BootstrapConfig()
    g = _values(scores)
    _check(g, ranking)
    n = g.shape[0]
    point = rate_point(g, ranking, spec)
    p_unit = _priority_by_unit(ranking)
    canon = np.lexsort((g, -p_unit))
    g_c, p_c = g[canon], p_unit[canon]
    rate = _RankedRate(spec, n // 2)

    def one(b):
        pos = replicate_subsets(n, cfg, b)
        return rate(g_c[pos], p_c[pos])

    return _summarize(point, _run(one, cfg), cfg, spec.id, n)


def paired_bootstrap_difference(
    scores, ranking_a: PriorityRanking, ranking_b: PriorityRanking, spec: WeightSpec, cfg: BootstrapConfig | None = None
) -> RateEstimate:
    """RATE(a) - RATE(b) with both rules evaluated on the same half-samples."""
    cfg = cfg or BootstrapConfig()
    g = _values(scores)
    _check(g, ranking_a)
    if ranking_b.n != ranking_a.n:
        raise SchemaError("ranking size mismatch between the two rules")
    n = g.shape[0]
    point = rate_point(g, ranking_a, spec) - rate_point(g, ranking_b, spec)
    pa, pb = _priority_by_unit(ranking_a), _priority_by_unit(ranking_b)
    canon_a = np.lexsort((g, -pa))
    canon_b = np.lexsort((g, -pb))
    pos_b = np.empty(n, dtype=np.int64)
    pos_b[canon_b] = np.arange(n)
    rate = _RankedRate(spec, n // 2)

    def one(b):
        units = canon_a[replicate_subsets(n, cfg, b)]
        units_b = units[np.argsort(pos_b[units], kind="stable")]
        return rate(g[units], pa[units]) - rate(g[units_b], pb[units_b])

    return _summarize(point, _run(one, cfg), cfg, f"{spec.id}:difference", n)


def _grid_index(u: np.ndarray, m: int) -> np.ndarray:
    return np.clip(np.floor(np.round(u * m, 9)).astype(np.int64), 1, m) - 1


def toc_band(scores, ranking: PriorityRanking, cfg: BootstrapConfig | None = None, band_u=BAND_GRID) -> TocCurve:
    """Full-sample TOC plus pointwise half-sample bands on ``band_u``."""
    cfg = cfg or BootstrapConfig()
    g = _values(scores)
    _check(g, ranking)
    n = g.shape[0]
    m = n // 2
    curve = toc_curve(g, ranking)
    band_u = np.asarray(band_u, dtype=float)
    at_full = curve.values[_grid_index(band_u, n)]
    p_unit = _priority_by_unit(ranking)
    canon = np.lexsort((g, -p_unit))
    g_c, p_c = g[canon], p_unit[canon]
    idx = _grid_index(band_u, m)

    def one(b):
        pos = replicate_subsets(n, cfg, b)
        return toc_from_sorted(g_c[pos], p_c[pos])[idx]

    reps = _run(one, cfg)
    sigma = reps.std(axis=0, ddof=1)
    half = cfg.z * sigma
    low, high = at_full - half, at_full + half
    last = band_u >= 1.0
    at_full = np.where(last, 0.0, at_full)
    low = np.where(last, 0.0, low)
    high = np.where(last, 0.0, high)
    return TocCurve(
        grid=curve.grid,
        values=curve.values,
        gamma_mean=curve.gamma_mean,
        band_u=band_u,
        band_values=at_full,
        ci_low=low,
        ci_high=high,
    )
