"""Doubly robust score construction and cross-fitting.

Every builder returns a :class:`~ratemetrics.model.ScoreVector` whose values
have conditional mean (approximately) equal to the CATE.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import PositivityError, SchemaError
from .model import EvalDataset, ScoreVector

__all__ = [
    "Endpoint",
    "NuisanceEvaluations",
    "FoldAssignment",
    "ipw_scores",
    "aipw_rct_scores",
    "aipw_obs_scores",
    "transform_survival_outcome",
    "aipw_survival_scores",
    "make_folds",
    "cross_fit",
    "clip_propensity",
    "survival_tables_from_long",
]

log = logging.getLogger(__name__)

E_MIN = 0.01
S_MIN = 0.05
DEFAULT_FOLDS = 5


@dataclass(frozen=True)
class Endpoint:
    """Survival endpoint: ``absolute_risk`` (1{T <= t0}) or ``rmst`` (min(T, t0))."""

    kind: str
    t0: float

    def __post_init__(self):
        if self.kind not in ("absolute_risk", "rmst"):
            raise SchemaError(f"unknown endpoint {self.kind!r}")
        if not self.t0 > 0:
            raise SchemaError("endpoint horizon t0 must be > 0")


@dataclass(frozen=True)
class NuisanceEvaluations:
    """Nuisance values per unit.

    Survival tables are ``n x G`` arrays on the increasing time ``grid``:
    ``q[i, g]`` estimates E[Y | T >= s_g, X_i, W_i], ``sc[i, g]`` estimates
    P(C >= s_g | X_i, W_i), and ``dlambda[i, g]`` is the censoring cumulative
    hazard mass attributed to ``s_g``.
    """

    m0: np.ndarray | None = None
    m1: np.ndarray | None = None
    e: np.ndarray | None = None
    grid: np.ndarray | None = None
    q: np.ndarray | None = None
    sc: np.ndarray | None = None
    dlambda: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.m0 is None) != (self.m1 is None):
            raise SchemaError("m0 and m1 must be supplied together")
        if self.grid is not None:
            grid = np.asarray(self.grid, dtype=float)
            if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
                raise SchemaError("survival grid times must be strictly increasing")
            for name in ("q", "sc", "dlambda"):
                tab = getattr(self, name)
                if tab is None or np.shape(tab)[-1] != grid.shape[0]:
                    raise SchemaError(f"survival table {name!r} missing or not aligned with the grid")
            sc = np.asarray(self.sc)
            if np.any(sc <= 0) or np.any(sc > 1):
                raise SchemaError("censoring survival values must lie in (0, 1]")
            if np.any(np.diff(sc, axis=1) > 1e-12):
                raise SchemaError("censoring survival must be non-increasing in time")

    @property
    def has_outcome_model(self) -> bool:
        return self.m0 is not None

    def m_of(self, w: np.ndarray) -> np.ndarray:
        return np.where(w == 1, self.m1, self.m0)


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: np.ndarray
    seed: int


def _check_pi(pi: float) -> float:
    if not 0 < pi < 1:
        raise SchemaError(f"randomization probability must be in (0,1), got {pi}")
    return float(pi)


def ipw_scores(d: EvalDataset, pi: float) -> ScoreVector:
    pi = _check_pi(pi)
    w, y = d.treatment, d.outcome
    gamma = w * y / pi - (1 - w) * y / (1 - pi)
    return ScoreVector(gamma, family="ipw", meta={"pi": pi})


def _aipw(w, y, m0, m1, e) -> np.ndarray:
    m_w = np.where(w == 1, m1, m0)
    return m1 - m0 + (w - e) / (e * (1 - e)) * (y - m_w)


def _require_m(nuis: NuisanceEvaluations, n: int):
    if nuis is None or not nuis.has_outcome_model:
        raise SchemaError("outcome model evaluations m0/m1 are required")
    if len(nuis.m0) != n:
        raise SchemaError(f"nuisance evaluations cover {len(nuis.m0)} units, dataset has {n}")


def aipw_rct_scores(d: EvalDataset, pi: float, m: NuisanceEvaluations) -> ScoreVector:
    pi = _check_pi(pi)
    _require_m(m, d.n)
    gamma = _aipw(d.treatment, d.outcome, np.asarray(m.m0), np.asarray(m.m1), pi)
    return ScoreVector(gamma, family="aipw_rct", meta={"pi": pi, **m.meta})


def clip_propensity(e, e_min: float = E_MIN) -> tuple[np.ndarray, int]:
    """Clip estimated propensities to ``[e_min, 1 - e_min]``.

    Values at or beyond 0 or 1 mean deterministic assignment and are refused.
    Returns the clipped vector and the number of clipped units.
    """
    e = np.asarray(e, dtype=float)
    if not 0 < e_min < 0.5:
        raise SchemaError("e_min must lie in (0, 0.5)")
    bad = np.flatnonzero(~np.isfinite(e) | (e <= 0) | (e >= 1))
    if bad.size:
        raise PositivityError(f"degenerate overlap: propensity {e[bad[0]]!r} at row {bad[0] + 1}")
    clipped = np.clip(e, e_min, 1 - e_min)
    events = int(np.count_nonzero(clipped != e))
    if events:
        log.info("clipped %d propensities to [%g, %g]", events, e_min, 1 - e_min)
    return clipped, events


def aipw_obs_scores(d: EvalDataset, nuis: NuisanceEvaluations, e_min: float = E_MIN) -> ScoreVector:
    _require_m(nuis, d.n)
    if nuis.e is None:
        raise SchemaError("propensity evaluations e_hat are required")
    e, events = clip_propensity(nuis.e, e_min)
    gamma = _aipw(d.treatment, d.outcome, np.asarray(nuis.m0), np.asarray(nuis.m1), e)
    return ScoreVector(gamma, family="aipw_obs", meta={"clipped": events, "e_min": e_min, **nuis.meta})


def transform_survival_outcome(d: EvalDataset, endpoint: Endpoint):
    """Truncate at the horizon: returns ``(U_tilde, Delta_tilde, Y)`` per unit.

    A unit still under observation past ``t0`` counts as fully observed.
    ``Y`` is computed from the truncated data and only meaningful where
    ``Delta_tilde == 1``.
    """
    if not d.has_survival:
        raise SchemaError("survival columns event_time/event_observed are required")
    t0 = endpoint.t0
    u, delta = d.event_time, d.event_observed
    u_t = np.minimum(u, t0)
    d_t = ((delta == 1) | (u > t0)).astype(np.int64)
    if endpoint.kind == "rmst":
        y = u_t.copy()
    else:
        y = ((delta == 1) & (u <= t0)).astype(float)
    return u_t, d_t, y


def aipw_survival_scores(
    d: EvalDataset,
    endpoint: Endpoint,
    nuis: NuisanceEvaluations,
    e_min: float = E_MIN,
    s_min: float = S_MIN,
) -> ScoreVector:
    """AIPW score with inverse-probability-of-censoring augmentation.

    The censoring martingale integral is a sum over grid points ``s <= U_tilde``
    of ``q/S_C * dLambda_C`` using the supplied tables.
    """
    _require_m(nuis, d.n)
    if nuis.e is None or nuis.grid is None:
        raise SchemaError("survival scores need e_hat and censoring tables q/sc/dlambda")
    u_t, d_t, y = transform_survival_outcome(d, endpoint)
    grid = np.asarray(nuis.grid, dtype=float)
    q, sc, dl = (np.asarray(a, dtype=float) for a in (nuis.q, nuis.sc, nuis.dlambda))
    if q.shape[0] != d.n:
        raise SchemaError(f"survival tables cover {q.shape[0]} units, dataset has {d.n}")
    pos = np.searchsorted(grid, u_t, side="right") - 1
    if np.any(pos < 0):
        i = int(np.flatnonzero(pos < 0)[0])
        raise SchemaError(f"time grid does not cover U_tilde={u_t[i]!r} at row {i + 1}")
    rows = np.arange(d.n)
    sc_u = sc[rows, pos]
    low = np.flatnonzero(sc_u < s_min)
    if low.size:
        i = int(low[0])
        raise PositivityError(
            f"censoring positivity violated: S_C={sc_u[i]:.4g} < {s_min} at row {i + 1}"
        )
    e, events = clip_propensity(nuis.e, e_min)
    q_u = q[rows, pos]
    mask = grid[None, :] <= u_t[:, None]
    correction = np.sum(np.where(mask, q / sc * dl, 0.0), axis=1)
    w = d.treatment
    m0, m1 = np.asarray(nuis.m0), np.asarray(nuis.m1)
    m_w = np.where(w == 1, m1, m0)
    ipcw = (d_t * y + (1 - d_t) * q_u) / sc_u - correction
    gamma = m1 - m0 + (w - e) / (e * (1 - e)) * (ipcw - m_w)
    return ScoreVector(
        gamma,
        family="aipw_survival",
        endpoint=(endpoint.kind, endpoint.t0),
        meta={"clipped": events, "e_min": e_min, "s_min": s_min, **nuis.meta},
    )


def make_folds(n: int, k: int, seed: int) -> FoldAssignment:
    """Random fold ids 1..k with sizes differing by at most one."""
    if k < 2:
        raise SchemaError("cross-fitting needs k >= 2 folds")
    if k > n / 2:
        raise SchemaError(f"k={k} folds is too many for n={n} (need k <= n/2)")
    perm = np.random.default_rng([seed, 0xF01D]).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % k + 1
    return FoldAssignment(k=k, fold_of=fold_of, seed=seed)


def cross_fit(d: EvalDataset, k: int, learner, seed: int, fit_propensity: bool = True):
    """Out-of-fold nuisance evaluations.

    Unit ``i`` is evaluated by models trained on every fold except its own:
    ``m0`` on control units, ``m1`` on treated units, ``e`` on all units.
    Returns ``(NuisanceEvaluations, FoldAssignment)``.
    """
    from . import nuisance

    if d.features is None:
        raise SchemaError("cross-fitting needs feature columns x1..xd")
    folds = make_folds(d.n, k, seed)
    X, w, y = d.features, d.treatment, d.outcome
    m0 = np.empty(d.n)
    m1 = np.empty(d.n)
    e = np.empty(d.n) if fit_propensity else None
    for f in range(1, k + 1):
        held = folds.fold_of == f
        train = ~held
        for arm, out in ((0, m0), (1, m1)):
            idx = np.flatnonzero(train & (w == arm))
            if idx.size == 0:
                raise SchemaError(f"fold {f}: no training units with w={arm}")
            model = nuisance.fit(learner.for_target(f"m{arm}"), X, y, idx)
            out[held] = nuisance.predict(model, X[held])
        if fit_propensity:
            model = nuisance.fit(learner.for_target("e"), X, w, np.flatnonzero(train))
            e[held] = nuisance.predict(model, X[held])
    meta = {"folds": k, "seed": seed, "learner": learner.kind}
    return NuisanceEvaluations(m0=m0, m1=m1, e=e, meta=meta), folds


def survival_tables_from_long(n: int, unit, s, q, sc, dlambda) -> NuisanceEvaluations:
    """Assemble survival tables from long-format columns ``unit,s,q,sc,dlambda``.

    ``unit`` is a 1-based row index; every unit must appear at every grid time.
    """
    unit = np.asarray(unit).astype(np.int64)
    s = np.asarray(s, dtype=float)
    grid = np.unique(s)
    if unit.min() < 1 or unit.max() > n:
        raise SchemaError("survival table unit ids must be 1..n")
    if unit.shape[0] != n * grid.shape[0]:
        raise SchemaError("survival tables must list every unit at every grid time")
    g = np.searchsorted(grid, s)
    tabs = []
    for col in (q, sc, dlambda):
        tab = np.full((n, grid.shape[0]), np.nan)
        tab[unit - 1, g] = np.asarray(col, dtype=float)
        if np.isnan(tab).any():
            raise SchemaError("survival tables have missing (unit, time) cells")
        tabs.append(tab)
    return NuisanceEvaluations(grid=grid, q=tabs[0], sc=tabs[1], dlambda=tabs[2])
