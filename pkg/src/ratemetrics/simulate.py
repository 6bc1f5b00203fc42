"""Simulation scenarios, true-RATE oracles and Monte Carlo power studies.

Scenarios
---------
``Kink(p)``
    X ~ U(0,1), W ~ Bernoulli(1/2), mu0 = 0, mu1(x) = max(2/p - 2x/p^2, 0),
    Y = mu_W(X) + eps. The bundled rule is ``S(x) = 1 - x``.
``SetupA(sigma_tau)``
    Trimmed-sine propensity, Friedman-style baseline b(X), effect
    (X1 + X2)/2 rescaled to sample SD ``sigma_tau``.
``SurvivalSecond()``
    Proportional-hazards event times, log-normal (AFT) censoring and a
    Beta(2, 4)-density propensity; the endpoint is RMST or absolute risk at
    ``t0``.

Every generated dataset carries ``priority.random`` (independent uniform) and
``priority.oracle`` (the true CATE); ``Kink`` also carries ``priority.rule``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import SchemaError
from .inference import BootstrapConfig, half_sample_bootstrap
from .model import EvalDataset, ranking_from_values, validate_dataset
from .nuisance import LearnerSpec, fit, predict
from .scores import (
    Endpoint,
    NuisanceEvaluations,
    aipw_obs_scores,
    aipw_survival_scores,
    cross_fit,
    ipw_scores,
    transform_survival_outcome,
)
from .weights import WeightSpec, population_weight

__all__ = [
    "Kink",
    "SetupA",
    "SurvivalSecond",
    "Simulated",
    "generate",
    "true_rate",
    "PowerCell",
    "PowerRow",
    "PowerReport",
    "power_study",
    "scenario_from_name",
]


@dataclass(frozen=True)
class Simulated:
    """A generated dataset plus the hidden truth used by oracles."""

    dataset: EvalDataset
    tau: np.ndarray
    scenario: object


def _features(n, d, rng):
    return rng.uniform(size=(n, d))


def _columns(X, w, y, priorities, extra=None):
    cols = {"w": w, "y": y}
    if extra:
        cols.update(extra)
    for k in range(X.shape[1]):
        cols[f"x{k + 1}"] = X[:, k]
    for name, v in priorities.items():
        cols[f"priority.{name}"] = v
    return cols


@dataclass(frozen=True)
class Kink:
    """Piecewise-linear CATE concentrated on the lowest ``p`` fraction of X.

    ``noise`` is 0.2 read as a variance by default; pass
    ``noise_is_variance=False`` to read it as a standard deviation.
    """

    p: float = 1.0
    noise: float = 0.2
    noise_is_variance: bool = True
    pi: float = 0.5
    name: str = "kink"

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise SchemaError("kink p must be in (0, 1]")

    @property
    def param(self) -> str:
        return f"p={self.p!r}"

    @property
    def noise_sd(self) -> float:
        return math.sqrt(self.noise) if self.noise_is_variance else self.noise

    def tau(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, 0]
        return np.maximum(-2.0 / self.p**2 * x + 2.0 / self.p, 0.0)

    def rule(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return 1.0 - (x[:, 0] if x.ndim == 2 else x)

    def generate(self, n: int, seed) -> Simulated:
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=n)
        w = (rng.uniform(size=n) < self.pi).astype(np.int64)
        eps = rng.normal(0.0, self.noise_sd, size=n)
        tau = self.tau(x)
        y = w * tau + eps
        random_rule = rng.uniform(size=n)
        cols = _columns(x[:, None], w, y, {"rule": self.rule(x), "random": random_rule, "oracle": tau})
        return Simulated(validate_dataset(cols), tau, self)

    def population(self, draws: int, rng):
        """Draws for the true-RATE oracle: features, CATE and exact upper quantile per rule."""
        x = rng.uniform(size=draws)
        # S = 1 - X is uniform, so 1 - F_S(S(X)) = X exactly
        return {"tau": self.tau(x), "t": {"rule": x, "random": rng.uniform(size=draws)}, "S": {"oracle": self.tau(x)}}

    def oracle_nuisances(self, d: EvalDataset) -> NuisanceEvaluations:
        if d.features is None or d.features.shape[1] != 1:
            raise SchemaError("dataset was not generated by the kink scenario (needs exactly x1)")
        tau = self.tau(d.features[:, 0])
        return NuisanceEvaluations(
            m0=np.zeros(d.n), m1=tau, e=np.full(d.n, self.pi), meta={"nuisance": "oracle:kink"}
        )

    def scores(self, d: EvalDataset, **_):
        return ipw_scores(d, self.pi)


def _trim(x, eta):
    return np.maximum(eta, np.minimum(x, 1 - eta))


@dataclass(frozen=True)
class SetupA:
    """Observational design with confounded treatment and tunable effect strength."""

    sigma_tau: float = 0.0
    sigma_eps: float = 1.0
    d: int = 6
    trim: float = 0.1
    name: str = "setup_a"

    def __post_init__(self):
        if self.d < 5:
            raise SchemaError("setup_a needs d >= 5")
        if self.sigma_tau < 0 or not self.sigma_eps > 0:
            raise SchemaError("setup_a needs sigma_tau >= 0 and sigma_eps > 0")

    @property
    def param(self) -> str:
        return f"sigma_tau={self.sigma_tau!r}"

    def propensity(self, X) -> np.ndarray:
        return _trim(np.sin(np.pi * X[:, 0] * X[:, 1]), self.trim)

    def baseline(self, X) -> np.ndarray:
        return np.sin(np.pi * X[:, 0] * X[:, 1]) + 2 * (X[:, 2] - 0.5) ** 2 + X[:, 3] + 0.5 * X[:, 4]

    def raw_tau(self, X) -> np.ndarray:
        return (X[:, 0] + X[:, 1]) / 2

    def tau(self, X) -> np.ndarray:
        """Effect rescaled so its sample SD (over the rows of ``X``) is ``sigma_tau``."""
        t = self.raw_tau(X)
        if self.sigma_tau == 0 or t.shape[0] < 2:
            return np.zeros(t.shape[0])
        return t / t.std(ddof=1) * self.sigma_tau

    def generate(self, n: int, seed) -> Simulated:
        rng = np.random.default_rng(seed)
        X = _features(n, self.d, rng)
        e = self.propensity(X)
        w = (rng.uniform(size=n) < e).astype(np.int64)
        tau = self.tau(X)
        y = self.baseline(X) + (w - e) * tau + self.sigma_eps * rng.normal(size=n)
        cols = _columns(X, w, y, {"random": rng.uniform(size=n), "oracle": tau})
        return Simulated(validate_dataset(cols), tau, self)

    def population(self, draws: int, rng):
        X = _features(draws, self.d, rng)
        tau = self.tau(X)
        return {"tau": tau, "t": {"random": rng.uniform(size=draws)}, "S": {"oracle": tau}}

    def oracle_nuisances(self, d: EvalDataset) -> NuisanceEvaluations:
        if d.features is None or d.features.shape[1] != self.d:
            raise SchemaError(f"dataset was not generated by setup_a (needs x1..x{self.d})")
        X = d.features
        e = self.propensity(X)
        b = self.baseline(X)
        tau = self.tau(X)
        return NuisanceEvaluations(m0=b - e * tau, m1=b + (1 - e) * tau, e=e, meta={"nuisance": "oracle:setup_a"})

    def scores(self, d: EvalDataset, learner: LearnerSpec | None = None, folds: int = 5, seed=0):
        learner = learner or LearnerSpec("knn", k_neighbors=30)
        nuis, _ = cross_fit(d, folds, learner, seed)
        return aipw_obs_scores(d, nuis)


def _weib_int(lam, a, b):
    """Integral of exp(-lam sqrt(v)) dv over [a, b]."""

    def G(r):
        return 2 * np.exp(-lam * r) * (r / lam + 1 / lam**2)

    return G(np.sqrt(a)) - G(np.sqrt(b))


@dataclass(frozen=True)
class SurvivalSecond:
    """Right-censored survival design with known hazards and censoring law."""

    t0: float = 1.0
    endpoint: str = "rmst"
    d: int = 5
    name: str = "survival_second"

    def __post_init__(self):
        Endpoint(self.endpoint, self.t0)

    @property
    def param(self) -> str:
        return f"t0={self.t0!r}"

    @property
    def end(self) -> Endpoint:
        return Endpoint(self.endpoint, self.t0)

    def propensity(self, X) -> np.ndarray:
        return (1 + stats.beta.pdf(X[:, 1], 2, 4)) / 4

    def hazard_scale(self, X, w) -> np.ndarray:
        return np.exp(X[:, 0] + (-0.4 + X[:, 1]) * w)

    def _m(self, X, w) -> np.ndarray:
        lam = self.hazard_scale(X, w)
        if self.endpoint == "rmst":
            return _weib_int(lam, 0.0, self.t0)
        return 1 - np.exp(-lam * math.sqrt(self.t0))

    def tau(self, X) -> np.ndarray:
        return self._m(X, 1) - self._m(X, 0)

    def generate(self, n: int, seed) -> Simulated:
        rng = np.random.default_rng(seed)
        X = _features(n, self.d, rng)
        e = self.propensity(X)
        w = (rng.uniform(size=n) < e).astype(np.int64)
        u = rng.uniform(size=n)
        z = rng.normal(size=n)
        T = (-np.log(u) / self.hazard_scale(X, w)) ** 2
        C = np.exp(X[:, 0] - X[:, 2] * w + z)
        U = np.minimum(T, C)
        delta = (T <= C).astype(np.int64)
        tau = self.tau(X)
        cols = _columns(
            X, w, U, {"random": rng.uniform(size=n), "oracle": tau}, extra={"event_time": U, "event_observed": delta}
        )
        return Simulated(validate_dataset(cols), tau, self)

    def population(self, draws: int, rng):
        X = _features(draws, self.d, rng)
        tau = self.tau(X)
        return {"tau": tau, "t": {"random": rng.uniform(size=draws)}, "S": {"oracle": tau}}

    def censoring_survival(self, X, w, s) -> np.ndarray:
        """P(C >= s | X, W) for log C ~ N(X1 - X3 W, 1); ``s`` broadcasts over columns."""
        mu = (X[:, 0] - X[:, 2] * w)[:, None]
        with np.errstate(divide="ignore"):
            z = np.log(np.asarray(s, dtype=float))[None, :] - mu
        return stats.norm.sf(z)

    def oracle_nuisances(self, d: EvalDataset, grid=None) -> NuisanceEvaluations:
        """Exact nuisances; survival tables on ``grid`` (default: distinct truncated times)."""
        if d.features is None or d.features.shape[1] != self.d or not d.has_survival:
            raise SchemaError("dataset was not generated by survival_second")
        X, w = d.features, d.treatment
        u_t, _, _ = transform_survival_outcome(d, self.end)
        grid = np.unique(u_t) if grid is None else np.asarray(grid, dtype=float)
        lam = self.hazard_scale(X, w)[:, None]
        s = grid[None, :]
        sT = np.exp(-lam * np.sqrt(s))
        if self.endpoint == "rmst":
            q = s + _weib_int(lam, s, self.t0) / sT
        else:
            q = 1 - np.exp(-lam * math.sqrt(self.t0)) / sT
        sc = self.censoring_survival(X, w, grid)
        cum = -np.log(sc)
        dlambda = np.diff(np.concatenate([np.zeros((d.n, 1)), cum], axis=1), axis=1)
        return NuisanceEvaluations(
            m0=self._m(X, 0),
            m1=self._m(X, 1),
            e=self.propensity(X),
            grid=grid,
            q=q,
            sc=sc,
            dlambda=dlambda,
            meta={"nuisance": "oracle:survival_second"},
        )

    def scores(self, d: EvalDataset, **_):
        return aipw_survival_scores(d, self.end, self.oracle_nuisances(d))


def scenario_from_name(name: str, **params):
    table = {"kink": Kink, "setup_a": SetupA, "survival_second": SurvivalSecond}
    try:
        cls = table[name]
    except KeyError:
        raise SchemaError(f"unknown scenario {name!r}") from None
    return cls(**{k: v for k, v in params.items() if v is not None})


def generate(scenario, n: int, seed) -> Simulated:
    """Generate ``n`` units; bitwise reproducible from ``(scenario, n, seed)``."""
    if n < 2:
        raise SchemaError("simulation needs n >= 2")
    return scenario.generate(n, seed)


def true_rate(scenario, spec: WeightSpec, rule: str = "rule", draws: int = 10**6, seed=0) -> tuple[float, float]:
    """Monte Carlo value of E[w(1 - F_S(S(X))) tau(X)] and its standard error.

    Exact upper quantiles are used where the rule's distribution is known;
    otherwise mid-ranks among the draws stand in for ``1 - F_S``.
    """
    rng = np.random.default_rng(seed)
    pop = scenario.population(draws, rng)
    tau = pop["tau"]
    if rule in pop["t"]:
        t = pop["t"][rule]
    elif rule in pop.get("S", {}):
        s = pop["S"][rule]
        t = (stats.rankdata(-s, method="average") - 0.5) / draws
    else:
        raise SchemaError(f"scenario {scenario.name} has no population rule {rule!r}")
    t = np.clip(t, 0.5 / draws, 1 - 0.5 / draws)
    contrib = population_weight(spec, t) * tau
    return float(contrib.mean()), float(contrib.std(ddof=1) / math.sqrt(draws))


@dataclass(frozen=True)
class PowerCell:
    """One power-study cell: a scenario, a sample size and a prioritization rule.

    ``rule`` is a priority column of the generated data (``rule``, ``oracle``,
    ``random``) or, for ``setup_a``, ``plugin`` / ``risk``: knn T-learner
    CATE and baseline-risk predictions fit on an independent training draw.
    """

    scenario: object
    n: int
    rule: str = "rule"
    learner: LearnerSpec = field(default_factory=lambda: LearnerSpec("knn", k_neighbors=30))


@dataclass(frozen=True)
class PowerRow:
    scenario: str
    param: str
    weight: str
    reps: int
    power: float
    mean_estimate: float
    mean_se: float
    n: int
    rule: str


@dataclass(frozen=True)
class PowerReport:
    rows: tuple[PowerRow, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["scenario", "param", "weight", "reps", "power", "mean_estimate", "mean_se"])
        for r in self.rows:
            param = f"{r.param};n={r.n};rule={r.rule}"
            writer.writerow([r.scenario, param, r.weight, r.reps, repr(r.power), repr(r.mean_estimate), repr(r.mean_se)])
        return buf.getvalue()

    def power(self, weight: str, **match) -> float:
        for r in self.rows:
            if r.weight == weight and all(getattr(r, k) == v for k, v in match.items()):
                return r.power
        raise KeyError((weight, match))


def _plugin_priorities(cell: PowerCell, train: EvalDataset, test: EvalDataset) -> dict[str, np.ndarray]:
    X, w, y = train.features, train.treatment, train.outcome
    spec = cell.learner
    m0 = fit(spec.for_target("m0"), X, y, np.flatnonzero(w == 0))
    m1 = fit(spec.for_target("m1"), X, y, np.flatnonzero(w == 1))
    base = predict(m0, test.features)
    return {"plugin": predict(m1, test.features) - base, "risk": base}


def _one_rep(cell: PowerCell, specs, B: int, seed: int, cell_idx: int, rep: int):
    ss = np.random.SeedSequence([seed, cell_idx, rep])
    data_seed, train_seed, boot_seed, fold_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    sim = generate(cell.scenario, cell.n, data_seed)
    d = sim.dataset
    if cell.rule in d.priorities:
        priority = d.priority(cell.rule)
    elif cell.rule in ("plugin", "risk") and isinstance(cell.scenario, SetupA):
        train = generate(cell.scenario, cell.n, train_seed).dataset
        priority = _plugin_priorities(cell, train, d)[cell.rule]
    else:
        raise SchemaError(f"rule {cell.rule!r} is not available for {cell.scenario.name}")
    if isinstance(cell.scenario, SetupA):
        scores = cell.scenario.scores(d, learner=cell.learner, seed=fold_seed)
    else:
        scores = cell.scenario.scores(d)
    ranking = ranking_from_values(priority)
    cfg = BootstrapConfig(replicates=B, seed=boot_seed)
    return [half_sample_bootstrap(scores, ranking, spec, cfg) for spec in specs]


def power_study(
    cells, specs, reps: int = 1000, B: int = 200, seed: int = 0, alpha: float = 0.05, progress=None, threads: int = 1
) -> PowerReport:
    """Rejection rates of the two-sided RATE test, per cell and weighting.

    Replicate ``r`` of cell ``c`` draws all its randomness from
    ``SeedSequence([seed, c, r])``; every weighting in a replicate sees the
    same data and the same bootstrap subsets. Results are reduced in
    replicate order, so ``threads`` does not change the report.
    """
    if reps < 1:
        raise SchemaError("power study needs reps >= 1")
    if threads < 1:
        raise SchemaError("threads must be >= 1")
    rows = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    for c, cell in enumerate(cells):

        def one(r, c=c, cell=cell):
            out = _one_rep(cell, specs, B, seed, c, r)
            if progress is not None:
                progress(c, r)
            return out

        results = list(pool.map(one, range(reps))) if pool else [one(r) for r in range(reps)]
        for k, spec in enumerate(specs):
            ests = [res[k] for res in results]
            rows.append(
                PowerRow(
                    scenario=cell.scenario.name,
                    param=cell.scenario.param,
                    weight=spec.id,
                    reps=reps,
                    power=float(np.mean([e.p_value < alpha for e in ests])),
                    mean_estimate=float(np.mean([e.point for e in ests])),
                    mean_se=float(np.mean([e.std_error for e in ests])),
                    n=cell.n,
                    rule=cell.rule,
                )
            )
    if pool:
        pool.shutdown()
    return PowerReport(tuple(rows))
