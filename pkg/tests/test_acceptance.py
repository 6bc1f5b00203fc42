"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run just this file with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in the terminal summary. ``python tests/test_acceptance.py`` runs the
same checks without pytest.
"""

import itertools
import math
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from oracles import toc_untied  # noqa: E402
from ratemetrics.estimator import rate_point, toc_curve  # noqa: E402
from ratemetrics.inference import BootstrapConfig, half_sample_bootstrap  # noqa: E402
from ratemetrics.model import ranking_from_values, validate_dataset  # noqa: E402
from ratemetrics.nuisance import LearnerSpec  # noqa: E402
from ratemetrics.scores import (  # noqa: E402
    Endpoint,
    NuisanceEvaluations,
    aipw_obs_scores,
    aipw_survival_scores,
    ipw_scores,
    transform_survival_outcome,
)
from ratemetrics.simulate import Kink, PowerCell, SetupA, SurvivalSecond, power_study, true_rate  # noqa: E402
from ratemetrics.weights import WeightSpec, empirical_weights  # noqa: E402

RESULTS = []


def report(num, name, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed <= budget
    line = f"{'PASS' if ok else 'FAIL'} [{num:2d}] {name}: {detail} ({elapsed:.1f}s / {budget:.0f}s)"
    RESULTS.append(line)
    print(line)
    return ok


# 1 -------------------------------------------------------------------------


def test_estimator_form_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240101)
    worst = 0.0
    for k in range(100):
        n = (10, 100, 1000)[k % 3]
        g = rng.normal(size=n) * rng.uniform(0.5, 5)
        # inject ties by drawing priorities from a small pool for part of the units
        p = rng.normal(size=n)
        tied = rng.uniform(size=n) < rng.uniform(0.1, 0.9)
        p[tied] = rng.integers(0, max(2, n // 10), tied.sum())
        r = ranking_from_values(p)
        toc = toc_curve(g, r).values
        grid = np.arange(1, n + 1) / n
        alphas = [(WeightSpec.autoc(), np.ones(n)), (WeightSpec.qini(), grid)]
        for _ in range(5):
            a = rng.normal(size=n) * rng.uniform(0.1, 3) + rng.uniform(-1, 1)
            alphas.append((WeightSpec.custom(a), a))
        for spec, alpha in alphas:
            lhs = rate_point(g, r, spec)
            rhs = math.fsum(alpha * toc) / n
            worst = max(worst, abs(lhs - rhs))
    elapsed = time.perf_counter() - t0
    ok = report(1, "estimator-form equivalence", worst <= 1e-12, f"max |diff| = {worst:.2e} (tol 1e-12)", elapsed, 10)
    assert ok


# 2 -------------------------------------------------------------------------


def compositions(n):
    for cuts in itertools.product([0, 1], repeat=n - 1):
        sizes, run = [], 1
        for c in cuts:
            if c:
                sizes.append(run)
                run = 1
            else:
                run += 1
        sizes.append(run)
        yield sizes


def brute_force(g_ranked, sizes, alpha_rows):
    """Average TOC and RATE over every within-group ordering (vectorized enumeration)."""
    starts = np.cumsum([0] + sizes[:-1])
    blocks = [list(itertools.permutations(range(s0, s0 + s))) for s0, s in zip(starts, sizes)]
    idx = np.array([sum(choice, ()) for choice in itertools.product(*blocks)])
    G = g_ranked[idx]
    n = G.shape[1]
    toc = np.cumsum(G, axis=1) / np.arange(1, n + 1) - G.mean(axis=1, keepdims=True)
    toc[:, -1] = 0.0
    mean_toc = toc.mean(axis=0)
    rates = [float((toc @ a).mean() / n) for a in alpha_rows]
    return mean_toc, rates


def test_tie_permutation_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst, patterns = 0.0, 0
    for n in range(2, 9):
        grid = np.arange(1, n + 1) / n
        for sizes in compositions(n):
            if sum(s > 1 for s in sizes) > 4:
                continue
            patterns += 1
            g_ranked = rng.normal(size=n) * 3
            p_sorted = np.repeat(np.arange(len(sizes), 0, -1, dtype=float), sizes)
            mean_toc, (r_autoc, r_qini) = brute_force(g_ranked, sizes, [np.ones(n), grid])
            # present units to the package in shuffled row order
            perm = rng.permutation(n)
            r = ranking_from_values(p_sorted[perm])
            g = g_ranked[perm]
            worst = max(
                worst,
                np.abs(toc_curve(g, r).values - mean_toc).max(),
                abs(rate_point(g, r, WeightSpec.autoc()) - r_autoc),
                abs(rate_point(g, r, WeightSpec.qini()) - r_qini),
            )
    elapsed = time.perf_counter() - t0
    ok = report(
        2, "tie-permutation oracle", worst <= 1e-12,
        f"{patterns} tie patterns, n<=8, max |diff| = {worst:.2e} (tol 1e-12)", elapsed, 60,
    )
    assert ok


# 3 -------------------------------------------------------------------------


def test_population_consistency():
    t0 = time.perf_counter()
    scen = Kink(p=1.0)
    sim = scen.generate(10**5, 3)
    r = ranking_from_values(sim.dataset.priority("rule"))
    parts, ok = [], True
    for spec, analytic in ((WeightSpec.autoc(), 0.5), (WeightSpec.qini(), 1 / 6)):
        est = half_sample_bootstrap(sim.tau, r, spec, BootstrapConfig(replicates=200, seed=3))
        truth, truth_se = true_rate(scen, spec, draws=10**6, seed=4)
        se = math.hypot(est.std_error, truth_se)
        z = abs(est.point - truth) / se
        ok &= z <= 3
        parts.append(f"{spec.id}: est {est.point:.5f} vs oracle {truth:.5f} (analytic {analytic:.5f}), {z:.2f} SE")
    elapsed = time.perf_counter() - t0
    ok = report(3, "population consistency", ok, "; ".join(parts), elapsed, 120)
    assert ok


# 4 -------------------------------------------------------------------------


def test_autoc_weight_bound():
    t0 = time.perf_counter()
    bound = math.pi**2 / 24
    worst, worst_n, shifted = 0.0, None, 0.0
    for n in range(2, 10**4 + 1):
        w_n = empirical_weights(WeightSpec.autoc(), n).w_n
        j = np.arange(1, n + 1)
        w = -np.log(j / n) - 1
        s = float(np.sum((w_n - w) ** 2))
        if s > worst:
            worst, worst_n = s, n
        # same comparison for H_n - H_k - 1, the sequence the bound's proof uses
        shifted = max(shifted, float(np.sum((w_n - 1 / j - w) ** 2)))
    elapsed = time.perf_counter() - t0
    ok = report(
        4, "AUTOC weight bound", worst <= bound,
        f"max sum of squares {worst:.4f} at n={worst_n} vs bound {bound:.4f} "
        f"(H_n - H_k - 1 sequence: {shifted:.4f})", elapsed, 10,
    )
    assert ok


# 5 -------------------------------------------------------------------------


def test_type_one_error():
    t0 = time.perf_counter()
    rep = power_study(
        [PowerCell(Kink(p=1.0), 400, "random")], [WeightSpec.autoc(), WeightSpec.qini(rescale=True)],
        reps=1000, B=200, seed=5,
    )
    a, q = rep.power("autoc"), rep.power("qini-rescaled")
    elapsed = time.perf_counter() - t0
    ok = report(
        5, "type I error", 0.03 <= a <= 0.07 and 0.03 <= q <= 0.07,
        f"rejection rate autoc {a:.3f}, qini {q:.3f} (target [0.03, 0.07])", elapsed, 900,
    )
    assert ok


# 6 -------------------------------------------------------------------------


def test_power_ordering():
    t0 = time.perf_counter()
    rep = power_study(
        [PowerCell(Kink(p=0.1), 400, "rule"), PowerCell(Kink(p=1.0), 400, "rule")],
        [WeightSpec.autoc(), WeightSpec.qini(rescale=True)],
        reps=1000, B=200, seed=6,
    )
    a01, q01 = rep.power("autoc", param="p=0.1"), rep.power("qini-rescaled", param="p=0.1")
    a10, q10 = rep.power("autoc", param="p=1.0"), rep.power("qini-rescaled", param="p=1.0")
    elapsed = time.perf_counter() - t0
    ok = report(
        6, "power ordering", (a01 - q01 > 0.05) and (q10 >= a10 - 0.02),
        f"p=0.1: autoc {a01:.3f} vs qini {q01:.3f} (need gap > 0.05); "
        f"p=1.0: autoc {a10:.3f} vs qini {q10:.3f} (need qini >= autoc - 0.02)",
        elapsed, 1800,
    )
    assert ok


# 7 -------------------------------------------------------------------------


def test_bootstrap_coverage():
    t0 = time.perf_counter()
    scen = Kink(p=1.0)
    truth, _ = true_rate(scen, WeightSpec.autoc(), draws=10**6, seed=7)
    covered = 0
    trials = 500
    for k in range(trials):
        d = scen.generate(2000, [7, k]).dataset
        est = half_sample_bootstrap(
            ipw_scores(d, 0.5), ranking_from_values(d.priority("rule")), WeightSpec.autoc(),
            BootstrapConfig(replicates=200, seed=k),
        )
        covered += est.ci_low <= truth <= est.ci_high
    rate = covered / trials
    elapsed = time.perf_counter() - t0
    ok = report(7, "bootstrap coverage", rate >= 0.92, f"{rate:.3f} of {trials} CIs cover {truth:.4f}", elapsed, 1200)
    assert ok


# 8 -------------------------------------------------------------------------


def test_score_degenerations():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    n = 1000
    d = validate_dataset({"w": rng.integers(0, 2, n), "y": rng.normal(size=n) * 2})
    pi = 0.37
    obs = aipw_obs_scores(d, NuisanceEvaluations(m0=np.zeros(n), m1=np.zeros(n), e=np.full(n, pi))).values
    gap_ipw = float(np.abs(obs - ipw_scores(d, pi).values).max())

    t = rng.weibull(1.5, size=n) * 2
    ds = validate_dataset({"w": rng.integers(0, 2, n), "y": t, "event_time": t, "event_observed": np.ones(n, dtype=int)})
    m0, m1, e = rng.normal(size=n), rng.normal(size=n), rng.uniform(0.1, 0.9, n)
    gap_surv = 0.0
    for kind in ("rmst", "absolute_risk"):
        endpoint = Endpoint(kind, 1.5)
        u_t, _, y = transform_survival_outcome(ds, endpoint)
        grid = np.unique(u_t)
        nuis = NuisanceEvaluations(
            m0=m0, m1=m1, e=e, grid=grid,
            q=rng.normal(size=(n, grid.size)), sc=np.ones((n, grid.size)), dlambda=np.zeros((n, grid.size)),
        )
        surv = aipw_survival_scores(ds, endpoint, nuis).values
        ref = aipw_obs_scores(validate_dataset({"w": ds.treatment, "y": y}), NuisanceEvaluations(m0=m0, m1=m1, e=e)).values
        gap_surv = max(gap_surv, float(np.abs(surv - ref).max()))
    elapsed = time.perf_counter() - t0
    ok = report(
        8, "score degenerations", gap_ipw <= 1e-12 and gap_surv <= 1e-12,
        f"AIPW-obs vs IPW {gap_ipw:.1e}, survival vs AIPW-obs {gap_surv:.1e} (tol 1e-12)", elapsed, 5,
    )
    assert ok


# 9 -------------------------------------------------------------------------


def test_monotone_rule_toc():
    t0 = time.perf_counter()
    sim = Kink(p=0.5).generate(10**4, 9)
    toc = toc_curve(sim.tau, ranking_from_values(sim.dataset.priority("rule"))).values
    rise = float(np.diff(toc).max())
    low = float(toc[:-1].min())
    # cross-check against the naive prefix-mean oracle
    order = np.argsort(-sim.dataset.priority("rule"), kind="stable")
    gap = float(np.abs(toc - toc_untied(sim.tau[order])).max())
    elapsed = time.perf_counter() - t0
    ok = report(
        9, "monotone-rule TOC shape", rise <= 1e-10 and low >= 0 and toc[-1] == 0.0 and gap <= 1e-12,
        f"max increment {rise:.2e}, min before end {low:.2e}, TOC(1) = {float(toc[-1])!r}", elapsed, 5,
    )
    assert ok


# 10 ------------------------------------------------------------------------


def non_decreasing(powers, tol=0.02):
    drops = [a - b for a, b in zip(powers, powers[1:]) if b < a]
    return len(drops) <= 1 and all(d <= tol for d in drops)


def test_appendix_monotonicity():
    t0 = time.perf_counter()
    specs = [WeightSpec.autoc()]
    sigmas = (0.0, 0.2, 0.4)
    learner = LearnerSpec("knn", k_neighbors=30)
    rep_a = power_study(
        [PowerCell(SetupA(sigma_tau=s), 1000, "plugin", learner) for s in sigmas], specs, reps=300, B=200, seed=10
    )
    pa = [r.power for r in rep_a.rows]
    ns = (500, 1000, 2000)
    rep_s = power_study([PowerCell(SurvivalSecond(), n, "oracle") for n in ns], specs, reps=300, B=200, seed=11)
    ps = [r.power for r in rep_s.rows]
    elapsed = time.perf_counter() - t0
    ok = report(
        10, "appendix monotonicity", non_decreasing(pa) and non_decreasing(ps),
        "setup_a power by sigma_tau " + ", ".join(f"{s}: {p:.3f}" for s, p in zip(sigmas, pa))
        + "; survival power by n " + ", ".join(f"{n}: {p:.3f}" for n, p in zip(ns, ps)),
        elapsed, 2700,
    )
    assert ok


if __name__ == "__main__":
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
