import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ratemetrics.errors import SchemaError
from ratemetrics.nuisance import LearnerSpec, fit, oracle_nuisances, predict
from ratemetrics.scores import ipw_scores
from ratemetrics.simulate import Kink, SetupA, SurvivalSecond


def data(n=60, d=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = X @ np.arange(1.0, d + 1) + rng.normal(size=n)
    return X, y


def test_ridge_constant_target():
    X, _ = data()
    model = fit(LearnerSpec("ridge", lam=0.5), X, np.full(len(X), 4.2))
    np.testing.assert_allclose(predict(model, X[:5] * 3), 4.2, rtol=0, atol=1e-12)


def test_ridge_heavy_shrinkage_to_mean():
    X, y = data()
    model = fit(LearnerSpec("ridge", lam=1e12), X, y)
    np.testing.assert_allclose(predict(model, X), y.mean(), atol=1e-8)


def test_ridge_matches_normal_equations():
    X, y = data()
    lam = 2.0
    mu, sd = X.mean(axis=0), X.std(axis=0)
    Z = (X - mu) / sd
    coef = np.linalg.solve(Z.T @ Z + lam * np.eye(3), Z.T @ (y - y.mean()))
    model = fit(LearnerSpec("ridge", lam=lam), X, y)
    Xn = np.random.default_rng(1).normal(size=(7, 3))
    np.testing.assert_allclose(predict(model, Xn), ((Xn - mu) / sd) @ coef + y.mean(), atol=1e-12)


def test_ridge_uses_subset_statistics():
    X, y = data()
    sub = np.arange(30)
    a = predict(fit(LearnerSpec("ridge"), X, y, sub), X)
    b = predict(fit(LearnerSpec("ridge"), X[sub], y[sub]), X)
    np.testing.assert_array_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50).filter(lambda a: abs(a) > 1e-3), st.floats(-100, 100), st.integers(0, 1000))
def test_ridge_affine_equivariance(a, b, seed):
    X, y = data(seed=seed)
    spec = LearnerSpec("ridge", lam=0.7)
    Xn = X[:10] + 0.5
    base = predict(fit(spec, X, y), Xn)
    shifted = predict(fit(spec, X, a * y + b), Xn)
    np.testing.assert_allclose(shifted, a * base + b, rtol=0, atol=1e-10 * (1 + abs(a) + abs(b)) * (1 + np.abs(base).max()))


def test_knn_k1_reproduces_training_targets():
    X, y = data()
    model = fit(LearnerSpec("knn", k_neighbors=1), X, y)
    np.testing.assert_array_equal(predict(model, X), y)


def test_knn_ties_break_by_lowest_index():
    X = np.array([[0.0], [2.0], [-2.0]])
    y = np.array([0.0, 10.0, 20.0])
    model = fit(LearnerSpec("knn", k_neighbors=2), X, y)
    # query at 1.0 is equidistant from rows 0 and 1
    assert predict(model, np.array([[1.0]]))[0] == 5.0
    # query at 0.0: row 0 nearest, then rows 1 and 2 tie; row 1 wins
    assert predict(model, np.array([[0.0]]))[0] == 5.0


def test_knn_brute_force():
    X, y = data(n=80)
    Xn = np.random.default_rng(4).normal(size=(300, 3))
    model = fit(LearnerSpec("knn", k_neighbors=7), X, y)
    expected = [y[np.argsort(((X - x) ** 2).sum(axis=1), kind="stable")[:7]].mean() for x in Xn]
    np.testing.assert_allclose(predict(model, Xn), expected, atol=1e-12)


def test_propensity_targets_clipped():
    X = np.zeros((10, 1))
    model = fit(LearnerSpec("knn", k_neighbors=3, target="e"), X, np.ones(10))
    p = predict(model, X)
    assert np.all((p > 0) & (p < 1))


def test_learner_validation():
    with pytest.raises(SchemaError):
        LearnerSpec("ridge", lam=0.0)
    with pytest.raises(SchemaError):
        LearnerSpec("knn", k_neighbors=0)
    with pytest.raises(SchemaError):
        LearnerSpec("forest")
    with pytest.raises(SchemaError):
        LearnerSpec("oracle")
    with pytest.raises(SchemaError):
        fit(LearnerSpec("ridge"), np.zeros((3, 1)), [1.0, np.nan, 2.0])
    with pytest.raises(SchemaError):
        fit(LearnerSpec("ridge"), np.zeros((3, 1)), [1.0, 2.0, 3.0], subset=[])


def test_dimension_mismatch():
    X, y = data()
    for kind in ("ridge", "knn"):
        with pytest.raises(SchemaError):
            predict(fit(LearnerSpec(kind), X, y), np.zeros((2, 4)))


def test_oracle_examples():
    s = SurvivalSecond()
    X = np.array([[0.1, 0.0, 0.3, 0, 0], [0.1, 1.0, 0.3, 0, 0]])
    np.testing.assert_allclose(s.propensity(X), 0.25)

    a = SetupA()
    x = np.sqrt(np.arcsin(0.05) / np.pi)
    assert a.propensity(np.array([[x, x, 0, 0, 0, 0]]))[0] == pytest.approx(0.1)
    assert a.baseline(np.array([[0.5, 1.0, 0.5, 0.0, 0.0, 0.0]]))[0] == pytest.approx(1.0)


def test_oracle_scenario_mismatch():
    d = Kink().generate(20, 0).dataset
    with pytest.raises(SchemaError):
        oracle_nuisances(SetupA(), d)
    with pytest.raises(SchemaError):
        oracle_nuisances(object(), d)


def _unbiased(resid, s):
    assert stats.ttest_1samp(resid, 0.0).pvalue > 0.01
    assert stats.linregress(s, resid).pvalue > 0.01


def test_oracle_scores_unbiased_kink():
    sim = Kink().generate(10**5, 11)
    g = ipw_scores(sim.dataset, 0.5).values
    _unbiased(g - sim.tau, sim.dataset.priority("rule"))


def test_oracle_scores_unbiased_setup_a():
    from ratemetrics.scores import aipw_obs_scores

    scen = SetupA(sigma_tau=0.4)
    sim = scen.generate(10**5, 12)
    g = aipw_obs_scores(sim.dataset, scen.oracle_nuisances(sim.dataset)).values
    _unbiased(g - sim.tau, sim.tau)


def test_oracle_scores_unbiased_survival():
    scen = SurvivalSecond()
    resid, s = [], []
    for seed in range(50):
        sim = scen.generate(2000, 100 + seed)
        resid.append(scen.scores(sim.dataset).values - sim.tau)
        s.append(sim.tau)
    _unbiased(np.concatenate(resid), np.concatenate(s))
