import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import lstsq_normal
from rampflow import ridge
from rampflow.stats import FEATURE_NAMES


def test_identity_design():
    beta = ridge.fit_ridge(np.eye(2), np.array([2.0, 4.0]), 1.0)
    np.testing.assert_allclose(beta, [1.0, 2.0], atol=1e-14)


def test_scalar_closed_form():
    X, Y = np.array([[1.0], [-1.0]]), np.array([1.0, -1.0])
    assert ridge.fit_ridge(X, Y, 0.0)[0] == pytest.approx(1.0, abs=1e-14)
    assert ridge.fit_ridge(X, Y, 2.0)[0] == pytest.approx(0.5, abs=1e-14)


def test_singular_at_zero_lambda():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.raises(ridge.SingularSystemError, match="lambda > 0"):
        ridge.fit_ridge(X, np.arange(3.0), 0.0)
    assert np.all(np.isfinite(ridge.fit_ridge(X, np.arange(3.0), 0.1)))


def test_input_validation():
    with pytest.raises(ValueError):
        ridge.fit_ridge(np.ones((3, 2)), np.ones(4), 1.0)
    with pytest.raises(ValueError):
        ridge.fit_ridge(np.ones((3, 2)), np.ones(3), -1.0)


@given(st.integers(0, 10_000))
def test_normal_equations_and_oracle(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, 12))
    n = int(rng.integers(p + 2, 60))
    X = rng.normal(size=(n, p))
    Y = X @ rng.normal(size=p) + rng.normal(size=n)
    lam = float(rng.choice([0.0, 0.01, 1.0, 100.0]))
    beta = ridge.fit_ridge(X, Y, lam)
    resid = (X.T @ X + lam * np.eye(p)) @ beta - X.T @ Y
    assert np.linalg.norm(resid) <= 1e-8 * (1 + np.linalg.norm(X.T @ Y))
    if lam == 0.0:
        np.testing.assert_allclose(beta, lstsq_normal(X.tolist(), Y.tolist()), rtol=1e-8, atol=1e-8)


def test_shrinkage_monotone(rng):
    X = rng.normal(size=(80, 10))
    Y = X @ rng.normal(size=10) + rng.normal(size=80)
    norms = [np.linalg.norm(ridge.fit_ridge(X, Y, lam)) for lam in ridge.DEFAULT_GRID]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_default_grid():
    assert len(ridge.DEFAULT_GRID) == 13
    assert ridge.DEFAULT_GRID[0] == pytest.approx(1e-3) and ridge.DEFAULT_GRID[-1] == pytest.approx(1e3)
    assert ridge.DEFAULT_GRID[6] == pytest.approx(1.0)


# -- folds and lambda choice ------------------------------------------------------

def test_kfold_partition():
    parts = ridge.kfold_indices(23, 5, seed=4)
    joined = np.sort(np.concatenate(parts))
    np.testing.assert_array_equal(joined, np.arange(23))
    assert sorted(len(p) for p in parts) == [4, 4, 5, 5, 5]
    same = ridge.kfold_indices(23, 5, seed=4)
    assert all(np.array_equal(a, b) for a, b in zip(parts, same))
    with pytest.raises(ValueError):
        ridge.kfold_indices(3, 5, seed=0)


def test_noiseless_prefers_small_lambda(rng):
    X = rng.normal(size=(60, 4))
    Y = X @ np.array([3.0, -2.0, 1.0, 0.5])
    assert ridge.select_lambda(X, Y, grid=[0.001, 1000.0], seed=1) == 0.001


def test_pure_noise_prefers_large_lambda():
    picks = []
    for s in range(20):
        rng = np.random.default_rng(100 + s)
        X = rng.normal(size=(40, 8))
        Y = rng.normal(size=40)
        picks.append(ridge.select_lambda(X, Y - Y.mean(), grid=[0.001, 1000.0], seed=s))
    assert np.median(picks) == 1000.0


def test_single_point_grid():
    assert ridge.select_lambda(np.ones((10, 1)), np.ones(10), grid=[10.0]) == 10.0


def test_constant_target_ties_go_to_larger_lambda(rng):
    X = rng.normal(size=(30, 3))
    assert ridge.select_lambda(X, np.zeros(30), grid=[0.1, 1.0, 10.0]) == 10.0


# -- averaging and selection ---------------------------------------------------------

def test_single_run_equals_single_fit(rng):
    X = rng.normal(size=(50, 5))
    Y = X @ rng.normal(size=5) + rng.normal(size=50)
    model = ridge.averaged_coefficients(X, Y, runs=1, seed=3)
    lam = ridge.select_lambda(X, Y, seed=4)
    np.testing.assert_array_equal(model.coefficients, ridge.fit_ridge(X, Y, lam))


def test_average_is_mean_of_stored_runs(rng):
    X = rng.normal(size=(60, 6))
    Y = X @ rng.normal(size=6) + 3 * rng.normal(size=60)
    model = ridge.averaged_coefficients(X, Y, runs=10, seed=0)
    assert model.run_coefficients.shape == (10, 6)
    np.testing.assert_allclose(model.coefficients, model.run_coefficients.mean(axis=0), rtol=0, atol=1e-12)
    for lam, beta in zip(model.lambdas, model.run_coefficients):
        np.testing.assert_array_equal(beta, ridge.fit_ridge(X, Y, lam))


def test_identical_runs_average_exactly(rng):
    X = rng.normal(size=(40, 3))
    Y = X @ np.array([1.0, 2.0, 3.0])
    model = ridge.averaged_coefficients(X, Y, runs=5, grid=[0.5])
    np.testing.assert_allclose(model.coefficients, ridge.fit_ridge(X, Y, 0.5), rtol=0, atol=1e-12)


def test_select_variables_threshold():
    coefs = np.array([-68.94, -1.20, 10.0, 10.01])
    np.testing.assert_array_equal(ridge.select_variables(coefs, 10), [True, False, False, True])
    with pytest.raises(ridge.EmptySelectionError, match="lower"):
        ridge.select_variables(np.zeros(4))


def test_standardizer_round_trip_and_constant_column(rng):
    X = np.column_stack([rng.normal(5, 2, 100), np.full(100, 3.0)])
    std = ridge.Standardizer.fit(X)
    Z = std.transform(X)
    np.testing.assert_allclose(Z[:, 0].mean(), 0, atol=1e-12)
    np.testing.assert_allclose(Z[:, 0].std(), 1, atol=1e-12)
    assert np.all(Z[:, 1] == 0)
    back = ridge.Standardizer.from_dict(std.to_dict())
    np.testing.assert_array_equal(back.transform(X), Z)


def test_select_features_recovers_driving_variables(rng):
    n = 400
    names = list(FEATURE_NAMES)
    X = rng.normal(size=(n, len(names)))
    on = 200 + 80 * X[:, 0] - 50 * X[:, 16] + rng.normal(size=n)
    off = 150 + 60 * X[:, 15] + rng.normal(size=n)
    table = pd.DataFrame(X, columns=names)
    table["on_flow"], table["off_flow"] = on, off
    sel = ridge.select_features(table, names, seed=2)
    assert set(np.flatnonzero(sel.on_mask)) == {0, 16}
    assert set(np.flatnonzero(sel.off_mask)) == {15}
    frame = sel.to_frame()
    assert list(frame.columns) == ["variable", "on_ramp_coefficient", "off_ramp_coefficient",
                                   "selected_on", "selected_off"]
    assert frame.on_ramp_coefficient[0] == pytest.approx(80, rel=0.05)
