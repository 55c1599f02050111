"""Ridge regression for interpreting and selecting input variables."""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg

log = logging.getLogger(__name__)

DEFAULT_GRID = tuple(np.logspace(-3, 3, 13).tolist())
DEFAULT_FOLDS = 5
DEFAULT_RUNS = 10
DEFAULT_THRESHOLD = 10.0


class SingularSystemError(np.linalg.LinAlgError):
    pass


class EmptySelectionError(ValueError):
    pass


@dataclass
class Standardizer:
    """Column z-scoring fitted on source-domain training data.

    Zero-variance columns transform to all zeros.
    """

    mean: np.ndarray
    scale: np.ndarray
    label_mean: float = 0.0

    @classmethod
    def fit(cls, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        label_mean = float(np.mean(y)) if y is not None else 0.0
        return cls(mu, sd, label_mean)

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        safe = np.where(self.scale > 0, self.scale, 1.0)
        Z = (X - self.mean) / safe
        Z[:, self.scale == 0] = 0.0
        return Z

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(), "label_mean": self.label_mean}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["scale"], float), float(d["label_mean"]))


def fit_ridge(X, Y, lam):
    """Solve ``(X'X + lam*I) beta = X'Y`` by Cholesky factorisation.

    ``X`` and ``Y`` are used as given (centre/scale them beforehand). At
    ``lam == 0`` a singular Gram matrix raises ``SingularSystemError``; for
    ``lam > 0`` a failed factorisation is retried with a small diagonal
    jitter.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("X must be a non-empty 2-D array")
    if Y.shape[0] != X.shape[0]:
        raise ValueError("X and Y row counts differ")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    p = X.shape[1]
    A = X.T @ X
    A[np.diag_indices(p)] += lam
    b = X.T @ Y
    try:
        c = linalg.cho_factor(A, lower=False, check_finite=False)
        if lam == 0 and np.min(np.abs(np.diag(c[0]))) <= 1e-12 * np.sqrt(np.max(np.abs(np.diag(A))) or 1.0):
            raise linalg.LinAlgError("numerically singular")
    except linalg.LinAlgError:
        if lam == 0:
            raise SingularSystemError("X'X is singular at lambda = 0; use lambda > 0") from None
        jitter = 1e-10 * np.trace(A) / p
        A[np.diag_indices(p)] += jitter
        c = linalg.cho_factor(A, lower=False, check_finite=False)
    return linalg.cho_solve(c, b, check_finite=False)


def kfold_indices(n, folds, seed):
    """Shuffled, near-equal partition of ``range(n)`` into ``folds`` parts."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < folds:
        raise ValueError(f"cannot split {n} rows into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def cv_errors(X, Y, grid, folds=DEFAULT_FOLDS, seed=0):
    """Mean held-out MSE for each lambda in ``grid``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    parts = kfold_indices(X.shape[0], folds, seed)
    errs = np.zeros(len(grid))
    for test in parts:
        train = np.setdiff1d(np.arange(X.shape[0]), test)
        Xtr, Ytr = X[train], Y[train]
        # re-centre on the training fold so the held-out fold stays unseen
        xm, ym = Xtr.mean(axis=0), Ytr.mean()
        for j, lam in enumerate(grid):
            beta = fit_ridge(Xtr - xm, Ytr - ym, lam)
            resid = Y[test] - ym - (X[test] - xm) @ beta
            errs[j] += np.mean(resid**2)
    return errs / folds


def select_lambda(X, Y, grid=DEFAULT_GRID, folds=DEFAULT_FOLDS, seed=0):
    """Grid value with the lowest mean CV error; ties go to the larger lambda."""
    grid = list(grid)
    if not grid:
        raise ValueError("lambda grid is empty")
    if len(grid) == 1:
        return float(grid[0])
    errs = cv_errors(X, Y, grid, folds, seed)
    best = None
    for lam, err in zip(grid, errs):
        if best is None:
            best = (lam, err)
            continue
        tie = np.isclose(err, best[1], rtol=1e-12, atol=0.0)
        if (err < best[1] and not tie) or (tie and lam > best[0]):
            best = (lam, err)
    return float(best[0])


@dataclass
class RidgeModel:
    coefficients: np.ndarray
    lambdas: list
    run_coefficients: np.ndarray
    threshold: float = DEFAULT_THRESHOLD
    runs: int = DEFAULT_RUNS
    selected_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.selected_mask is None:
            self.selected_mask = np.abs(self.coefficients) > self.threshold

    @property
    def lam(self):
        """Median lambda chosen over the runs."""
        return float(np.median(self.lambdas))


def averaged_coefficients(X, Y, runs=DEFAULT_RUNS, grid=DEFAULT_GRID, folds=DEFAULT_FOLDS,
                          seed=0, threshold=DEFAULT_THRESHOLD):
    """Average ridge coefficients over ``runs`` CV reshuffles.

    Run ``r`` (1-based) shuffles its folds with seed ``seed + r``; only the
    chosen lambda can differ between runs. ``X`` must be standardised and
    ``Y`` centred.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    lambdas, coefs = [], []
    for r in range(1, runs + 1):
        lam = select_lambda(X, Y, grid, folds, seed + r)
        lambdas.append(lam)
        coefs.append(fit_ridge(X, Y, lam))
    coefs = np.vstack(coefs)
    log.debug("ridge lambdas per run: %s", lambdas)
    return RidgeModel(coefs.mean(axis=0), lambdas, coefs, threshold, runs)


def select_variables(coefficients, threshold=DEFAULT_THRESHOLD):
    """Boolean mask of coefficients whose magnitude exceeds ``threshold``."""
    mask = np.abs(np.asarray(coefficients, dtype=np.float64)) > threshold
    if not mask.any():
        raise EmptySelectionError(
            f"no coefficient exceeds |{threshold}|; lower the selection threshold"
        )
    return mask


@dataclass
class FeatureSelection:
    """Ridge coefficients and selection masks for both ramp directions."""

    names: tuple
    on: RidgeModel
    off: RidgeModel
    standardizer: Standardizer

    @property
    def on_mask(self):
        return self.on.selected_mask

    @property
    def off_mask(self):
        return self.off.selected_mask

    @property
    def union_mask(self):
        return self.on.selected_mask | self.off.selected_mask

    def to_frame(self):
        return pd.DataFrame({
            "variable": list(self.names),
            "on_ramp_coefficient": self.on.coefficients,
            "off_ramp_coefficient": self.off.coefficients,
            "selected_on": self.on_mask,
            "selected_off": self.off_mask,
        })


def select_features(table, names, threshold=DEFAULT_THRESHOLD, runs=DEFAULT_RUNS,
                    grid=DEFAULT_GRID, folds=DEFAULT_FOLDS, seed=0):
    """Fit the averaged ridge models on a labelled source feature table.

    Features are z-scored with a standardizer fitted on every source row;
    each ramp direction is regressed on the rows where its label exists.
    """
    X = table.loc[:, list(names)].to_numpy(np.float64)
    std = Standardizer.fit(X)
    Z = std.transform(X)
    models = {}
    for col in ("on_flow", "off_flow"):
        y = table[col].to_numpy(np.float64)
        ok = ~np.isnan(y)
        if ok.sum() < folds:
            raise ValueError(f"source table has too few {col} labels ({int(ok.sum())})")
        yc = y[ok] - y[ok].mean()
        models[col] = averaged_coefficients(Z[ok], yc, runs, grid, folds, seed, threshold)
        select_variables(models[col].coefficients, threshold)
    return FeatureSelection(tuple(names), models["on_flow"], models["off_flow"], std)


def read_selection_csv(path):
    """Load ``(names, on_mask, off_mask)`` from a ``select-features`` CSV."""
    df = pd.read_csv(path)

    def as_bool(s):
        return s.astype(str).str.lower().isin(["true", "1"]).to_numpy()

    return tuple(df["variable"]), as_bool(df["selected_on"]), as_bool(df["selected_off"])
