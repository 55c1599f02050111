"""AdaBoost.R2 and Two-stage TrAdaBoost.R2 regression.

The two-stage algorithm trains on ``D = D_S + D'_S`` (``n`` source rows,
then ``m`` target-substitute rows). At step ``t`` (1-based) the target block
holds ``m/(n+m) + (t-1)/(S-1) * (1 - m/(n+m))`` of the weight mass, so the
schedule runs from the uniform start to 1 at the last step. Each step scores
an AdaBoost.R2 ensemble (source weights frozen) by cross-validation over the
substitute rows; the step with the lowest error is refit on all of ``D``.
"""
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from rampflow._seeding import sub_seed
from rampflow.ridge import kfold_indices
from rampflow.tree import RegressionTree, fit_tree

log = logging.getLogger(__name__)

LOSSES = ("linear", "square", "exponential")
PERFECT_FIT = 1e-12
BETA_FLOOR = 1e-12
MASS_TOL = 1e-12


class UnlearnableError(ValueError):
    """First boosting stage already has average loss >= 0.5."""


class InfeasibleScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class BoostConfig:
    n_estimators: int = 200
    learning_rate: float = 0.1
    max_depth: int = 20
    loss: str = "linear"
    steps: int = 10
    folds: int = 5
    seed: int = 0
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def adjusted_errors(y, y_hat, loss="linear"):
    """Per-row losses in [0, 1], scaled by the largest absolute residual."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError("y and y_hat differ in shape")
    r = np.abs(y - y_hat)
    D = r.max() if r.size else 0.0
    if D == 0:
        return np.zeros_like(r)
    e = r / D
    if loss == "linear":
        return e
    if loss == "square":
        return e * e
    if loss == "exponential":
        return 1.0 - np.exp(-e)
    raise ValueError(f"unknown loss {loss!r}")


def weighted_median(predictions, weights):
    """Weighted median down the stage axis.

    ``predictions`` has shape (stages, rows). For each row the stage
    predictions are sorted and the first one whose cumulative weight reaches
    half the total is returned.
    """
    P = np.asarray(predictions, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    squeeze = P.ndim == 1
    if squeeze:
        P = P[:, None]
    order = np.argsort(P, axis=0, kind="stable")
    cdf = np.cumsum(w[order], axis=0)
    reached = cdf >= 0.5 * cdf[-1]
    pick = order[reached.argmax(axis=0), np.arange(P.shape[1])]
    out = P[pick, np.arange(P.shape[1])]
    return out[0] if squeeze else out


@dataclass
class AdaBoostR2Model:
    trees: list
    stage_weights: np.ndarray
    stage_errors: np.ndarray

    @property
    def n_stages(self):
        return len(self.trees)

    def stage_predictions(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        return np.vstack([t.predict(X) for t in self.trees])

    def predict(self, X):
        return weighted_median(self.stage_predictions(X), self.stage_weights)

    def to_dict(self):
        return {
            "stages": [
                {"weight": float(w), "error": float(e), "tree": t.to_dict()}
                for t, w, e in zip(self.trees, self.stage_weights, self.stage_errors)
            ]
        }

    @classmethod
    def from_dict(cls, d):
        st = d["stages"]
        return cls(
            [RegressionTree.from_dict(s["tree"]) for s in st],
            np.array([s["weight"] for s in st], dtype=np.float64),
            np.array([s["error"] for s in st], dtype=np.float64),
        )


def fit_adaboost_r2(X, y, init_weights=None, config=BoostConfig(), frozen_mask=None, backend=None):
    """Drucker's AdaBoost.R2 with direct weighted tree fitting.

    Rows in ``frozen_mask`` keep their weights through the multiplicative
    update; all rows are renormalised together afterwards. Boosting stops
    early when a stage reaches average loss >= 0.5 (that stage is dropped)
    or fits the data perfectly (that stage is kept).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    w = np.full(n, 1.0 / n) if init_weights is None else np.array(init_weights, dtype=np.float64)
    total = w.sum()
    if not total > 0:
        raise ValueError("sum of initial weights must be positive")
    w /= total
    free = np.ones(n, dtype=bool) if frozen_mask is None else ~np.asarray(frozen_mask, dtype=bool)
    lr = config.learning_rate

    trees, alphas, errors = [], [], []
    for k in range(config.n_estimators):
        tree = fit_tree(X, y, w, config.max_depth, config.min_samples_leaf, backend=backend)
        e = adjusted_errors(y, tree.predict(X, backend=backend), config.loss)
        eps = float(w @ e)
        if eps >= 0.5:
            if k == 0:
                raise UnlearnableError(f"first stage average loss {eps:.4f} >= 0.5")
            break
        beta = max(eps / (1.0 - eps), BETA_FLOOR)
        trees.append(tree)
        alphas.append(lr * math.log(1.0 / beta))
        errors.append(eps)
        if eps <= PERFECT_FIT:
            break
        w[free] *= np.power(beta, lr * (1.0 - e[free]))
        w /= w.sum()
    return AdaBoostR2Model(trees, np.array(alphas), np.array(errors))


# -- two-stage transfer ------------------------------------------------------

def target_schedule(t, n, m, steps):
    """Target-block weight mass in effect during step ``t`` (1-based)."""
    base = m / (n + m)
    return base + (t - 1) / (steps - 1) * (1.0 - base)


def _target_mass(weights, source_mask, beta, e):
    src = weights[source_mask] * np.power(beta, e[source_mask])
    tgt = weights[~source_mask].sum()
    return tgt / (tgt + src.sum())


def solve_beta(weights, e, source_mask, target_fraction):
    """Find beta in [0, 1] so scaling source rows by ``beta**e`` and
    renormalising leaves ``target_fraction`` of the mass on target rows.

    Bisection, at most 200 iterations, tolerance 1e-12 on the mass. Raises
    ``InfeasibleScheduleError`` when the fraction is below the current mass
    or cannot be reached even at beta = 0 (zero-error source rows).
    """
    w = np.asarray(weights, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    src = np.asarray(source_mask, dtype=bool)
    current = _target_mass(w, src, 1.0, e)
    if target_fraction < current - MASS_TOL:
        raise InfeasibleScheduleError(
            f"target fraction {target_fraction} below current target mass {current}"
        )
    if target_fraction >= 1.0:
        return 0.0
    if abs(current - target_fraction) <= MASS_TOL:
        return 1.0
    if _target_mass(w, src, 0.0, e) < target_fraction - MASS_TOL:
        raise InfeasibleScheduleError(
            "target fraction unreachable: zero-error source rows hold too much weight"
        )
    lo, hi = 0.0, 1.0  # mass(lo) >= target >= mass(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        mass = _target_mass(w, src, mid, e)
        if abs(mass - target_fraction) <= MASS_TOL:
            return mid
        if mass > target_fraction:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if abs(_target_mass(w, src, mid, e) - target_fraction) > MASS_TOL:
        raise InfeasibleScheduleError("bisection did not reach the target fraction")
    return mid


def two_stage_update(weights, e, source_mask, target_fraction):
    """One outer weight update.

    Returns ``(new_weights, beta, Z, uniform)``. When no beta in [0, 1] can
    reach the fraction (source rows the weak tree fits exactly are immune to
    ``beta**e``), the source block is scaled uniformly instead and ``beta``
    is NaN with ``uniform`` set.
    """
    w = np.asarray(weights, dtype=np.float64)
    src = np.asarray(source_mask, dtype=bool)
    try:
        beta = solve_beta(w, e, src, target_fraction)
    except InfeasibleScheduleError:
        current = _target_mass(w, src, 1.0, e)
        if target_fraction < current - MASS_TOL:
            raise
        tgt = w[~src].sum()
        s = w[src].sum()
        scale = tgt * (1.0 - target_fraction) / (target_fraction * s) if s > 0 else 0.0
        new = w.copy()
        new[src] *= scale
        Z = new.sum()
        return new / Z, float("nan"), float(Z), True
    new = w.copy()
    if target_fraction >= 1.0:
        new[src] = 0.0  # 0**0 would spare zero-error rows
    else:
        new[src] = w[src] * np.power(beta, e[src])
    Z = new.sum()
    return new / Z, float(beta), float(Z), False


@dataclass
class StepRecord:
    step: int
    target_mass: float
    cv_error: float
    beta: float | None = None
    normalizer: float | None = None
    uniform_fallback: bool = False


@dataclass
class TraModel:
    model: AdaBoostR2Model
    selected_step: int  # 1-based
    steps: list
    config: BoostConfig
    n_source: int
    n_substitute: int
    provenance: dict = field(default_factory=dict)
    weights: np.ndarray | None = None  # per-step weight vectors, shape (S, n+m)

    @property
    def cv_errors(self):
        return np.array([s.cv_error for s in self.steps])

    def predict(self, X):
        return self.model.predict(X)

    def to_dict(self):
        def clean(x):
            return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x

        return {
            "config": self.config.to_dict(),
            "selected_step": self.selected_step,
            "n_source": self.n_source,
            "n_substitute": self.n_substitute,
            "steps": [
                {k: clean(v) for k, v in asdict(s).items()} for s in self.steps
            ],
            "provenance": self.provenance,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        steps = []
        for s in d["steps"]:
            s = dict(s)
            if s["cv_error"] is None:
                s["cv_error"] = math.inf
            steps.append(StepRecord(**s))
        return cls(
            model=AdaBoostR2Model.from_dict(d["model"]),
            selected_step=int(d["selected_step"]),
            steps=steps,
            config=BoostConfig.from_dict(d["config"]),
            n_source=int(d["n_source"]),
            n_substitute=int(d["n_substitute"]),
            provenance=d.get("provenance", {}),
        )


def _fold_rmse(X, y, w, source_mask, test, config, backend):
    train = np.ones(len(y), dtype=bool)
    train[test] = False
    wt = w[train]
    if not wt.sum() > 0:
        return math.inf
    try:
        model = fit_adaboost_r2(X[train], y[train], wt / wt.sum(), config,
                                frozen_mask=source_mask[train], backend=backend)
    except UnlearnableError:
        return math.inf
    r = model.predict(X[test]) - y[test]
    return float(np.sqrt(np.mean(r * r)))


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def fit_two_stage_tra(XS, yS, XT, yT, config=BoostConfig(), threads=1, backend=None,
                      keep_weights=False):
    """Two-stage TrAdaBoost.R2.

    ``XS, yS`` are the ``n`` source rows and ``XT, yT`` the ``m``
    target-substitute rows. Cross-validation folds partition only the
    substitute rows and stay fixed across steps.
    """
    XS = np.asarray(XS, dtype=np.float64)
    XT = np.asarray(XT, dtype=np.float64)
    n, m = XS.shape[0], XT.shape[0]
    if n < 1 or m < 1:
        raise ValueError("need at least one source and one substitute row")
    if m < config.folds:
        raise ValueError(f"{m} substitute rows cannot form {config.folds} folds")
    X = np.ascontiguousarray(np.vstack([XS, XT]))
    y = np.concatenate([np.asarray(yS, float), np.asarray(yT, float)])
    src = np.arange(n + m) < n
    folds = [n + f for f in kfold_indices(m, config.folds, sub_seed(config.seed, "tra-folds"))]

    w = np.full(n + m, 1.0 / (n + m))
    history, records = [], []
    for t in range(1, config.steps + 1):
        history.append(w.copy())
        mass = float(w[~src].sum())
        errs = _map(lambda test: _fold_rmse(X, y, w, src, test, config, backend), folds, threads)
        err = float(np.mean(errs))
        rec = StepRecord(t, mass, err)
        if t < config.steps:
            tree = fit_tree(X, y, w, config.max_depth, config.min_samples_leaf, backend=backend)
            e = adjusted_errors(y, tree.predict(X, backend=backend), config.loss)
            frac = target_schedule(t + 1, n, m, config.steps)
            w, beta, Z, uniform = two_stage_update(w, e, src, frac)
            rec.beta = None if uniform else beta
            rec.normalizer = Z
            rec.uniform_fallback = uniform
        records.append(rec)
        log.debug("step %d: target mass %.4f, cv rmse %.4f", t, mass, err)

    errors = np.array([r.cv_error for r in records])
    if not np.isfinite(errors).any():
        raise UnlearnableError("every step failed to train")
    best = int(np.argmin(errors))
    model = fit_adaboost_r2(X, y, history[best], config, frozen_mask=src, backend=backend)
    return TraModel(
        model=model,
        selected_step=best + 1,
        steps=records,
        config=config,
        n_source=n,
        n_substitute=m,
        weights=np.vstack(history) if keep_weights else None,
    )


def grid_search(XS, yS, XT, yT, grids, base_config=BoostConfig(), threads=1, backend=None):
    """Exhaustive scan over ``learning_rate x max_depth x n_estimators``.

    Each cell is scored by its selected step's CV error. Returns the best
    config (first in scan order on ties) and the full score table.
    """
    lrs = list(grids.get("learning_rate", [base_config.learning_rate]))
    depths = list(grids.get("max_depth", [base_config.max_depth]))
    n_ests = list(grids.get("n_estimators", [base_config.n_estimators]))
    if not (lrs and depths and n_ests):
        raise ValueError("every grid axis needs at least one value")
    rows, best = [], None
    for lr, depth, n_est in itertools.product(lrs, depths, n_ests):
        cfg = replace(base_config, learning_rate=float(lr), max_depth=int(depth), n_estimators=int(n_est))
        try:
            tra = fit_two_stage_tra(XS, yS, XT, yT, cfg, threads=threads, backend=backend)
            score = float(tra.cv_errors.min())
        except UnlearnableError:
            score = math.inf
        rows.append({"learning_rate": cfg.learning_rate, "max_depth": cfg.max_depth,
                     "n_estimators": cfg.n_estimators, "cv_rmse": score})
        if best is None or score < best[1]:
            best = (cfg, score)
    return best[0], pd.DataFrame(rows)
