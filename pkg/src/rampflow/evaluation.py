"""Error metrics, baseline regressors and the score-table harness."""
from dataclasses import dataclass

import numpy as np
import pandas as pd

SCORE_COLUMNS = ("model", "location_id", "ramp", "mae_veh_h", "rmse_veh_h", "train_seconds")
RAMPS = (("on", "on_flow", "on_flow_hat"), ("off", "off_flow", "off_flow_hat"))


def _residuals(y_hat, y):
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ValueError("prediction and truth lengths differ")
    if y.size == 0:
        raise ValueError("empty input")
    return y_hat - y


def mae(y_hat, y):
    """Mean absolute error."""
    return float(np.mean(np.abs(_residuals(y_hat, y))))


def rmse(y_hat, y):
    """Root mean squared error."""
    r = np.abs(_residuals(y_hat, y))
    # scale first so tiny residuals cannot square to zero (or huge ones overflow)
    top = r.max()
    if top == 0:
        return 0.0
    z = r / top
    return float(top * np.sqrt(np.mean(z * z)))


def knn_baseline(X_train, y_train, X_test, k=30):
    """Mean label of the ``k`` Euclidean-nearest training rows.

    Distance ties are broken by training-row index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    X_train = np.asarray(X_train, dtype=np.float64)
    X_test = np.asarray(X_test, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    if k > X_train.shape[0]:
        raise ValueError(f"k={k} exceeds {X_train.shape[0]} training rows")
    out = np.empty(X_test.shape[0])
    step = 64
    for lo in range(0, X_test.shape[0], step):
        diff = X_test[lo:lo + step, None, :] - X_train[None, :, :]
        d2 = (diff * diff).sum(axis=2)
        # stable sort keeps the lower index first among equal distances
        nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
        out[lo:lo + step] = y_train[nn].mean(axis=1)
    return out


def mean_baseline(y_train, n_test):
    y_train = np.asarray(y_train, dtype=np.float64)
    if y_train.size == 0:
        raise ValueError("empty training labels")
    return np.full(int(n_test), y_train.mean())


@dataclass
class ScoreTable:
    """Per (model, location, ramp) errors averaged over repeated runs."""

    frame: pd.DataFrame
    runs: list  # per-run frames with the same columns

    def to_csv(self, path):
        self.frame.to_csv(path, index=False, float_format="%.6f", na_rep="")


def score_run(predictions, truth, model, train_seconds=None):
    """Score one run's estimates against ground truth.

    ``predictions`` has ``location_id, interval_start, on_flow_hat,
    off_flow_hat``; ``truth`` has ``location_id, interval_start, on_flow,
    off_flow``. Rows are matched on ``(location_id, interval_start)``.
    """
    merged = predictions.merge(truth, on=["location_id", "interval_start"], how="inner")
    if merged.empty:
        raise ValueError("no estimate rows overlap the ground truth")
    rows = []
    for loc in sorted(merged["location_id"].unique()):
        sub = merged[merged["location_id"] == loc]
        for ramp, col, hat in RAMPS:
            if hat not in sub:
                continue
            ok = sub[col].notna() & sub[hat].notna()
            if not ok.any():
                raise ValueError(f"location {loc!r}: no {ramp}-ramp ground truth")
            y, yh = sub.loc[ok, col].to_numpy(), sub.loc[ok, hat].to_numpy()
            secs = np.nan if train_seconds is None else float(train_seconds)
            rows.append((model, loc, ramp, mae(yh, y), rmse(yh, y), secs))
    return pd.DataFrame(rows, columns=list(SCORE_COLUMNS))


def compare(run_results, truth):
    """Average per-run scores for every model.

    ``run_results`` maps model name to a list of ``(predictions,
    train_seconds)`` pairs, one per seeded run; ``train_seconds`` may be
    None to leave the timing column empty. Row order is fixed by
    (model order given, location_id, ramp).
    """
    per_run = []
    for model, runs in run_results.items():
        if not runs:
            raise ValueError(f"model {model!r} has no runs")
        for k, (pred, secs) in enumerate(runs):
            frame = score_run(pred, truth, model, secs)
            frame.insert(1, "run", k)
            per_run.append(frame)
    allruns = pd.concat(per_run, ignore_index=True)
    model_order = {m: i for i, m in enumerate(run_results)}
    ramp_order = {"on": 0, "off": 1}
    agg = (
        allruns.groupby(["model", "location_id", "ramp"], sort=False)[
            ["mae_veh_h", "rmse_veh_h", "train_seconds"]
        ].mean().reset_index()
    )
    agg = agg.sort_values(
        ["model", "location_id", "ramp"],
        key=lambda s: s.map(model_order) if s.name == "model" else (s.map(ramp_order) if s.name == "ramp" else s),
        kind="stable",
    ).reset_index(drop=True)
    return ScoreTable(agg.loc[:, list(SCORE_COLUMNS)], [f for _, f in allruns.groupby("run", sort=True)])
