"""End-to-end orchestration: aggregate -> select -> match -> train -> estimate -> evaluate.

Every stage reads and writes plain files so it can also be run on its own
from the CLI. One run seed fans out to the stochastic stages through named
sub-seeds.
"""
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from rampflow import ingest, stats
from rampflow._seeding import sub_seed
from rampflow.boosting import (
    BoostConfig,
    TraModel,
    fit_adaboost_r2,
    fit_two_stage_tra,
    grid_search,
)
from rampflow.evaluation import compare, knn_baseline, mean_baseline
from rampflow.matching import match_locations, substitute_target_data
from rampflow.ridge import (
    DEFAULT_FOLDS,
    DEFAULT_GRID,
    DEFAULT_RUNS,
    DEFAULT_THRESHOLD,
    Standardizer,
    select_features,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FEATURES = list(stats.FEATURE_NAMES)
RAMP_LABELS = (("on", "on_flow"), ("off", "off_flow"))


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# -- selection / matching ----------------------------------------------------

@dataclass
class Selection:
    """Masks over ``FEATURES`` plus the source standardizer."""

    on_mask: np.ndarray
    off_mask: np.ndarray
    standardizer: Standardizer
    frame: pd.DataFrame | None = None

    @property
    def union_mask(self):
        return self.on_mask | self.off_mask

    def mask(self, ramp):
        return self.on_mask if ramp == "on" else self.off_mask

    def names(self, mask):
        return [n for n, keep in zip(FEATURES, mask) if keep]


def run_selection(source_table, threshold=DEFAULT_THRESHOLD, runs=DEFAULT_RUNS,
                  grid=DEFAULT_GRID, folds=DEFAULT_FOLDS, seed=0):
    fs = select_features(source_table, FEATURES, threshold, runs, grid, folds,
                         sub_seed(seed, "ridge"))
    return Selection(fs.on_mask, fs.off_mask, fs.standardizer, fs.to_frame())


def selection_from_csv(path, source_table):
    df = pd.read_csv(path)
    if list(df["variable"]) != FEATURES:
        raise ValueError(f"{path}: variable column does not match the feature ordering")

    def as_bool(s):
        return s.astype(str).str.lower().isin(["true", "1"]).to_numpy()

    std = Standardizer.fit(source_table.loc[:, FEATURES].to_numpy(np.float64))
    return Selection(as_bool(df["selected_on"]), as_bool(df["selected_off"]), std, df)


def write_selection(selection, path):
    selection.frame.to_csv(path, index=False, float_format="%.6f")


def matches_frames(result):
    summary = pd.DataFrame(
        [(m.target_location, m.source_location, m.correlation_sum) for m in result.matches.values()],
        columns=["target_location", "source_location", "correlation_sum"],
    )
    detail = []
    for (t, s), corrs in sorted(result.scores.items()):
        for var, c in zip(result.variables, corrs):
            detail.append((t, s, var, c))
    detail = pd.DataFrame(detail, columns=["target_location", "source_location", "variable", "correlation"])
    return summary, detail


def read_matches(path):
    df = pd.read_csv(path, dtype={"target_location": str, "source_location": str})
    return dict(zip(df["target_location"], df["source_location"]))


# -- training ----------------------------------------------------------------

@dataclass
class LocationModels:
    source_location: str
    substitute_intervals: list
    theta: float
    models: dict  # ramp -> TraModel


@dataclass
class ModelBundle:
    """Everything ``estimate`` needs: preprocessing, masks and per-location models."""

    standardizer: Standardizer
    on_mask: np.ndarray
    off_mask: np.ndarray
    config: BoostConfig
    substitution_fraction: float
    locations: dict = field(default_factory=dict)  # target location_id -> LocationModels

    def mask(self, ramp):
        return self.on_mask if ramp == "on" else self.off_mask

    def predict(self, table):
        out = []
        for loc in sorted(table["location_id"].unique()):
            if loc not in self.locations:
                raise KeyError(f"model has no entry for location {loc!r}")
            sub = table[table["location_id"] == loc].sort_values("interval_start", kind="stable")
            Z = self.standardizer.transform(sub.loc[:, FEATURES].to_numpy(np.float64))
            frame = pd.DataFrame({"location_id": loc, "interval_start": sub["interval_start"].to_numpy()})
            for ramp, _ in RAMP_LABELS:
                model = self.locations[loc].models.get(ramp)
                if model is not None:
                    frame[f"{ramp}_flow_hat"] = model.predict(Z[:, self.mask(ramp)])
            out.append(frame)
        return pd.concat(out, ignore_index=True)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "feature_names": FEATURES,
            "config": self.config.to_dict(),
            "substitution_fraction": self.substitution_fraction,
            "standardizer": self.standardizer.to_dict(),
            "selected_mask": {"on": self.on_mask.tolist(), "off": self.off_mask.tolist()},
            "locations": {
                tid: {
                    "source_location": lm.source_location,
                    "substitute_intervals": lm.substitute_intervals,
                    "theta": lm.theta,
                    "models": {r: m.to_dict() for r, m in lm.models.items()},
                }
                for tid, lm in self.locations.items()
            },
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema_version {d.get('schema_version')!r}")
        if list(d["feature_names"]) != FEATURES:
            raise ValueError("model feature ordering does not match this build")
        locs = {
            tid: LocationModels(
                e["source_location"], e["substitute_intervals"], e["theta"],
                {r: TraModel.from_dict(m) for r, m in e["models"].items()},
            )
            for tid, e in d["locations"].items()
        }
        return cls(
            Standardizer.from_dict(d["standardizer"]),
            np.asarray(d["selected_mask"]["on"], dtype=bool),
            np.asarray(d["selected_mask"]["off"], dtype=bool),
            BoostConfig.from_dict(d["config"]),
            float(d["substitution_fraction"]),
            locs,
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _labelled(table):
    return table[table["on_flow"].notna() & table["off_flow"].notna()]


def _location_rows(table, loc):
    return table[table["location_id"] == loc].sort_values("interval_start", kind="stable")


def _ramps(ramps):
    chosen = [(r, c) for r, c in RAMP_LABELS if r in ramps]
    if not chosen:
        raise ValueError(f"no known ramp in {ramps!r}")
    return chosen


def train_bundle(source_table, target_table, selection, config=BoostConfig(), matches=None,
                 fraction=0.10, threads=1, seed=0, backend=None, ramps=("on", "off")):
    """Match, substitute and fit the ramp models for every target location.

    ``matches`` maps target to source location; computed from the union of
    the selected variables when omitted.
    """
    if matches is None:
        result = match_locations(source_table, target_table, selection.names(selection.union_mask))
        matches = {t: m.source_location for t, m in result.matches.items()}
    std = selection.standardizer
    union = selection.union_mask

    plans = {}
    for tid in sorted(target_table["location_id"].unique()):
        src = _labelled(_location_rows(source_table, matches[tid]))
        tgt = _location_rows(target_table, tid)
        ZS = std.transform(src.loc[:, FEATURES].to_numpy(np.float64))
        ZT = std.transform(tgt.loc[:, FEATURES].to_numpy(np.float64))
        sub = substitute_target_data(ZS[:, union], ZT[:, union], fraction)
        plans[tid] = (src, ZS, sub)

    jobs = [(tid, ramp, col) for tid in plans for ramp, col in _ramps(ramps)]

    def fit(job):
        tid, ramp, col = job
        src, ZS, sub = plans[tid]
        mask = selection.mask(ramp)
        X = ZS[:, mask]
        y = src[col].to_numpy(np.float64)
        cfg = replace(config, seed=sub_seed(seed, "train", tid, ramp))
        tra = fit_two_stage_tra(X, y, X[sub.indices], y[sub.indices], cfg, backend=backend)
        tra.provenance = {"target_location": tid, "source_location": matches[tid], "ramp": ramp}
        return tra

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fitted = list(pool.map(fit, jobs))
    else:
        fitted = [fit(j) for j in jobs]

    bundle = ModelBundle(std, selection.on_mask.copy(), selection.off_mask.copy(), config, fraction)
    for (tid, ramp, _), tra in zip(jobs, fitted):
        src, _, sub = plans[tid]
        if tid not in bundle.locations:
            bundle.locations[tid] = LocationModels(
                matches[tid],
                src["interval_start"].to_numpy()[sub.indices].tolist(),
                sub.theta,
                {},
            )
        bundle.locations[tid].models[ramp] = tra
    return bundle


def run_gridsearch(source_table, target_table, selection, grids, base_config=BoostConfig(),
                   fraction=0.10, threads=1, seed=0):
    """Grid search per (target location, ramp); cells scored by mean CV error."""
    result = match_locations(source_table, target_table, selection.names(selection.union_mask))
    std, union = selection.standardizer, selection.union_mask
    tables = []
    for tid, m in sorted(result.matches.items()):
        src = _labelled(_location_rows(source_table, m.source_location))
        ZS = std.transform(src.loc[:, FEATURES].to_numpy(np.float64))
        ZT = std.transform(_location_rows(target_table, tid).loc[:, FEATURES].to_numpy(np.float64))
        sub = substitute_target_data(ZS[:, union], ZT[:, union], fraction)
        for ramp, col in RAMP_LABELS:
            X = ZS[:, selection.mask(ramp)]
            y = src[col].to_numpy(np.float64)
            cfg = replace(base_config, seed=sub_seed(seed, "grid", tid, ramp))
            _, table = grid_search(X, y, X[sub.indices], y[sub.indices], grids, cfg, threads=threads)
            table.insert(0, "ramp", ramp)
            table.insert(0, "target_location", tid)
            tables.append(table)
    full = pd.concat(tables, ignore_index=True)
    keys = ["learning_rate", "max_depth", "n_estimators"]
    summary = full.groupby(keys, sort=False)["cv_rmse"].mean().reset_index()
    best = summary.iloc[int(np.argmin(summary["cv_rmse"].to_numpy()))]
    best_cfg = replace(base_config, learning_rate=float(best["learning_rate"]),
                       max_depth=int(best["max_depth"]), n_estimators=int(best["n_estimators"]))
    return best_cfg, summary, full


# -- evaluation --------------------------------------------------------------

def baseline_predictions(source_table, target_table, selection, matches, config=BoostConfig(),
                         knn_neighbors=30, backend=None, ramps=("on", "off")):
    """Predictions of the reference models on every target row.

    ``AdaBoostR2-source`` is fit on all source locations pooled; ``KNN`` and
    ``Mean`` use the matched source location only.
    """
    std = selection.standardizer
    pooled = _labelled(source_table)
    Zp = std.transform(pooled.loc[:, FEATURES].to_numpy(np.float64))
    out = {"AdaBoostR2-source": [], "KNN": [], "Mean": []}
    pooled_models = {}
    for ramp, col in _ramps(ramps):
        mask = selection.mask(ramp)
        pooled_models[ramp] = fit_adaboost_r2(Zp[:, mask], pooled[col].to_numpy(np.float64),
                                              config=config, backend=backend)
    for tid in sorted(target_table["location_id"].unique()):
        tgt = _location_rows(target_table, tid)
        src = _labelled(_location_rows(source_table, matches[tid]))
        ZT = std.transform(tgt.loc[:, FEATURES].to_numpy(np.float64))
        ZS = std.transform(src.loc[:, FEATURES].to_numpy(np.float64))
        frames = {k: pd.DataFrame({"location_id": tid, "interval_start": tgt["interval_start"].to_numpy()})
                  for k in out}
        for ramp, col in _ramps(ramps):
            mask = selection.mask(ramp)
            y = src[col].to_numpy(np.float64)
            frames["AdaBoostR2-source"][f"{ramp}_flow_hat"] = pooled_models[ramp].predict(ZT[:, mask])
            k = min(knn_neighbors, len(y))
            frames["KNN"][f"{ramp}_flow_hat"] = knn_baseline(ZS[:, mask], y, ZT[:, mask], k)
            frames["Mean"][f"{ramp}_flow_hat"] = mean_baseline(y, len(tgt))
        for k in out:
            out[k].append(frames[k])
    return {k: pd.concat(v, ignore_index=True) for k, v in out.items()}


def truth_from_table(table):
    return table.loc[:, ["location_id", "interval_start", "on_flow", "off_flow"]]


def evaluate_runs(source_table, target_table, truth, selection, matches, config=BoostConfig(),
                  runs=10, fraction=0.10, knn_neighbors=30, threads=1, seed=0,
                  record_timing=False, backend=None):
    """Score TrA against the baselines over ``runs`` seeded repetitions.

    Only TrA depends on the run seed (its CV folds); the baselines are
    deterministic and scored once per run for a uniform table.
    """
    results = {"TrA": []}
    for r in range(runs):
        t0 = time.perf_counter()
        bundle = train_bundle(source_table, target_table, selection, config, matches, fraction,
                              threads, sub_seed(seed, "eval-run", r), backend)
        secs = time.perf_counter() - t0
        results["TrA"].append((bundle.predict(target_table), secs if record_timing else None))
    t0 = time.perf_counter()
    base = baseline_predictions(source_table, target_table, selection, matches, config,
                                knn_neighbors, backend)
    secs = time.perf_counter() - t0
    for name, pred in base.items():
        results[name] = [(pred, secs if record_timing else None)] * runs
    return compare(results, truth)


# -- run configuration -------------------------------------------------------

@dataclass
class RunConfig:
    out_dir: str = "rampflow-out"
    seed: int = 0
    threads: int = 1
    utc_offset: float = -7.0
    source_raw: str | None = None
    target_raw: str | None = None
    source_corridor: str | None = None
    target_corridor: str | None = None
    target_truth: str | None = None
    synth_source: dict | None = None
    synth_target: dict | None = None
    ridge_grid: tuple = DEFAULT_GRID
    ridge_folds: int = DEFAULT_FOLDS
    ridge_runs: int = DEFAULT_RUNS
    ridge_threshold: float = DEFAULT_THRESHOLD
    substitution_fraction: float = 0.10
    boost: BoostConfig = field(default_factory=BoostConfig)
    eval_runs: int = 10
    knn_neighbors: int = 30
    record_timing: bool = False

    @classmethod
    def from_dict(cls, d):
        paths = d.get("paths", {})
        ridge = d.get("ridge", {})
        ev = d.get("evaluation", {})
        synth = d.get("synth", {})
        kw = dict(
            out_dir=paths.get("output_dir", d.get("out_dir", cls.out_dir)),
            seed=int(d.get("seed", 0)),
            threads=int(d.get("threads", 1)),
            utc_offset=float(d.get("utc_offset", -7.0)),
            source_raw=paths.get("source_raw"),
            target_raw=paths.get("target_raw"),
            source_corridor=paths.get("source_corridor"),
            target_corridor=paths.get("target_corridor"),
            target_truth=paths.get("target_truth"),
            synth_source=synth.get("source"),
            synth_target=synth.get("target"),
            ridge_grid=tuple(ridge.get("grid", DEFAULT_GRID)),
            ridge_folds=int(ridge.get("folds", DEFAULT_FOLDS)),
            ridge_runs=int(ridge.get("runs", DEFAULT_RUNS)),
            ridge_threshold=float(ridge.get("threshold", DEFAULT_THRESHOLD)),
            substitution_fraction=float(d.get("substitution_fraction", 0.10)),
            boost=BoostConfig.from_dict(d.get("boost", {})),
            eval_runs=int(ev.get("runs", 10)),
            knn_neighbors=int(ev.get("knn_neighbors", 30)),
            record_timing=bool(ev.get("record_timing", False)),
        )
        return cls(**kw)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _stage(name, fn, *args, **kwargs):
    log.info("stage %s", name)
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


def aggregate_files(raw_path, corridor_path, features_out, report_out, utc_offset=-7.0):
    spec = ingest.CorridorSpec.load(corridor_path)
    df = ingest.parse_raw_records(raw_path, spec)
    table, report = ingest.build_dataset(df, spec, utc_offset)
    stats.write_feature_table(table, features_out)
    report.to_csv(report_out, index=False)
    return table, report


def run_pipeline(cfg):
    """Run every stage in order, writing intermediate files under ``cfg.out_dir``.

    Returns a summary dict (also written to ``summary.json``).
    """
    from rampflow import synth

    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    p = lambda *parts: os.path.join(out, *parts)  # noqa: E731
    summary = {"seed": cfg.seed, "stages": []}

    src_raw, tgt_raw = cfg.source_raw, cfg.target_raw
    src_spec, tgt_spec, truth_path = cfg.source_corridor, cfg.target_corridor, cfg.target_truth
    if cfg.synth_source or cfg.synth_target:
        def do_synth():
            made = {}
            for role, conf in (("source", cfg.synth_source), ("target", cfg.synth_target)):
                if conf is None:
                    continue
                sc = synth.SynthConfig.from_dict(conf)
                corr = synth.generate_corridor(sc)
                synth.write_corridor(corr, p(role))
                made[role] = p(role)
            return made
        made = _stage("synth", do_synth)
        if "source" in made:
            src_raw, src_spec = p("source", "raw.csv.gz"), p("source", "corridor.json")
        if "target" in made:
            tgt_raw, tgt_spec = p("target", "raw.csv.gz"), p("target", "corridor.json")
            truth_path = truth_path or p("target", "truth.csv")
        summary["stages"].append("synth")

    for name, val in (("source_raw", src_raw), ("target_raw", tgt_raw),
                      ("source_corridor", src_spec), ("target_corridor", tgt_spec)):
        if not val:
            raise StageError("aggregate", f"missing input path {name}")

    src_table, _ = _stage("aggregate", aggregate_files, src_raw, src_spec,
                          p("source_features.csv"), p("source_validity.csv"), cfg.utc_offset)
    tgt_table, _ = _stage("aggregate", aggregate_files, tgt_raw, tgt_spec,
                          p("target_features.csv"), p("target_validity.csv"), cfg.utc_offset)
    summary["stages"].append("aggregate")

    selection = _stage("select-features", run_selection, src_table, cfg.ridge_threshold,
                       cfg.ridge_runs, cfg.ridge_grid, cfg.ridge_folds, cfg.seed)
    write_selection(selection, p("selection.csv"))
    summary["selected_on"] = selection.names(selection.on_mask)
    summary["selected_off"] = selection.names(selection.off_mask)
    summary["stages"].append("select-features")

    result = _stage("match", match_locations, src_table, tgt_table,
                    selection.names(selection.union_mask))
    msum, mdet = matches_frames(result)
    msum.to_csv(p("matches.csv"), index=False, float_format="%.6f")
    mdet.to_csv(p("match_details.csv"), index=False, float_format="%.6f")
    matches = {t: m.source_location for t, m in result.matches.items()}
    summary["matches"] = matches
    summary["stages"].append("match")

    bundle = _stage("train", train_bundle, src_table, tgt_table, selection, cfg.boost, matches,
                    cfg.substitution_fraction, cfg.threads, cfg.seed)
    bundle.save(p("model.json"))
    summary["cv_error_per_step"] = {
        f"{tid}/{ramp}": [None if not math.isfinite(e) else round(float(e), 6) for e in m.cv_errors]
        for tid, lm in sorted(bundle.locations.items()) for ramp, m in lm.models.items()
    }
    summary["selected_step"] = {
        f"{tid}/{ramp}": m.selected_step
        for tid, lm in sorted(bundle.locations.items()) for ramp, m in lm.models.items()
    }
    summary["stages"].append("train")

    est = _stage("estimate", bundle.predict, tgt_table)
    est.to_csv(p("estimates.csv"), index=False, float_format="%.6f")
    summary["stages"].append("estimate")

    truth = None
    if truth_path and os.path.exists(truth_path):
        truth = pd.read_csv(truth_path, dtype={"location_id": str})
    elif tgt_table[["on_flow", "off_flow"]].notna().any().any():
        truth = truth_from_table(tgt_table)
    if truth is None:
        log.warning("no target ground truth; evaluation skipped")
        summary["evaluation"] = "skipped: no ground truth"
    else:
        scores = _stage("evaluate", evaluate_runs, src_table, tgt_table, truth, selection, matches,
                        cfg.boost, cfg.eval_runs, cfg.substitution_fraction, cfg.knn_neighbors,
                        cfg.threads, cfg.seed, cfg.record_timing)
        scores.to_csv(p("scores.csv"))
        summary["scores"] = scores.frame.round(6).to_dict(orient="records")
        summary["stages"].append("evaluate")

    with open(p("summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, default=str)
        fh.write("\n")
    return summary
