"""Command-line entry point: ``rampflow <subcommand> ...``."""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import pandas as pd

from rampflow import __version__, pipeline, stats, synth
from rampflow.evaluation import compare

log = logging.getLogger("rampflow")


def _global_flags(sup=False):
    # SUPPRESS on the subparser copy keeps a flag given before the
    # subcommand from being reset by the subparser's default
    d = (lambda v: argparse.SUPPRESS) if sup else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d(None), help="run configuration JSON")
    p.add_argument("--seed", type=int, default=d(None), help="master seed")
    p.add_argument("--threads", type=int, default=d(None), help="worker threads")
    p.add_argument("--out-dir", default=d(None), help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=d(0))
    return p


def _run_config(args):
    cfg = pipeline.RunConfig.load(args.config) if args.config else pipeline.RunConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    if args.out_dir is not None:
        over["out_dir"] = args.out_dir
    return replace(cfg, **over)


def _out(args, path, default_name):
    """Resolve an output path; bare defaults land in ``--out-dir``."""
    if path:
        target = path
    else:
        target = os.path.join(args.out_dir or ".", default_name)
    parent = os.path.dirname(target)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return target


def _read_features(path):
    return stats.read_feature_table(path)


def _selection(args, source):
    if getattr(args, "selection", None):
        return pipeline.selection_from_csv(args.selection, source)
    cfg = _run_config(args)
    return pipeline.run_selection(source, cfg.ridge_threshold, cfg.ridge_runs, cfg.ridge_grid,
                                  cfg.ridge_folds, cfg.seed)


# -- subcommands -------------------------------------------------------------

def cmd_synth(args):
    path = args.synth_config or args.config
    cfg = synth.load_config(path) if path else synth.SynthConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.days is not None:
        over["days"] = args.days
    if over:
        cfg = replace(cfg, **over)
    out = args.out or args.out_dir or "synth"
    corridor = synth.generate_corridor(cfg)
    synth.write_corridor(corridor, out)
    print(f"wrote {len(corridor.raw)} raw records and {len(corridor.truth)} truth rows to {out}")


def cmd_aggregate(args):
    out = _out(args, args.out, "features.csv")
    report = args.report or os.path.splitext(out)[0] + "_validity.csv"
    cfg = _run_config(args)
    table, rep = pipeline.aggregate_files(args.raw, args.corridor, out, report, cfg.utc_offset)
    print(f"{len(table)} feature rows -> {out}; {len(rep)} dropped intervals -> {report}")


def cmd_select(args):
    cfg = _run_config(args)
    source = _read_features(args.features)
    sel = pipeline.run_selection(source, cfg.ridge_threshold, cfg.ridge_runs, cfg.ridge_grid,
                                 cfg.ridge_folds, cfg.seed)
    out = _out(args, args.out, "selection.csv")
    pipeline.write_selection(sel, out)
    print("on-ramp:", ", ".join(sel.names(sel.on_mask)) or "(none)")
    print("off-ramp:", ", ".join(sel.names(sel.off_mask)) or "(none)")


def cmd_match(args):
    from rampflow.matching import match_locations

    source, target = _read_features(args.source), _read_features(args.target)
    sel = _selection(args, source)
    result = match_locations(source, target, sel.names(sel.union_mask))
    summary, detail = pipeline.matches_frames(result)
    out = _out(args, args.out, "matches.csv")
    summary.to_csv(out, index=False, float_format="%.6f")
    details = args.details or os.path.splitext(out)[0] + "_details.csv"
    detail.to_csv(details, index=False, float_format="%.6f")
    print(summary.to_string(index=False))


def cmd_train(args):
    cfg = _run_config(args)
    source, target = _read_features(args.source), _read_features(args.target)
    sel = _selection(args, source)
    matches = pipeline.read_matches(args.matches) if args.matches else None
    bundle = pipeline.train_bundle(source, target, sel, cfg.boost, matches,
                                   cfg.substitution_fraction, cfg.threads, cfg.seed)
    out = _out(args, args.out, "model.json")
    bundle.save(out)
    for tid, lm in sorted(bundle.locations.items()):
        steps = ", ".join(f"{r}: step {m.selected_step}" for r, m in lm.models.items())
        print(f"{tid} <- {lm.source_location} ({steps})")
    print(f"model -> {out}")


def cmd_gridsearch(args):
    cfg = _run_config(args)
    grids = {}
    if args.config:
        with open(args.config) as fh:
            grids = json.load(fh).get("grid", {})
    for key in ("learning_rate", "max_depth", "n_estimators"):
        val = getattr(args, key)
        if val:
            grids[key] = val
    source, target = _read_features(args.source), _read_features(args.target)
    sel = _selection(args, source)
    best, summary, full = pipeline.run_gridsearch(source, target, sel, grids, cfg.boost,
                                                  cfg.substitution_fraction, cfg.threads, cfg.seed)
    out = _out(args, args.out, "gridsearch.csv")
    summary.to_csv(out, index=False, float_format="%.6f")
    full.to_csv(os.path.splitext(out)[0] + "_cells.csv", index=False, float_format="%.6f")
    print(summary.to_string(index=False))
    print(f"best: learning_rate={best.learning_rate} max_depth={best.max_depth} "
          f"n_estimators={best.n_estimators}")


def cmd_estimate(args):
    bundle = pipeline.ModelBundle.load(args.model)
    est = bundle.predict(_read_features(args.features))
    out = _out(args, args.out, "estimates.csv")
    est.to_csv(out, index=False, float_format="%.6f")
    print(f"{len(est)} estimates -> {out}")


def cmd_evaluate(args):
    truth = pd.read_csv(args.truth, dtype={"location_id": str})
    runs = {}
    for spec in args.estimates:
        name, _, path = spec.rpartition("=")
        name = name or os.path.splitext(os.path.basename(path))[0]
        runs.setdefault(name, []).append((pd.read_csv(path, dtype={"location_id": str}), None))
    scores = compare(runs, truth)
    out = _out(args, args.out, "scores.csv")
    scores.to_csv(out)
    print(scores.frame.to_string(index=False))


def cmd_run(args):
    cfg = _run_config(args)
    summary = pipeline.run_pipeline(cfg)
    print(f"stages: {', '.join(summary['stages'])}")
    if isinstance(summary.get("evaluation"), str):
        print(summary["evaluation"])
    print(f"artifacts in {cfg.out_dir}")


def build_parser():
    glob = _global_flags()
    sub_glob = _global_flags(sup=True)
    parser = argparse.ArgumentParser(
        prog="rampflow", parents=[glob],
        description="Estimate unobserved freeway ramp flows by transfer learning from an instrumented corridor.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[sub_glob], help=help_)
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "generate a synthetic corridor (--config is the corridor JSON)")
    p.add_argument("--synth-config", help="synthetic corridor JSON; same as --config here")
    p.add_argument("--days", type=int)
    p.add_argument("--out", help="output directory")

    p = add("aggregate", cmd_aggregate, "raw 20-s records -> 15-min feature table")
    p.add_argument("--raw", required=True)
    p.add_argument("--corridor", required=True, help="corridor spec JSON")
    p.add_argument("--out")
    p.add_argument("--report", help="validity report CSV")

    p = add("select-features", cmd_select, "ridge variable selection on a source table")
    p.add_argument("--features", required=True)
    p.add_argument("--out")

    p = add("match", cmd_match, "match target locations to source locations")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--selection")
    p.add_argument("--out")
    p.add_argument("--details")

    p = add("train", cmd_train, "fit transfer models for every target location")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--selection")
    p.add_argument("--matches")
    p.add_argument("--out")

    p = add("gridsearch", cmd_gridsearch, "hyperparameter grid search")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--selection")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, nargs="+")
    p.add_argument("--max-depth", dest="max_depth", type=int, nargs="+")
    p.add_argument("--n-estimators", dest="n_estimators", type=int, nargs="+")
    p.add_argument("--out")

    p = add("estimate", cmd_estimate, "apply a trained model to a feature table")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out")

    p = add("evaluate", cmd_evaluate, "score estimate files against ground truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--estimates", required=True, nargs="+", metavar="[NAME=]PATH")
    p.add_argument("--out")

    add("run", cmd_run, "run the whole pipeline from a config")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, KeyError, pipeline.StageError) as exc:
        print(f"rampflow: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
