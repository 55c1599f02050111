"""Inter-corridor location matching and target-substitute selection."""
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class DegenerateCorrelationError(ValueError):
    pass


class NoSharedIntervalsError(ValueError):
    pass


def pearson_corr(a, b):
    """Sample Pearson correlation of two equal-length series."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("series must be 1-D and of equal length")
    if a.size < 2:
        raise ValueError("need at least two observations")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(da @ da))
    sb = math.sqrt(float(db @ db))
    if sa == 0.0 or sb == 0.0:
        raise DegenerateCorrelationError("zero-variance series")
    r = float(da @ db) / (sa * sb)
    return min(1.0, max(-1.0, r))


def _corr_or_zero(a, b):
    try:
        return pearson_corr(a, b)
    except DegenerateCorrelationError:
        return 0.0


@dataclass(frozen=True)
class Match:
    target_location: str
    source_location: str
    correlation_sum: float
    correlations: tuple


@dataclass
class MatchResult:
    variables: tuple
    matches: dict  # target location_id -> Match
    scores: dict  # (target, source) -> per-variable correlations

    def source_for(self, target_location):
        return self.matches[target_location].source_location


def _location_series(table, location_id, variables):
    sub = table[table["location_id"] == location_id]
    sub = sub.sort_values("interval_start", kind="stable")
    return sub["interval_start"].to_numpy(np.int64), sub.loc[:, list(variables)].to_numpy(np.float64)


def pair_correlations(source_table, target_table, source_id, target_id, variables, _cache=None):
    """Per-variable correlations between two locations on their shared clock."""
    if _cache is None:
        _cache = {}
    if ("s", source_id) not in _cache:
        _cache[("s", source_id)] = _location_series(source_table, source_id, variables)
    if ("t", target_id) not in _cache:
        _cache[("t", target_id)] = _location_series(target_table, target_id, variables)
    ts_s, Xs = _cache[("s", source_id)]
    ts_t, Xt = _cache[("t", target_id)]
    shared, i_s, i_t = np.intersect1d(ts_s, ts_t, assume_unique=True, return_indices=True)
    if shared.size < 2:
        raise NoSharedIntervalsError(
            f"target {target_id!r} and source {source_id!r} share {shared.size} intervals (need >= 2)"
        )
    return tuple(_corr_or_zero(Xs[i_s, j], Xt[i_t, j]) for j in range(len(variables)))


def match_locations(source_table, target_table, variables):
    """Map each target location to the source location maximising the
    summed per-variable correlation.

    Series are aligned on shared ``interval_start`` values. Zero-variance
    series contribute 0. Ties go to the lexicographically smallest source
    ``location_id``.
    """
    variables = tuple(variables)
    if not variables:
        raise ValueError("no variables to match on")
    sources = sorted(source_table["location_id"].unique())
    targets = sorted(target_table["location_id"].unique())
    matches, scores, cache = {}, {}, {}
    for t in targets:
        best = None
        for s in sources:
            corrs = pair_correlations(source_table, target_table, s, t, variables, cache)
            scores[(t, s)] = corrs
            total = float(sum(corrs))
            if best is None or total > best.correlation_sum:
                best = Match(t, s, total, corrs)
        matches[t] = best
    return MatchResult(variables, matches, scores)


@dataclass(frozen=True)
class SubstituteSet:
    indices: np.ndarray  # sorted source row indices
    theta: float  # smallest selected score
    fraction: float
    scores: np.ndarray


def substitute_count(n, fraction=0.10):
    """``ceil(fraction * n)`` computed on the decimal value of ``fraction``."""
    return math.ceil(Fraction(repr(float(fraction))) * n)


def max_cosine_scores(XS, XT, chunk=2048):
    """For each source row, the max cosine similarity to any target row.

    All-zero source rows score -1; all-zero target rows are ignored. Scores
    are rounded to 12 decimals so that numerically equal similarities tie
    exactly.
    """
    XS = np.asarray(XS, dtype=np.float64)
    XT = np.asarray(XT, dtype=np.float64)
    ns = np.linalg.norm(XS, axis=1)
    nt = np.linalg.norm(XT, axis=1)
    T = XT[nt > 0] / nt[nt > 0, None]
    scores = np.full(XS.shape[0], -1.0)
    if T.shape[0] == 0:
        return scores
    ok = np.flatnonzero(ns > 0)
    for lo in range(0, ok.size, chunk):
        idx = ok[lo:lo + chunk]
        S = XS[idx] / ns[idx, None]
        scores[idx] = np.clip(np.round((S @ T.T).max(axis=1), 12), -1.0, 1.0)
    return scores


def substitute_target_data(XS, XT, fraction=0.10):
    """Pick the ``ceil(fraction * n)`` source rows most similar to the target.

    A source row's score is its highest cosine similarity to any target row;
    ties are broken by the lower row index. ``theta`` is the realised cutoff
    (smallest selected score).
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    scores = max_cosine_scores(XS, XT)
    n = scores.size
    if n == 0:
        raise ValueError("no source rows")
    k = substitute_count(n, fraction)
    # lexsort: last key is primary -> descending score, then ascending index
    order = np.lexsort((np.arange(n), -scores))
    chosen = np.sort(order[:k])
    return SubstituteSet(chosen, float(scores[chosen].min()), fraction, scores)
