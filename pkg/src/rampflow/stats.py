"""Moment statistics and calendar encodings for 15-minute feature vectors.

The moment estimators deliberately mix normalisations: variance and
standard deviation divide by ``n - 1`` while kurtosis and skewness average
over ``n`` using that same ``n - 1`` standard deviation. Kurtosis is the
excess value (minus 3).
"""
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

N_FEATURES = 33
_MOMENTS = ("mean", "variance", "standard_deviation", "Kurtosis", "Skewness")


def _block_names(side):
    names = []
    for var in ("flow", "speed", "occupancy"):
        for stat in _MOMENTS:
            if var == "flow" and stat == "mean":
                names.append(f"{side}_flow")
            else:
                names.append(f"{side}_{var}_{stat}")
    return names


FEATURE_NAMES = tuple(_block_names("Up") + _block_names("Down") + ["DOW", "HOD", "MOH"])
TABLE_COLUMNS = ("location_id", "interval_start") + FEATURE_NAMES + ("on_flow", "off_flow")

assert len(FEATURE_NAMES) == N_FEATURES


class DegenerateSeriesError(ValueError):
    """Raised when a standardised moment is requested for a constant series."""


def _as_series(series, min_len):
    r = np.asarray(series, dtype=np.float64).ravel()
    if r.size < min_len:
        raise ValueError(f"series needs at least {min_len} values, got {r.size}")
    return r


def mean(series):
    r = _as_series(series, 1)
    return float(r.sum() / r.size)


def variance(series):
    r = _as_series(series, 2)
    d = r - r.sum() / r.size
    return float((d * d).sum() / (r.size - 1))


def std_dev(series):
    return math.sqrt(variance(series))


def _standardised_moment(series, power):
    r = _as_series(series, 2)
    sigma = std_dev(r)
    if sigma == 0.0:
        raise DegenerateSeriesError("series is constant; standardised moment undefined")
    z = (r - r.sum() / r.size) / sigma
    return float((z**power).sum() / r.size)


def kurtosis(series):
    """Excess kurtosis, ``mean(((r - rbar) / sigma)**4) - 3``."""
    return _standardised_moment(series, 4) - 3.0


def skewness(series):
    return _standardised_moment(series, 3)


def row_moments(M):
    """Row-wise (mean, variance, std, kurtosis, skewness) of a 2-D array.

    NaN entries are treated as missing and skipped. Rows with fewer than two
    observations get NaN for the spread statistics; rows with zero spread get
    0 for kurtosis and skewness.
    """
    M = np.asarray(M, dtype=np.float64)
    ok = ~np.isnan(M)
    n = ok.sum(axis=1).astype(np.float64)
    filled = np.where(ok, M, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = filled.sum(axis=1) / n
        d = np.where(ok, M - mu[:, None], 0.0)
        var = (d * d).sum(axis=1) / (n - 1)
        sd = np.sqrt(var)
        z = d / sd[:, None]
        skew = (z**3).sum(axis=1) / n
        kurt = (z**4).sum(axis=1) / n - 3.0
    flat = (sd == 0.0)
    skew[flat] = 0.0
    kurt[flat] = 0.0
    short = n < 2
    for a in (var, sd, skew, kurt):
        a[short] = np.nan
    return mu, var, sd, kurt, skew


def encode_time(interval_start, utc_offset=-7.0):
    """Return ``(MOH, HOD, DOW)`` for UTC epoch seconds.

    MOH is the quarter-hour index 1..4, HOD the local hour 0..23 and DOW the
    day of week with Sunday = 1 and Saturday = 7. Works element-wise on
    arrays.
    """
    local = np.asarray(interval_start, dtype=np.int64) + int(round(utc_offset * 3600))
    sod = np.mod(local, 86400)
    hod = sod // 3600
    moh = 1 + (sod % 3600) // 900
    # 1970-01-01 was a Thursday (DOW 5)
    dow = np.mod(np.floor_divide(local, 86400) + 4, 7) + 1
    if np.ndim(local) == 0:
        return int(moh), int(hod), int(dow)
    return moh, hod, dow


@dataclass(frozen=True)
class FeatureVector:
    location_id: str
    interval_start: int
    features: np.ndarray
    on_flow: float | None = None
    off_flow: float | None = None

    def as_dict(self):
        return dict(zip(FEATURE_NAMES, self.features.tolist()))


def _side_block(flow_rate, volume, speed, occupancy):
    """15 features for one mainline side from (k, 45) tick matrices."""
    _, fv, fs, fk, fsk = row_moments(volume)
    sm, sv, ss, sk, ssk = row_moments(speed)
    om, ov, os_, ok, osk = row_moments(occupancy)
    return [flow_rate, fv, fs, fk, fsk, sm, sv, ss, sk, ssk, om, ov, os_, ok, osk]


def featurize_arrays(interval_start, up, down, utc_offset=-7.0):
    """Vectorised featurisation.

    ``up`` and ``down`` are dicts with ``volume``, ``speed`` and
    ``occupancy`` arrays of shape (k, 45) (NaN = missing tick reading) and
    ``flow_rate`` of shape (k,). Returns a (k, 33) matrix in
    ``FEATURE_NAMES`` order.
    """
    moh, hod, dow = encode_time(np.asarray(interval_start), utc_offset)
    cols = _side_block(up["flow_rate"], up["volume"], up["speed"], up["occupancy"])
    cols += _side_block(down["flow_rate"], down["volume"], down["speed"], down["occupancy"])
    cols += [dow, hod, moh]
    return np.column_stack([np.asarray(c, dtype=np.float64) for c in cols])


def _series_arrays(series):
    vol = np.array([t.volume for t in series.ticks], dtype=np.float64)
    spd = np.array([np.nan if t.speed is None else t.speed for t in series.ticks])
    occ = np.array([np.nan if t.occupancy is None else t.occupancy for t in series.ticks])
    return {
        "volume": vol[None, :],
        "speed": spd[None, :],
        "occupancy": occ[None, :],
        "flow_rate": np.array([series.flow_rate]),
    }


def featurize(up, down, on_flow=None, off_flow=None, location_id="", utc_offset=-7.0):
    """Build one FeatureVector from aligned upstream/downstream IntervalSeries."""
    if up.interval_start != down.interval_start:
        raise ValueError("upstream and downstream intervals are not aligned")
    X = featurize_arrays([up.interval_start], _series_arrays(up), _series_arrays(down), utc_offset)
    return FeatureVector(location_id, up.interval_start, X[0], on_flow, off_flow)


def write_feature_table(df, path):
    df = df.loc[:, list(TABLE_COLUMNS)]
    df.to_csv(path, index=False, float_format="%.17g", na_rep="")


def read_feature_table(path):
    df = pd.read_csv(path, dtype={"location_id": str}, float_precision="round_trip")
    missing = [c for c in TABLE_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: feature table missing columns {missing}")
    df["interval_start"] = df["interval_start"].astype(np.int64)
    return df.loc[:, list(TABLE_COLUMNS)]
