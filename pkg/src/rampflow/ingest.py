"""Raw 20-second detector records to 15-minute per-location feature tables.

Two paths are provided: small record-level functions (``combine_lanes_per_tick``,
``aggregate_to_intervals``) that operate on dataclasses, and a columnar path
(``combine_lanes``, ``interval_arrays``, ``build_dataset``) over pandas frames
used for real corridors. Both apply the same rules and are cross-checked in
the tests.
"""
import csv
import gzip
import io
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from rampflow import stats

log = logging.getLogger(__name__)

TICK_SECONDS = 20
INTERVAL_SECONDS = 900
TICKS_PER_INTERVAL = INTERVAL_SECONDS // TICK_SECONDS  # 45
MAX_MISSING_SPEED = 9
RAW_HEADER = ("timestamp", "detector_id", "lane_id", "lane_type", "volume", "speed", "occupancy")
ROLES = ("upstream", "downstream", "on_ramp", "off_ramp")


class LaneType(str, Enum):
    GENERAL = "general"
    HOV = "hov"


class IngestError(ValueError):
    pass


class ParseError(IngestError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class RangeError(ParseError):
    pass


@dataclass(frozen=True)
class RawRecord:
    timestamp: int
    detector_id: str
    lane_id: int
    lane_type: LaneType
    volume: int
    speed: float
    occupancy: float


@dataclass(frozen=True)
class SegmentTick:
    timestamp: int
    volume: int
    speed: float | None
    occupancy: float | None


@dataclass(frozen=True)
class IntervalSeries:
    interval_start: int
    ticks: tuple
    segment_role: str

    def __post_init__(self):
        if self.interval_start % INTERVAL_SECONDS:
            raise IngestError(f"interval_start {self.interval_start} not on the 15-minute grid")
        if len(self.ticks) != TICKS_PER_INTERVAL:
            raise IngestError(f"interval needs {TICKS_PER_INTERVAL} ticks, got {len(self.ticks)}")
        for k, t in enumerate(self.ticks):
            if t.timestamp != self.interval_start + k * TICK_SECONDS:
                raise IngestError(f"tick {k} of interval {self.interval_start} is misplaced")

    @property
    def flow_rate(self):
        """Interval flow in veh/h."""
        return 4.0 * sum(t.volume for t in self.ticks)


@dataclass(frozen=True)
class LocationSpec:
    location_id: str
    upstream: tuple
    downstream: tuple
    on_ramp: tuple = ()
    off_ramp: tuple = ()

    def detectors(self, role):
        return getattr(self, role)


@dataclass(frozen=True)
class CorridorSpec:
    corridor_id: str
    locations: tuple = field(default_factory=tuple)

    def __post_init__(self):
        seen = set()
        for loc in self.locations:
            if loc.location_id in seen:
                raise IngestError(f"duplicate location_id {loc.location_id!r}")
            seen.add(loc.location_id)
            if not loc.upstream or not loc.downstream:
                raise IngestError(f"location {loc.location_id!r} needs upstream and downstream detectors")
            for role in ROLES:
                ids = loc.detectors(role)
                if len(set(ids)) != len(ids):
                    raise IngestError(f"location {loc.location_id!r}: duplicate detector in {role}")

    @property
    def detector_ids(self):
        ids = set()
        for loc in self.locations:
            for role in ROLES:
                ids.update(loc.detectors(role))
        return ids

    def to_dict(self):
        return {
            "corridor_id": self.corridor_id,
            "locations": [
                {
                    "location_id": loc.location_id,
                    **{role: list(loc.detectors(role)) for role in ROLES},
                }
                for loc in self.locations
            ],
        }

    @classmethod
    def from_dict(cls, d):
        locs = tuple(
            LocationSpec(
                location_id=str(l["location_id"]),
                upstream=tuple(str(x) for x in l["upstream"]),
                downstream=tuple(str(x) for x in l["downstream"]),
                on_ramp=tuple(str(x) for x in l.get("on_ramp") or ()),
                off_ramp=tuple(str(x) for x in l.get("off_ramp") or ()),
            )
            for l in d["locations"]
        )
        return cls(str(d["corridor_id"]), locs)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


# -- parsing -----------------------------------------------------------------

def _open_binary(source):
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def parse_row(row, line):
    """Parse and validate one CSV row (list of strings) into a RawRecord."""
    if len(row) != len(RAW_HEADER):
        raise ParseError(line, f"expected {len(RAW_HEADER)} fields, got {len(row)}")
    try:
        ts = int(row[0])
        det = row[1].strip()
        lane = int(row[2])
        lane_type = LaneType(row[3].strip().lower())
        vol_f = float(row[4])
        speed = float(row[5])
        occ = float(row[6])
    except ValueError as exc:
        raise ParseError(line, str(exc)) from None
    if not det:
        raise ParseError(line, "empty detector_id")
    if vol_f != int(vol_f):
        raise ParseError(line, f"volume {row[4]!r} is not an integer")
    vol = int(vol_f)
    if ts % TICK_SECONDS:
        raise RangeError(line, f"timestamp {ts} not on the {TICK_SECONDS}-s grid")
    if vol < 0:
        raise RangeError(line, f"volume {vol} is negative")
    if not speed >= 0:
        raise RangeError(line, f"speed {speed} is negative")
    if not 0 <= occ <= 100:
        raise RangeError(line, f"occupancy {occ} outside [0, 100]")
    return RawRecord(ts, det, lane, lane_type, vol, speed, occ)


def _scan_for_error(text):
    reader = csv.reader(io.StringIO(text))
    next(reader, None)
    for k, row in enumerate(reader):
        if not row:
            continue
        parse_row(row, k + 2)


def parse_raw_records(source, spec=None):
    """Parse a raw detector CSV (optionally gzip-compressed) into a frame.

    The result has one row per general-purpose lane record, restricted to
    detectors referenced by ``spec`` when given, sorted by
    ``(detector_id, timestamp, lane_id)``. HOV-lane records are dropped.

    Raises ``ParseError`` (malformed row) or ``RangeError`` (field outside its
    domain), both carrying the 1-based file line number.
    """
    text = _open_binary(source).decode("utf-8")
    first = text.split("\n", 1)[0].strip().replace(" ", "")
    if tuple(first.split(",")) != RAW_HEADER:
        raise ParseError(1, f"header must be {','.join(RAW_HEADER)}")
    try:
        df = pd.read_csv(
            io.StringIO(text),
            dtype={
                "timestamp": np.int64,
                "detector_id": str,
                "lane_id": np.int64,
                "lane_type": str,
                "volume": np.float64,
                "speed": np.float64,
                "occupancy": np.float64,
            },
            keep_default_na=False,
            na_values={"volume": [""], "speed": [""], "occupancy": [""]},
            skip_blank_lines=True,
        )
    except (ValueError, pd.errors.ParserError):
        _scan_for_error(text)
        raise  # scanner found nothing; surface the original error
    df["lane_type"] = df["lane_type"].str.strip().str.lower()
    bad = (
        df[["volume", "speed", "occupancy"]].isna().any(axis=1)
        | ~df["lane_type"].isin([t.value for t in LaneType])
        | (df["detector_id"].str.strip() == "")
        | (df["volume"] != np.floor(df["volume"]))
        | (df["timestamp"] % TICK_SECONDS != 0)
        | (df["volume"] < 0)
        | ~(df["speed"] >= 0)
        | ~((df["occupancy"] >= 0) & (df["occupancy"] <= 100))
    )
    if bad.any():
        k = int(np.flatnonzero(bad.to_numpy())[0])
        # pandas skipped blank lines, so re-scan to report the true line
        _scan_for_error(text)
        raise ParseError(k + 2, "invalid row")

    df["volume"] = df["volume"].astype(np.int64)
    df = df[df["lane_type"] == LaneType.GENERAL.value]
    if spec is not None:
        df = df[df["detector_id"].isin(spec.detector_ids)]
    df = df.sort_values(["detector_id", "timestamp", "lane_id"], kind="stable").reset_index(drop=True)
    return df


def records_frame(records):
    """Frame view of an iterable of RawRecord (HOV lanes dropped)."""
    rows = [
        (r.timestamp, r.detector_id, r.lane_id, LaneType(r.lane_type).value, r.volume, r.speed, r.occupancy)
        for r in records
        if LaneType(r.lane_type) is LaneType.GENERAL
    ]
    df = pd.DataFrame(rows, columns=list(RAW_HEADER))
    return df.astype({"timestamp": np.int64, "lane_id": np.int64, "volume": np.int64,
                      "speed": np.float64, "occupancy": np.float64})


def write_raw_csv(df, path):
    compression = "gzip" if str(path).endswith(".gz") else None
    out = df.loc[:, list(RAW_HEADER)]
    if compression:
        # fixed mtime so repeated runs are byte-identical
        out.to_csv(path, index=False, float_format="%.6g",
                   compression={"method": "gzip", "mtime": 0})
    else:
        out.to_csv(path, index=False, float_format="%.6g")


# -- lane combination --------------------------------------------------------

def combine_lanes_per_tick(records):
    """Combine per-lane records of one segment at one timestamp.

    Volume is summed exactly; speed and occupancy are volume-weighted and
    reported as missing when the summed volume is zero.
    """
    records = list(records)
    if not records:
        raise IngestError("no records to combine")
    ts = records[0].timestamp
    if any(r.timestamp != ts for r in records):
        raise IngestError("records span several timestamps")
    vol = sum(r.volume for r in records)
    if vol == 0:
        return SegmentTick(ts, 0, None, None)
    speed = sum(r.speed * r.volume for r in records) / vol
    occ = sum(r.occupancy * r.volume for r in records) / vol
    return SegmentTick(ts, vol, speed, occ)


def combine_lanes(df, detector_ids):
    """Columnar lane combination for one segment.

    A tick exists only when every detector of the segment reported at that
    timestamp. Returns a frame indexed by timestamp with ``volume``,
    ``speed`` and ``occupancy`` (NaN when volume is zero).
    """
    ids = list(detector_ids)
    sub = df[df["detector_id"].isin(ids)]
    if sub.empty:
        return pd.DataFrame(columns=["volume", "speed", "occupancy"],
                            index=pd.Index([], dtype=np.int64, name="timestamp"))
    vol = sub["volume"].to_numpy(np.int64)
    tmp = pd.DataFrame({
        "timestamp": sub["timestamp"].to_numpy(),
        "detector_id": sub["detector_id"].to_numpy(),
        "volume": vol,
        "vq": sub["speed"].to_numpy() * vol,
        "oq": sub["occupancy"].to_numpy() * vol,
    })
    g = tmp.groupby("timestamp", sort=True)
    agg = g.agg(volume=("volume", "sum"), vq=("vq", "sum"), oq=("oq", "sum"),
                ndet=("detector_id", "nunique"))
    agg = agg[agg["ndet"] == len(ids)]
    v = agg["volume"].to_numpy(np.int64)
    with np.errstate(invalid="ignore", divide="ignore"):
        speed = np.where(v > 0, agg["vq"].to_numpy() / v, np.nan)
        occ = np.where(v > 0, agg["oq"].to_numpy() / v, np.nan)
    return pd.DataFrame({"volume": v, "speed": speed, "occupancy": occ},
                        index=agg.index.astype(np.int64))


# -- interval aggregation ----------------------------------------------------

def _validity(n_ticks, n_missing_speed, require_speed):
    if n_ticks < TICKS_PER_INTERVAL:
        return f"incomplete ({n_ticks}/{TICKS_PER_INTERVAL} ticks)"
    if require_speed and n_missing_speed > MAX_MISSING_SPEED:
        return f"speed missing on {n_missing_speed} ticks"
    return None


@dataclass
class AggregationResult:
    valid: list
    invalid: list  # (interval_start, reason)


def aggregate_to_intervals(ticks, segment_role="upstream", require_speed=None):
    """Group sorted SegmentTicks into complete 15-minute IntervalSeries.

    Intervals with fewer than 45 ticks, or (for mainline segments) more than
    9 missing-speed ticks, are returned in ``invalid`` with a reason.
    """
    if require_speed is None:
        require_speed = segment_role in ("upstream", "downstream")
    groups = {}
    for t in ticks:
        groups.setdefault(t.timestamp - t.timestamp % INTERVAL_SECONDS, []).append(t)
    result = AggregationResult([], [])
    for start in sorted(groups):
        members = groups[start]
        missing = sum(1 for t in members if t.speed is None)
        reason = _validity(len(members), missing, require_speed)
        if reason:
            result.invalid.append((start, reason))
        else:
            result.valid.append(IntervalSeries(start, tuple(members), segment_role))
    return result


@dataclass
class IntervalArrays:
    """Columnar 15-minute view of one segment."""

    interval_start: np.ndarray  # (k,)
    volume: np.ndarray  # (k, 45), NaN where the tick is absent
    speed: np.ndarray
    occupancy: np.ndarray
    valid: np.ndarray  # (k,) bool
    reasons: list

    @property
    def flow_rate(self):
        return 4.0 * np.nansum(self.volume, axis=1)

    def as_dict(self, mask=None):
        sl = slice(None) if mask is None else mask
        return {
            "volume": self.volume[sl],
            "speed": self.speed[sl],
            "occupancy": self.occupancy[sl],
            "flow_rate": self.flow_rate[sl],
        }


def interval_arrays(tick_frame, require_speed=True):
    ts = tick_frame.index.to_numpy(np.int64)
    starts = ts - ts % INTERVAL_SECONDS
    uniq, inv = np.unique(starts, return_inverse=True)
    pos = (ts % INTERVAL_SECONDS) // TICK_SECONDS
    shape = (len(uniq), TICKS_PER_INTERVAL)
    vol = np.full(shape, np.nan)
    spd = np.full(shape, np.nan)
    occ = np.full(shape, np.nan)
    vol[inv, pos] = tick_frame["volume"].to_numpy(np.float64)
    spd[inv, pos] = tick_frame["speed"].to_numpy(np.float64)
    occ[inv, pos] = tick_frame["occupancy"].to_numpy(np.float64)
    present = ~np.isnan(vol)
    n_ticks = present.sum(axis=1)
    n_missing = (present & np.isnan(spd)).sum(axis=1)
    reasons = [_validity(int(a), int(b), require_speed) for a, b in zip(n_ticks, n_missing)]
    valid = np.array([r is None for r in reasons], dtype=bool)
    return IntervalArrays(uniq, vol, spd, occ, valid, reasons)


def segment_intervals(df, location, role):
    ids = location.detectors(role)
    if not ids:
        return None
    ticks = combine_lanes(df, ids)
    return interval_arrays(ticks, require_speed=role in ("upstream", "downstream"))


def build_dataset(df, spec, utc_offset=-7.0):
    """Assemble the per-location feature table for a corridor.

    Returns ``(features, report)``: the feature table (columns
    ``stats.TABLE_COLUMNS``, one row per location and interval where both
    mainline intervals are valid) and the validity report
    (``location_id, interval_start, reason``). HOV-lane rows are ignored.
    """
    if "lane_type" in df.columns:
        df = df[df["lane_type"].astype(str).str.lower() == LaneType.GENERAL.value]
    tables = []
    report = []
    for loc in spec.locations:
        segs = {role: segment_intervals(df, loc, role) for role in ROLES}
        up, down = segs["upstream"], segs["downstream"]
        for role, seg in segs.items():
            if seg is None:
                continue
            for start, reason in zip(seg.interval_start, seg.reasons):
                if reason:
                    report.append((loc.location_id, int(start), f"{role}: {reason}"))
        up_ok = up.interval_start[up.valid]
        down_ok = down.interval_start[down.valid]
        common = np.intersect1d(up_ok, down_ok)
        for role, other in (("upstream", down_ok), ("downstream", up_ok)):
            seg_all = segs[role].interval_start
            for start in np.setdiff1d(other, seg_all):
                report.append((loc.location_id, int(start), f"{role}: missing"))
        if common.size == 0:
            raise IngestError(f"location {loc.location_id!r} has no aligned valid intervals")
        up_rows = np.searchsorted(up.interval_start, common)
        down_rows = np.searchsorted(down.interval_start, common)
        X = stats.featurize_arrays(common, up.as_dict(up_rows), down.as_dict(down_rows), utc_offset)
        table = pd.DataFrame(X, columns=list(stats.FEATURE_NAMES))
        table.insert(0, "interval_start", common.astype(np.int64))
        table.insert(0, "location_id", loc.location_id)
        for role, col in (("on_ramp", "on_flow"), ("off_ramp", "off_flow")):
            seg = segs[role]
            labels = np.full(common.size, np.nan)
            if seg is not None:
                ok_starts = seg.interval_start[seg.valid]
                ok_flow = seg.flow_rate[seg.valid]
                idx = np.searchsorted(ok_starts, common)
                idx_c = np.minimum(idx, max(ok_starts.size - 1, 0))
                hit = (ok_starts.size > 0) & (ok_starts[idx_c] == common) if ok_starts.size else np.zeros(common.size, bool)
                labels[hit] = ok_flow[idx_c[hit]]
            table[col] = labels
        tables.append(table)
        log.debug("location %s: %d rows", loc.location_id, len(table))
    features = pd.concat(tables, ignore_index=True)
    rep = pd.DataFrame(report, columns=["location_id", "interval_start", "reason"])
    rep = rep.sort_values(["location_id", "interval_start", "reason"], kind="stable").reset_index(drop=True)
    return features, rep
