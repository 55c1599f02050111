"""Deterministic synthetic freeway corridors with ground-truth ramp flows.

Each location is an upstream station, an on-ramp, an off-ramp and a
downstream station. Mainline demand follows a double-peak daily profile and
propagates down the corridor (``down = up + on - off``). Each ramp carries
a fixed share of the local demand but leans towards the morning or evening
peak by its own weight, so locations differ in timing as well as level.
Counts are drawn per 20-s tick, split across lanes, and converted to
occupancy and speed with a simple monotone fundamental-diagram map.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from rampflow._seeding import sub_seed
from rampflow.ingest import (
    INTERVAL_SECONDS,
    RAW_HEADER,
    TICK_SECONDS,
    CorridorSpec,
    LocationSpec,
    write_raw_csv,
)

log = logging.getLogger(__name__)

TICKS_PER_DAY = 86400 // TICK_SECONDS
_DEFAULT_ON = (0.08, 0.15, 0.22, 0.12, 0.18, 0.10, 0.25, 0.06, 0.20, 0.14)
_DEFAULT_OFF = (0.18, 0.07, 0.12, 0.22, 0.09, 0.16, 0.05, 0.20, 0.11, 0.13)
# share of a ramp's peak traffic that falls in the morning peak
_DEFAULT_ON_AM = (0.9, 0.2, 0.6, 0.05, 0.75, 0.35, 0.95, 0.1, 0.5, 0.8)
_DEFAULT_OFF_AM = (0.1, 0.85, 0.3, 0.7, 0.2, 0.9, 0.45, 0.6, 0.05, 0.4)
# mainline general-purpose lanes (upstream, downstream) per location: a
# saturated pair, a lane drop, a lane add and a free-flowing pair
_DEFAULT_LANES = ((3, 2), (5, 3), (3, 6), (6, 6))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    corridor_id: str = "C"
    days: int = 7
    start_date: str = "2019-07-31"  # local calendar date of the first day
    utc_offset: float = -7.0
    locations: int = 4
    base_demand: float = 3600.0  # veh/h entering the first location at the daytime plateau
    night_level: float = 0.25
    am_peak: float = 0.55
    pm_peak: float = 0.7
    am_peak_hour: float = 7.5
    pm_peak_hour: float = 17.0
    peak_width_hours: float = 1.2
    weekend_factor: float = 0.75
    on_fractions: tuple = ()
    off_fractions: tuple = ()
    on_am_weights: tuple = ()
    off_am_weights: tuple = ()
    ramp_peak_gain: float = 1.5  # ramp peaks relative to the mainline peaks
    noise_std: float = 1.0  # veh per 20-s tick
    demand_scale: float = 1.0
    peak_shift_hours: float = 0.0
    free_flow_speed: float = 65.0
    critical_occupancy: float = 15.0
    general_lanes: tuple = ()
    lane_capacity: float = 1900.0  # veh/h/lane
    hov_lanes: int = 1
    hov_share: float = 0.08
    vehicle_length_ft: float = 22.0
    emit_ramp_detectors: bool = True

    def __post_init__(self):
        if self.base_demand <= 0 or self.demand_scale <= 0:
            raise ValueError("demand must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.days < 1 or self.locations < 1:
            raise ValueError("days and locations must be >= 1")
        if any(n < 1 for pair in self.lane_counts() for n in pair):
            raise ValueError("general_lanes must be >= 1")
        if self.lane_capacity <= 0:
            raise ValueError("lane_capacity must be positive")
        for f in self.ramp_fractions()[0] + self.ramp_fractions()[1]:
            if not 0 < f < 1:
                raise ValueError("ramp fractions must lie in (0, 1)")
        for w in self.ramp_am_weights()[0] + self.ramp_am_weights()[1]:
            if not 0 <= w <= 1:
                raise ValueError("ramp AM weights must lie in [0, 1]")
        if self.ramp_peak_gain < 0:
            raise ValueError("ramp_peak_gain must be non-negative")

    def ramp_fractions(self):
        on = tuple(self.on_fractions) or tuple(_DEFAULT_ON[i % len(_DEFAULT_ON)] for i in range(self.locations))
        off = tuple(self.off_fractions) or tuple(_DEFAULT_OFF[i % len(_DEFAULT_OFF)] for i in range(self.locations))
        if len(on) != self.locations or len(off) != self.locations:
            raise ValueError("need one on/off fraction per location")
        return on, off

    def lane_counts(self):
        """``(upstream, downstream)`` general lanes for every location."""
        lanes = self.general_lanes
        if isinstance(lanes, int):
            return ((lanes, lanes),) * self.locations
        lanes = tuple(lanes) or tuple(_DEFAULT_LANES[i % len(_DEFAULT_LANES)] for i in range(self.locations))
        if len(lanes) != self.locations:
            raise ValueError("need one lane entry per location")
        return tuple((x, x) if isinstance(x, int) else (int(x[0]), int(x[1])) for x in lanes)

    def ramp_am_weights(self):
        on = tuple(self.on_am_weights) or tuple(_DEFAULT_ON_AM[i % len(_DEFAULT_ON_AM)] for i in range(self.locations))
        off = tuple(self.off_am_weights) or tuple(_DEFAULT_OFF_AM[i % len(_DEFAULT_OFF_AM)] for i in range(self.locations))
        if len(on) != self.locations or len(off) != self.locations:
            raise ValueError("need one AM weight per location")
        return on, off

    @property
    def start_epoch(self):
        local = datetime.strptime(self.start_date, "%Y-%m-%d").replace(tzinfo=timezone.utc)
        return int(local.timestamp() - round(self.utc_offset * 3600))

    def location_ids(self):
        return [f"{self.corridor_id}{k + 1}" for k in range(self.locations)]

    def to_dict(self):
        d = asdict(self)
        d["on_fractions"] = list(self.on_fractions)
        d["off_fractions"] = list(self.off_fractions)
        d["on_am_weights"] = list(self.on_am_weights)
        d["off_am_weights"] = list(self.off_am_weights)
        if not isinstance(self.general_lanes, int):
            d["general_lanes"] = [x if isinstance(x, int) else list(x) for x in self.general_lanes]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        shift = d.pop("domain_shift", None) or {}
        fd = d.pop("fundamental_diagram", None) or {}
        d.update({k: v for k, v in shift.items() if k in ("demand_scale", "peak_shift_hours")})
        d.update({k: v for k, v in fd.items()
                  if k in ("free_flow_speed", "critical_occupancy", "lane_capacity")})
        for k in ("on_fractions", "off_fractions", "on_am_weights", "off_am_weights", "general_lanes"):
            if k in d and not isinstance(d[k], int):
                d[k] = tuple(x if isinstance(x, (int, float)) else tuple(x) for x in d[k])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


def daily_profile(hour, cfg, am_weight=None):
    """Demand multiplier at local clock ``hour`` (array ok), periodic in 24 h.

    With ``am_weight`` the profile is a ramp's: the two peaks are scaled by
    ``ramp_peak_gain`` and split ``am_weight : 1 - am_weight``.
    """
    h = (np.asarray(hour, dtype=np.float64) - cfg.peak_shift_hours) % 24.0
    plateau = np.sin(np.pi * (h - 3.0) / 24.0) ** 2
    prof = cfg.night_level + (1.0 - cfg.night_level) * plateau
    am, pm = cfg.am_peak, cfg.pm_peak
    if am_weight is not None:
        total = cfg.ramp_peak_gain * (am + pm)
        am, pm = total * am_weight, total * (1.0 - am_weight)
    for amp, centre in ((am, cfg.am_peak_hour), (pm, cfg.pm_peak_hour)):
        # wrap the distance so the profile stays 24-h periodic
        d = (h - centre + 12.0) % 24.0 - 12.0
        prof = prof + amp * np.exp(-0.5 * (d / cfg.peak_width_hours) ** 2)
    return prof


def _stochastic_round(x, rng):
    x = np.maximum(x, 0.0)
    base = np.floor(x)
    return (base + (rng.random(x.shape) < (x - base))).astype(np.int64)


def expected_occupancy(lane_rate, cfg):
    """Occupancy (%) of a lane carrying ``lane_rate`` veh/h, linear in load.

    The critical occupancy is reached at 75 % of lane capacity.
    """
    load = np.asarray(lane_rate, dtype=np.float64) / cfg.lane_capacity
    return cfg.critical_occupancy * load / 0.75


def segment_speed(lane_rate, cfg):
    """Mean speed (mph) at an expected per-lane flow (veh/h/lane).

    Flat at free flow up to the critical occupancy, then falling towards
    30 % of free flow, reached at 1.25x lane capacity.
    """
    occ = expected_occupancy(lane_rate, cfg)
    crit = cfg.critical_occupancy
    x = np.clip((occ - crit) / (crit * 0.5 / 0.75), 0.0, 1.0)
    return cfg.free_flow_speed * (1.0 - 0.7 * x ** 1.5)


def _lane_records(ts, det, counts, lane_ids, lane_type, cfg, rng, speed=None):
    """Split segment counts over lanes and emit record columns.

    ``speed`` is the segment's expected speed per tick; free flow when None.
    """
    k = len(lane_ids)
    shares = np.linspace(1.2, 0.8, k)
    shares = shares / shares.sum()
    per_lane = rng.multinomial(counts, shares) if k > 1 else counts[:, None]
    if speed is None:
        speed = np.full(ts.size, cfg.free_flow_speed)
    cols = {c: [] for c in RAW_HEADER}
    for j, lane in enumerate(lane_ids):
        v = per_lane[:, j]
        spd = np.clip(speed + rng.normal(0.0, 1.0, ts.size), 1.0, cfg.free_flow_speed)
        # occupancy from density = flow / speed
        occ = np.clip(100.0 * (v * 180.0 / spd) * cfg.vehicle_length_ft / 5280.0, 0.0, 100.0)
        empty = v == 0
        occ = np.where(empty, 0.0, np.round(occ, 2))
        spd = np.where(empty, 0.0, np.round(spd, 1))
        cols["timestamp"].append(ts)
        cols["detector_id"].append(np.full(ts.size, det, dtype=object))
        cols["lane_id"].append(np.full(ts.size, lane, dtype=np.int64))
        cols["lane_type"].append(np.full(ts.size, lane_type, dtype=object))
        cols["volume"].append(v.astype(np.int64))
        cols["speed"].append(spd)
        cols["occupancy"].append(occ)
    return cols


def corridor_spec(cfg):
    locs = []
    for lid in cfg.location_ids():
        ramps = cfg.emit_ramp_detectors
        locs.append(LocationSpec(
            location_id=lid,
            upstream=(f"{lid}-UP",),
            downstream=(f"{lid}-DN",),
            on_ramp=(f"{lid}-ON",) if ramps else (),
            off_ramp=(f"{lid}-OFF",) if ramps else (),
        ))
    return CorridorSpec(cfg.corridor_id, tuple(locs))


@dataclass
class SynthCorridor:
    config: SynthConfig
    raw: pd.DataFrame
    truth: pd.DataFrame
    spec: CorridorSpec
    # tick-level counts per location: {"up","on","off","down"} -> (days*4320,)
    ticks: dict = field(repr=False, default_factory=dict)


def generate_corridor(cfg):
    """Generate raw detector records and ground-truth ramp flows."""
    on_f, off_f = cfg.ramp_fractions()
    on_am, off_am = cfg.ramp_am_weights()
    start = cfg.start_epoch
    lanes = cfg.lane_counts()
    chunks = []
    truth = []
    ticks = {lid: {k: [] for k in ("up", "on", "off", "down")} for lid in cfg.location_ids()}
    for day in range(cfg.days):
        ts = start + day * 86400 + TICK_SECONDS * np.arange(TICKS_PER_DAY, dtype=np.int64)
        local = ts + int(round(cfg.utc_offset * 3600))
        hour = (local % 86400) / 3600.0
        dow = (local // 86400 + 4) % 7  # 0 = Sunday
        weekend = np.where((dow == 0) | (dow == 6), cfg.weekend_factor, 1.0)
        scale = cfg.base_demand * cfg.demand_scale * weekend / 180.0  # veh per tick
        # expected mainline flow entering each location, carried down the corridor
        mean_tick = scale * daily_profile(hour, cfg)
        for k, lid in enumerate(cfg.location_ids()):
            rng = np.random.default_rng(sub_seed(cfg.seed, cfg.corridor_id, day, k))
            # ramp demand scales with the corridor's daytime level at this point
            level = scale * float(np.prod([1.0 + a - b for a, b in zip(on_f[:k], off_f[:k])]))
            on_mean = on_f[k] * level * daily_profile(hour, cfg, on_am[k])
            off_mean = np.minimum(off_f[k] * level * daily_profile(hour, cfg, off_am[k]),
                                  0.9 * (mean_tick + on_mean))
            up = _stochastic_round(mean_tick + rng.normal(0.0, cfg.noise_std, ts.size), rng)
            on = _stochastic_round(on_mean + rng.normal(0.0, 0.5 * cfg.noise_std, ts.size), rng)
            off = _stochastic_round(off_mean + rng.normal(0.0, 0.5 * cfg.noise_std, ts.size), rng)
            off = np.minimum(off, up + on)
            down = up + on - off
            if cfg.noise_std > 0:
                down = _stochastic_round(down + rng.normal(0.0, cfg.noise_std, ts.size), rng)
            for name, arr in (("up", up), ("on", on), ("off", off), ("down", down)):
                ticks[lid][name].append(arr)

            down_mean = mean_tick + on_mean - off_mean
            segs = [(f"{lid}-UP", up, mean_tick, lanes[k][0]), (f"{lid}-DN", down, down_mean, lanes[k][1])]
            if cfg.emit_ramp_detectors:
                segs += [(f"{lid}-ON", on, None, 1), (f"{lid}-OFF", off, None, 1)]
            for det, counts, expected, n_lanes in segs:
                if expected is not None:
                    lane_ids = list(range(1, n_lanes + 1))
                    hov_ids = list(range(n_lanes + 1, n_lanes + cfg.hov_lanes + 1))
                    speed = segment_speed(expected * 180.0 / n_lanes, cfg)
                    chunks.append(_lane_records(ts, det, counts, lane_ids, "general", cfg, rng, speed))
                    if hov_ids:
                        hov = _stochastic_round(cfg.hov_share * expected, rng)
                        chunks.append(_lane_records(ts, det, hov, hov_ids, "hov", cfg, rng))
                else:
                    chunks.append(_lane_records(ts, det, counts, [1], "general", cfg, rng))

            mean_tick = down_mean
            starts = ts[::INTERVAL_SECONDS // TICK_SECONDS]
            per = INTERVAL_SECONDS // TICK_SECONDS
            truth.append(pd.DataFrame({
                "location_id": lid,
                "interval_start": starts,
                "on_flow": 4.0 * on.reshape(-1, per).sum(axis=1),
                "off_flow": 4.0 * off.reshape(-1, per).sum(axis=1),
            }))

    raw = pd.DataFrame({
        c: np.concatenate([a for ch in chunks for a in ch[c]]) for c in RAW_HEADER
    })
    raw = raw.sort_values(["timestamp", "detector_id", "lane_id"], kind="stable").reset_index(drop=True)
    truth = pd.concat(truth, ignore_index=True)
    truth = truth.sort_values(["location_id", "interval_start"], kind="stable").reset_index(drop=True)
    tick_arrays = {lid: {k: np.concatenate(v) for k, v in d.items()} for lid, d in ticks.items()}
    return SynthCorridor(cfg, raw, truth, corridor_spec(cfg), tick_arrays)


def write_corridor(corridor, out_dir):
    """Write ``raw.csv.gz``, ``truth.csv`` and ``corridor.json`` to ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    write_raw_csv(corridor.raw, os.path.join(out_dir, "raw.csv.gz"))
    corridor.truth.to_csv(os.path.join(out_dir, "truth.csv"), index=False, float_format="%.17g")
    corridor.spec.dump(os.path.join(out_dir, "corridor.json"))
    with open(os.path.join(out_dir, "synth_config.json"), "w") as fh:
        json.dump(corridor.config.to_dict(), fh, indent=2)
        fh.write("\n")


def load_config(path, **overrides):
    with open(path) as fh:
        cfg = SynthConfig.from_dict(json.load(fh))
    return replace(cfg, **overrides) if overrides else cfg
