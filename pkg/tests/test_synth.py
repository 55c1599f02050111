import json
from dataclasses import replace

import numpy as np
import pytest

from rampflow import ingest, synth
from rampflow.ingest import INTERVAL_SECONDS, TICK_SECONDS

PER = INTERVAL_SECONDS // TICK_SECONDS


def test_same_seed_same_corridor():
    cfg = synth.SynthConfig(seed=4, days=1, locations=2)
    a, b = synth.generate_corridor(cfg), synth.generate_corridor(cfg)
    assert a.raw.equals(b.raw) and a.truth.equals(b.truth)
    c = synth.generate_corridor(replace(cfg, seed=5))
    assert not a.truth.equals(c.truth)


def test_noiseless_conservation_per_interval():
    cfg = synth.SynthConfig(seed=1, days=2, noise_std=0.0)
    corridor = synth.generate_corridor(cfg)
    for lid, t in corridor.ticks.items():
        s = {k: v.reshape(-1, PER).sum(axis=1) for k, v in t.items()}
        np.testing.assert_array_equal(s["down"], s["up"] + s["on"] - s["off"])


def test_flows_nonnegative_and_integer():
    corridor = synth.generate_corridor(synth.SynthConfig(seed=2, days=1))
    raw = corridor.raw
    assert (raw.volume >= 0).all() and (raw.volume == raw.volume.round()).all()
    assert raw.occupancy.between(0, 100).all() and (raw.speed >= 0).all()
    assert (raw.timestamp % TICK_SECONDS == 0).all()


def test_demand_scale_raises_daily_flow():
    base = synth.SynthConfig(seed=3, days=7)
    a = synth.generate_corridor(base)
    b = synth.generate_corridor(replace(base, demand_scale=1.25))
    up_a = a.ticks["C1"]["up"].sum()
    up_b = b.ticks["C1"]["up"].sum()
    assert up_b / up_a == pytest.approx(1.25, rel=0.02)


def test_peak_shift_moves_peak_hour():
    cfg = synth.SynthConfig()
    hours = np.linspace(0, 24, 24 * 60, endpoint=False)
    base = synth.daily_profile(hours, cfg)
    shifted = synth.daily_profile(hours, replace(cfg, peak_shift_hours=1.0))
    pm = (hours > 12)
    assert hours[pm][np.argmax(shifted[pm])] - hours[pm][np.argmax(base[pm])] == pytest.approx(1.0, abs=0.05)


def test_speed_falls_with_load():
    cfg = synth.SynthConfig()
    rates = np.array([200.0, 1000.0, 1800.0, 2400.0])
    speeds = synth.segment_speed(rates, cfg)
    assert np.all(np.diff(speeds) <= 0)
    assert speeds[0] == pytest.approx(cfg.free_flow_speed)


def test_missing_ramp_detectors():
    cfg = synth.SynthConfig(seed=1, days=1, emit_ramp_detectors=False)
    corridor = synth.generate_corridor(cfg)
    assert not corridor.raw.detector_id.str.endswith(("-ON", "-OFF")).any()
    assert corridor.truth.on_flow.notna().all()
    assert all(not loc.on_ramp for loc in corridor.spec.locations)


def test_truth_matches_ingested_labels():
    cfg = synth.SynthConfig(seed=6, days=1)
    corridor = synth.generate_corridor(cfg)
    table, _ = ingest.build_dataset(corridor.raw, corridor.spec, cfg.utc_offset)
    m = table.merge(corridor.truth, on=["location_id", "interval_start"], suffixes=("", "_t"))
    np.testing.assert_array_equal(m.on_flow, m.on_flow_t)


def test_config_validation():
    with pytest.raises(ValueError):
        synth.SynthConfig(noise_std=-1)
    with pytest.raises(ValueError):
        synth.SynthConfig(on_fractions=(0.1,))
    with pytest.raises(ValueError):
        synth.SynthConfig(general_lanes=0)
    with pytest.raises(ValueError):
        synth.SynthConfig.from_dict({"bogus": 1})


def test_config_json_round_trip(tmp_path):
    cfg = synth.SynthConfig(seed=9, corridor_id="T", general_lanes=((2, 3),) * 4,
                            on_fractions=(0.1, 0.2, 0.1, 0.2))
    path = tmp_path / "c.json"
    path.write_text(json.dumps({**cfg.to_dict(), "domain_shift": {"demand_scale": 1.25}}))
    back = synth.load_config(path)
    assert back == replace(cfg, demand_scale=1.25)


def test_write_corridor(tmp_path):
    cfg = synth.SynthConfig(seed=1, days=1, locations=1)
    corridor = synth.generate_corridor(cfg)
    synth.write_corridor(corridor, tmp_path)
    for name in ("raw.csv.gz", "truth.csv", "corridor.json", "synth_config.json"):
        assert (tmp_path / name).exists()
    spec = ingest.CorridorSpec.load(tmp_path / "corridor.json")
    assert spec == corridor.spec
