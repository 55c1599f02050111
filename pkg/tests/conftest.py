import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rampflow import ingest, synth

settings.register_profile(
    "rampflow", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("rampflow")


def build_table(cfg):
    corridor = synth.generate_corridor(cfg)
    table, report = ingest.build_dataset(corridor.raw, corridor.spec, cfg.utc_offset)
    return corridor, table, report


@pytest.fixture(scope="session")
def source_corridor():
    return build_table(synth.SynthConfig(seed=11, corridor_id="S", days=3))


@pytest.fixture(scope="session")
def target_corridor():
    cfg = synth.SynthConfig(seed=12, corridor_id="T", days=3, demand_scale=1.25,
                            peak_shift_hours=1.0, emit_ramp_detectors=False)
    return build_table(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


# acceptance criteria report: test_acceptance records (number, title, verdict, detail)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, verdict, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"{verdict} {num:>2}. {title}: {detail}")
