import sys

import pytest

from ltev2x.config import RunConfig
from ltev2x.scenario import Participant, build_geometry, build_scenario


@pytest.fixture(scope="session")
def cfg():
    return RunConfig()


@pytest.fixture(scope="session")
def small_cfg():
    """Sparse, short run: about 44 users and half a second of traffic."""
    return RunConfig().replace(scenario={"density_per_km2": 150.0}, run={"horizon_s": 0.5, "warmup_s": 0.1})


@pytest.fixture(scope="session")
def geometry(cfg):
    return build_geometry(cfg.scenario)


@pytest.fixture(scope="session")
def default_scenario(cfg):
    return build_scenario(cfg, 1)


def near_site(cfg, extra_rx=((271.5, 250.0),), seed=1):
    """A vehicle (id 0) in front of sector 0 plus pedestrian receivers."""
    ps = [Participant(0, "vehicle", (271.5, 230.0), tx_power_dbm=cfg.radio.ue_tx_power_dbm)]
    ps += [Participant(i + 1, "vru", xy) for i, xy in enumerate(extra_rx)]
    return build_scenario(cfg, seed, participants=ps)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT_LINES", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda x: int(x.split()[1])):
            terminalreporter.write_line(line)
