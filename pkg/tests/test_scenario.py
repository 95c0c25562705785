import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from ltev2x._rng import substream
from ltev2x.config import ConfigError, RunConfig
from ltev2x.scenario import (
    Participant,
    ScenarioError,
    attach_to_sector,
    build_geometry,
    build_scenario,
    build_sectors,
    drop_participants,
    dump_scenario_csv,
    receiver_set,
    step_mobility,
)


def test_default_grid(geometry):
    assert geometry.width == pytest.approx(543.0)
    assert geometry.height == pytest.approx(543.0)
    assert len(geometry.buildings) == 15
    assert geometry.park is not None
    assert geometry.site_building is not None


def test_buildings_do_not_overlap(geometry):
    b = geometry.buildings
    for i in range(len(b)):
        for j in range(i + 1, len(b)):
            w = min(b[i, 2], b[j, 2]) - max(b[i, 0], b[j, 0])
            h = min(b[i, 3], b[j, 3]) - max(b[i, 1], b[j, 1])
            assert w <= 0 or h <= 0


def test_single_park_slot_has_no_buildings():
    cfg = RunConfig().replace(scenario={"rows": 1, "cols": 1, "park_row": 0, "park_col": 0,
                                        "site_row": 0, "site_col": 0})
    g = build_geometry(cfg.scenario)
    assert len(g.buildings) == 0
    assert g.street_area == g.area


@settings(max_examples=40, deadline=None)
@given(rows=st.integers(1, 6), cols=st.integers(1, 6), block=st.floats(10, 200), street=st.floats(5, 40))
def test_area_partition(rows, cols, block, street):
    cfg = RunConfig().replace(scenario={"rows": rows, "cols": cols, "block_m": block, "street_m": street,
                                        "park_row": 0, "park_col": 0, "site_row": rows - 1, "site_col": cols - 1})
    g = build_geometry(cfg.scenario)
    assert g.street_area + g.building_area == pytest.approx(g.area)
    assert len(g.buildings) == rows * cols - 1


def test_bad_dimensions_rejected():
    with pytest.raises(ConfigError):
        RunConfig().replace(scenario={"block_m": 0.0})


def test_drop_count_and_kinds(cfg, geometry):
    ps = drop_participants(geometry, 1000.0, 0.5, substream(1, "drop"))
    assert len(ps) == round(1000 * geometry.area / 1e6) == 295
    pos = np.array([p.position for p in ps])
    assert geometry.in_street(pos).all()
    for p in ps:
        limit = 50.0 if p.is_vehicle else 5.0
        assert p.speed_kmh <= limit + 1e-9
        assert (p.tx_power_dbm == 24.0) == p.is_vehicle
    n_veh = sum(p.is_vehicle for p in ps)
    assert 0.35 < n_veh / len(ps) < 0.65


def test_drop_edge_cases(geometry):
    assert drop_participants(geometry, 0.0, 0.5, substream(1, "drop")) == []
    with pytest.raises(ConfigError):
        drop_participants(geometry, -1.0, 0.5, substream(1, "drop"))
    with pytest.raises(ConfigError):
        drop_participants(geometry, 10.0, 1.5, substream(1, "drop"))


def test_drop_poisson_mode(geometry):
    counts = [len(drop_participants(geometry, 1000.0, 0.5, substream(s, "drop"), count_mode="poisson"))
              for s in range(30)]
    assert len(set(counts)) > 1
    assert abs(np.mean(counts) - 294.85) < 15


def _cell_street_area(geometry, x0, y0, x1, y1):
    a = (x1 - x0) * (y1 - y0)
    for bx0, by0, bx1, by1 in geometry.buildings:
        w = min(x1, bx1) - max(x0, bx0)
        h = min(y1, by1) - max(y0, by0)
        if w > 0 and h > 0:
            a -= w * h
    return a


def test_drop_uniform_over_streets(geometry):
    pts = np.concatenate([
        np.array([p.position for p in drop_participants(geometry, 1000.0, 0.5, substream(s, "drop"))])
        for s in range(40)
    ])
    assert len(pts) >= 10_000
    k = 8
    edges = np.linspace(0.0, geometry.width, k + 1)
    obs = np.zeros((k, k))
    exp = np.zeros((k, k))
    ix = np.clip(np.searchsorted(edges, pts[:, 0], side="right") - 1, 0, k - 1)
    iy = np.clip(np.searchsorted(edges, pts[:, 1], side="right") - 1, 0, k - 1)
    np.add.at(obs, (ix, iy), 1)
    for i in range(k):
        for j in range(k):
            exp[i, j] = _cell_street_area(geometry, edges[i], edges[j], edges[i + 1], edges[j + 1])
    exp = exp / exp.sum() * len(pts)
    mask = exp > 0
    assert obs[~mask].sum() == 0
    assert chisquare(obs[mask], exp[mask]).pvalue > 0.05


def test_empty_street_region_rejected(geometry):
    g = geometry
    full = type(g)(g.width, g.height, np.array([[0.0, 0.0, g.width, g.height]]), None, None, (0.0, 0.0), (), ())
    assert full.street_area == 0
    with pytest.raises(ScenarioError):
        drop_participants(full, 100.0, 0.5, substream(1, "drop"))


def test_attach_boresight_and_tie():
    sectors = [0, 1, 2]
    p = Participant(0, "vru", (0.0, 0.0))
    assert attach_to_sector(p, sectors, lambda k, pos: [-60.0, -80.0, -90.0][k]) == 0
    assert attach_to_sector(p, sectors, lambda k, pos: [-80.0, -70.0, -70.0][k]) == 1
    assert attach_to_sector(p, sectors, lambda k, pos: -70.0) == 0


def test_attachment_is_power_argmax(default_scenario):
    b = default_scenario.budget(0)
    serving = default_scenario.serving[0]
    assert (serving == np.argmax(b.dl_prb_rx_dbm, axis=1)).all()
    for p in default_scenario.participants:
        assert p.serving_sector == serving[p.id]


def test_attachment_invariant_to_common_power_scaling(cfg):
    a = build_scenario(cfg, 3)
    b = build_scenario(cfg.replace(radio={"sector_power_dbm_per_10mhz": 36.0}), 3)
    assert (a.serving == b.serving).all()


def test_attachment_invariant_to_order(default_scenario):
    sc = default_scenario
    b = sc.budget(0)
    order = np.random.default_rng(4).permutation(sc.n)
    for i in order:
        p = sc.participants[i]
        k = attach_to_sector(p, sc.sectors, lambda s, pos, i=i: b.dl_prb_rx_dbm[i, s])
        assert k == p.serving_sector


def test_receiver_set_boundary():
    tx = Participant(0, "vehicle", (0.0, 0.0))
    near = Participant(1, "vru", (199.9, 0.0))
    far = Participant(2, "vru", (200.1, 0.0))
    on = Participant(3, "vru", (0.0, 200.0))
    assert [p.id for p in receiver_set(tx, [tx, near, far, on], 200.0)] == [1, 3]
    assert receiver_set(tx, [tx], 200.0) == []
    with pytest.raises(ValueError):
        receiver_set(tx, [tx], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 543), st.floats(0, 543)), min_size=2, max_size=30))
def test_receiver_set_symmetric(points):
    ps = [Participant(i, "vru", xy) for i, xy in enumerate(points)]
    sets = {p.id: {q.id for q in receiver_set(p, ps, 200.0)} for p in ps}
    for a in sets:
        for b in sets[a]:
            assert a in sets[b]


def test_receiver_count_matches_geometry(default_scenario, geometry):
    sc = default_scenario
    rng = np.random.default_rng(0)
    grid = geometry.sample_street(40_000, rng)
    counts, expected = [], []
    for tx in range(sc.n):
        pos = sc.positions[0, tx]
        share = np.mean(np.hypot(*(grid - pos).T) <= 200.0)
        expected.append((sc.n - 1) * share)
        counts.append(len(sc.receivers(tx, 0)))
    assert np.mean(counts) == pytest.approx(np.mean(expected), rel=0.05)


def test_mobility_identity_and_speed(geometry):
    v = 50.0 / 3.6
    p = Participant(0, "vehicle", (30.0, 130.0), (v, 0.0))
    assert step_mobility([p], 0.0, geometry) == [p]
    (q,) = step_mobility([p], 1.0, geometry)
    assert q.position[0] - p.position[0] == pytest.approx(13.8889, abs=1e-3)
    assert q.position[1] == p.position[1]
    with pytest.raises(ValueError):
        step_mobility([p], -1.0, geometry)


def test_mobility_never_enters_buildings(geometry):
    ps = drop_participants(geometry, 1000.0, 1.0, substream(2, "drop"))[:20]
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        ps = step_mobility(ps, 0.1, geometry, rng)
        pos = np.array([p.position for p in ps])
        assert not geometry.in_building(pos).any()
    assert all(p.speed_kmh <= 50.0 + 1e-9 for p in ps)


def test_scenario_deterministic(cfg):
    a = build_scenario(cfg, 9)
    b = build_scenario(cfg, 9)
    assert a.participants == b.participants
    assert np.array_equal(a.serving, b.serving)
    assert np.array_equal(a.budget(0).shadowing_db, b.budget(0).shadowing_db)
    c = build_scenario(cfg, 10)
    assert a.participants != c.participants


def test_mobility_scenario_epochs():
    cfg = RunConfig().replace(scenario={"mobility": True, "density_per_km2": 100.0})
    sc = build_scenario(cfg, 1, duration_ms=1000)
    assert len(sc.budgets) == 11
    assert sc.epoch(250) == 2
    moved = np.hypot(*(sc.positions[-1] - sc.positions[0]).T)
    assert moved.max() <= 50 / 3.6 + 1e-6


def test_sectors(cfg, geometry):
    secs = build_sectors(geometry, cfg)
    assert [s.boresight_azimuth_deg for s in secs] == [30.0, 150.0, 270.0]
    assert all(s.site_position[2] == 27.0 for s in secs)
    assert all(s.tx_power_dbm == 46.0 for s in secs)


def test_dump_scenario(tmp_path, default_scenario):
    path = tmp_path / "scenario.csv"
    dump_scenario_csv(default_scenario, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["id", "kind", "x", "y", "sector"]
    assert len(rows) == default_scenario.n + 1
    assert {r[1] for r in rows[1:]} <= {"vehicle", "vru"}
    assert math.isfinite(float(rows[1][2]))
