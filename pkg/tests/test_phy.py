import math
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltev2x.config import PhyConfig
from ltev2x.phy import (
    CQI_EFFICIENCIES,
    bler,
    bler_scalar,
    build_transport_block,
    default_table,
    draw_block_error,
    make_mcs,
    mrc_combine,
    prbs_required,
    q_inverse,
    select_mcs_unicast,
    shannon_sinr_db,
    table_from_config,
)

TABLE = default_table()


def test_table_shape():
    assert len(TABLE) == 15
    effs = [e.efficiency_bits_per_re for e in TABLE]
    assert all(b > a for a, b in zip(effs, effs[1:]))
    for eff in (0.1523, 0.377, 0.877, 1.4766, 2.4063):
        assert TABLE.by_efficiency(eff).efficiency_bits_per_re == pytest.approx(eff, abs=1e-4)
    assert TABLE[1].efficiency_bits_per_re == CQI_EFFICIENCIES[0]
    with pytest.raises(KeyError):
        TABLE.by_efficiency(0.5)


def test_bler_shape():
    for e in TABLE:
        assert bler(e.threshold_db, e) == 0.5
        assert bler(e.threshold_db + 60, e) < 1e-12
        assert bler(e.threshold_db - 60, e) > 1 - 1e-12
        assert abs(bler(e.calibration_point_db(0.1), e) - 0.1) <= 1e-6
        assert abs(bler(shannon_sinr_db(e.efficiency_bits_per_re), e) - 0.1) <= 1e-6
    x = np.linspace(-20, 40, 200)
    assert (np.diff(bler(x, TABLE[7])) <= 0).all()


def test_q_inverse():
    assert q_inverse(0.5) == pytest.approx(0.0, abs=1e-12)
    assert q_inverse(0.1) == pytest.approx(1.2816, abs=1e-4)


@given(st.floats(-30, 50))
def test_bler_ordered_across_mcs(sinr):
    vals = [bler_scalar(sinr, e) for e in TABLE]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_select_mcs_examples():
    assert select_mcs_unicast(40.0, TABLE).index == 15
    assert select_mcs_unicast(-20.0, TABLE).index == 1
    for e in TABLE:
        assert select_mcs_unicast(e.calibration_point_db(0.1), TABLE).index == e.index


@given(st.floats(-30, 50))
def test_select_mcs_is_best_feasible(sinr):
    m = select_mcs_unicast(sinr, TABLE)
    feasible = [e for e in TABLE if bler_scalar(sinr, e) <= 0.1 * (1 + 1e-9)]
    if feasible:
        assert m == feasible[-1]
    else:
        assert m.index == 1


def test_transport_blocks():
    tb = build_transport_block(212)
    assert tb.total_bits == 1720 and tb.n_code_blocks == 1
    assert build_transport_block(0).code_blocks == (24,)
    big = build_transport_block(1000)
    assert big.n_code_blocks == 2
    assert big.total_bits == 8024 + 2 * 24
    with pytest.raises(ValueError):
        build_transport_block(-1)


@given(st.integers(0, 20_000))
def test_transport_block_invariants(payload):
    tb = build_transport_block(payload)
    assert tb.total_bits >= 8 * payload + 24
    assert max(tb.code_blocks) <= 6144
    assert max(tb.code_blocks) - min(tb.code_blocks) <= 1


def test_prbs_examples():
    tb = build_transport_block(212)
    assert prbs_required(tb, TABLE.by_efficiency(0.877)) == 17
    assert prbs_required(tb, TABLE.by_efficiency(0.1523)) == 95
    # a bare CRC fits one PRB except at the lowest efficiency (18.276 bits per PRB)
    assert prbs_required(build_transport_block(0), TABLE[1]) == 2
    assert all(prbs_required(build_transport_block(0), e) == 1 for e in TABLE if e.index > 1)
    # exact decimal boundary: 125 PRBs at 0.6016 carry exactly 9024 bits
    assert prbs_required(build_transport_block((9024 - 24 - 48) // 8), TABLE.by_efficiency(0.6016)) == 125
    assert tb.prbs_required_per_tti(TABLE.by_efficiency(0.877), [50, 10, 5]) == {50: 1, 10: 2, 5: 4}


@given(st.integers(0, 5000), st.integers(0, 5000), st.integers(1, 15), st.integers(1, 15))
def test_prbs_monotone(p1, p2, m1, m2):
    (p1, p2), (m1, m2) = sorted((p1, p2)), sorted((m1, m2))
    tb1, tb2 = build_transport_block(p1), build_transport_block(p2)
    assert prbs_required(tb1, TABLE[m1]) <= prbs_required(tb2, TABLE[m1])
    assert prbs_required(tb1, TABLE[m2]) <= prbs_required(tb1, TABLE[m1])


def test_block_error_draws():
    rng = np.random.default_rng(1)
    assert all(draw_block_error(0.0, rng) for _ in range(1000))
    assert not any(draw_block_error(1.0, rng) for _ in range(1000))
    a = [draw_block_error(0.3, np.random.default_rng(5)) for _ in range(3)]
    b = [draw_block_error(0.3, np.random.default_rng(5)) for _ in range(3)]
    assert a == b
    rng = np.random.default_rng(2)
    fails = sum(not draw_block_error(0.1, rng, n_code_blocks=2) for _ in range(50_000)) / 50_000
    assert fails == pytest.approx(1 - 0.9 ** 2, abs=0.006)
    with pytest.raises(ValueError):
        draw_block_error(1.5, rng)


def test_mrc_examples():
    assert mrc_combine([7.5]) == pytest.approx(7.5)
    assert mrc_combine([0.0, 0.0]) == pytest.approx(3.0103, abs=1e-4)
    assert mrc_combine([10.0, 0.0, -10.0]) == pytest.approx(10.453, abs=1e-3)
    with pytest.raises(ValueError):
        mrc_combine([])


@settings(max_examples=100)
@given(st.lists(st.floats(-30, 40), min_size=1, max_size=5), st.floats(-30, 40))
def test_mrc_properties(g, extra):
    base = mrc_combine(g)
    for p in list(permutations(g))[:6]:
        assert mrc_combine(list(p)) == pytest.approx(base, abs=1e-9)
    assert mrc_combine(g + [extra]) >= base


def test_table_override():
    phy = PhyConfig(mcs_table=[{"index": 1, "efficiency": 0.5, "threshold_db": 1.0, "slope_db": 2.0},
                               {"index": 2, "efficiency": 1.0}])
    t = table_from_config(phy)
    assert t[1].threshold_db == 1.0 and t[1].slope_db == 2.0
    assert t[2].calibration_point_db(0.1) == pytest.approx(shannon_sinr_db(1.0))


def test_make_mcs_threshold():
    e = make_mcs(1, 0.877)
    assert e.calibration_point_db() == pytest.approx(10 * math.log10(2 ** (0.877 / 0.6) - 1))
