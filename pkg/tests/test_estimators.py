import math

import pytest
from hypothesis import assume, given, settings, strategies as st

from airtime.estimators import (
    F_TABLE,
    SS_F_54,
    SpParams,
    SsParams,
    held,
    sp_estimate,
    ss_estimate,
    total_estimate,
)
from airtime.ledger import LinkQuality, TimeLedger, WindowStats
from oracles import sp_bruteforce, ss_bruteforce


def ws(idle, m, bits, tx, bo, links=()):
    other = m - idle - tx - bo
    return WindowStats(0, m, TimeLedger(tx, bo, other, idle), tx_bits=bits, links=links)


def test_sp_worked_example():
    # I=100 ms, M=200 ms, 2e6 bits over 80 ms busy, p=0.8
    assert sp_estimate(ws(100_000, 200_000, 2_000_000, 60_000, 20_000), SpParams(0.8)) == pytest.approx(10e6)


def test_sp_zero_idle():
    assert sp_estimate(ws(0, 200_000, 2_000_000, 150_000, 50_000)) == 0.0


def test_sp_idle_only_window_has_no_estimate():
    assert sp_estimate(ws(200_000, 200_000, 0, 0, 0)) is None


def test_ss_worked_example_one_link():
    v = ss_estimate(100_000, 200_000, [LinkQuality("l", 54e6, 1.2, 10)], SsParams(SS_F_54))
    assert v == pytest.approx(10e6)


def test_ss_worked_example_two_links():
    links = [LinkQuality("a", 54e6, 1.0, 10), LinkQuality("b", 24e6, 1.5, 10)]
    v = ss_estimate(100_000, 200_000, links, SsParams(0.444))
    assert v == pytest.approx(0.5 / (1 / 54e6 + 1.5 / 24e6) * 0.444)
    assert v / 1e6 == pytest.approx(2.74, abs=0.005)


def test_ss_single_attempt_identity():
    v = ss_estimate(50_000, 200_000, [LinkQuality("l", 54e6, 1.0, 3)], SsParams(SS_F_54))
    assert v == 0.25 * 54e6 * SS_F_54


def test_ss_missing_retry_rate():
    links = [LinkQuality("a", 54e6, 1.0, 1), LinkQuality("b", 54e6, None, 0)]
    assert ss_estimate(100_000, 200_000, links) is None


def test_ss_needs_links():
    with pytest.raises(ValueError):
        ss_estimate(100_000, 200_000, [])


def test_p_for_hops():
    assert SpParams.for_hops(1).p == 0.8
    assert SpParams.for_hops(2).p == 0.4
    with pytest.raises(ValueError):
        SpParams.for_hops(0)


def test_param_ranges():
    with pytest.raises(ValueError):
        SpParams(0.0)
    with pytest.raises(ValueError):
        SsParams(1.5)


def test_f_table_shape():
    assert F_TABLE[54_000_000] == SS_F_54
    rates = sorted(F_TABLE)
    vals = [F_TABLE[r] for r in rates]
    assert vals == sorted(vals, reverse=True)  # slower rates lose less to overhead
    assert SsParams.for_rate(24e6).f == F_TABLE[24_000_000]


@pytest.mark.slow
def test_f_table_matches_fresh_calibration():
    from airtime.network import calibrate_f_table

    fresh = calibrate_f_table([6_000_000, 24_000_000, 54_000_000], duration_s=10.0)
    for rate, f in fresh.items():
        assert F_TABLE[rate] == pytest.approx(f, abs=1e-4)


@pytest.mark.parametrize(
    "measured,add,total", [(5e6, 10e6, 15e6), (5e6, 0.0, 5e6), (0.0, 7e6, 7e6)]
)
def test_total(measured, add, total):
    m = 200_000
    bits = int(measured * m / 1e6)
    e = total_estimate(ws(m, m, bits, 0, 0), add, "SS")
    assert e.total_bps == pytest.approx(total)


def test_held_keeps_last_value():
    assert held([None, 1.0, None, None, 3.0, None]) == [0.0, 1.0, 1.0, 1.0, 3.0, 3.0]


window = st.integers(1_000, 1_000_000)


@given(m=window, data=st.data())
@settings(max_examples=300)
def test_sp_monotone_in_idle(m, data):
    tx = data.draw(st.integers(1, m // 2))
    bits = data.draw(st.integers(0, 10**8))
    i1 = data.draw(st.integers(0, m - tx))
    i2 = data.draw(st.integers(i1, m - tx))
    a = sp_estimate(ws(i1, m, bits, tx, 0))
    b = sp_estimate(ws(i2, m, bits, tx, 0))
    assert a <= b


@given(
    idle=st.integers(0, 200_000),
    q=st.floats(1e6, 54e6),
    r=st.floats(1.0, 7.0),
    k=st.floats(0.1, 10.0),
)
@settings(max_examples=300)
def test_ss_homogeneous_in_rate(idle, q, r, k):
    base = ss_estimate(idle, 200_000, [LinkQuality("l", q, r, 1)])
    scaled = ss_estimate(idle, 200_000, [LinkQuality("l", q * k, r, 1)])
    assert scaled == pytest.approx(k * base, rel=1e-9, abs=1e-6)


@given(
    idle=st.integers(0, 200_000),
    links=st.lists(st.tuples(st.floats(1e6, 54e6), st.floats(1.0, 7.0)), min_size=1, max_size=4),
    extra=st.tuples(st.floats(1e6, 54e6), st.floats(1.0, 7.0)),
)
@settings(max_examples=200)
def test_ss_extra_link_never_increases(idle, links, extra):
    lq = [LinkQuality(str(i), q, r, 1) for i, (q, r) in enumerate(links)]
    more = lq + [LinkQuality("x", extra[0], extra[1], 1)]
    assert ss_estimate(idle, 200_000, more) <= ss_estimate(idle, 200_000, lq) * (1 + 1e-12)


@given(
    m=window,
    bits=st.integers(0, 10**9),
    p=st.floats(0.01, 1.0),
    data=st.data(),
)
@settings(max_examples=300)
def test_sp_agrees_with_bruteforce(m, bits, p, data):
    tx = data.draw(st.integers(0, m))
    bo = data.draw(st.integers(0, m - tx))
    idle = data.draw(st.integers(0, m - tx - bo))
    got = sp_estimate(ws(idle, m, bits, tx, bo), SpParams(p))
    want = sp_bruteforce(idle, m, bits, tx, bo, p)
    if want is None:
        assert got is None
    else:
        assert math.isclose(got, want, rel_tol=1e-9, abs_tol=1e-6)
