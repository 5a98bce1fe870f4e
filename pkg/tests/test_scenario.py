import textwrap

import pytest
from hypothesis import given, settings, strategies as st

from airtime.engine import RngStream
from airtime.scenario import (
    CBR,
    VBR,
    FlowSpec,
    Saturating,
    TopologyError,
    TrafficSource,
    load_scenario,
    normalize,
    parse_topology,
    unparse,
    vbr_sigma,
)

VALID = [
    "g", "a", "w-g", "g-AP-g", "a-AP-w", "g-AP-g-dls", "a-AP-a-dls", "g X5", "g-AP-g X5",
    "g-AP-g X2.5 X1", "g-g", "g-w-a", "a-AP-a seed=3", "g-AP-a ch=6,40", "g-AP-g ch=1,6",
    "g-AP-g-dls X5 seed=7", "g seed=1 X5", "g  X5", "g-AP-g X5.0",
]

INVALID = {
    "": 0,
    "AP": 0,
    "g-AP": 2,
    "AP-g": 0,
    "g-AP-AP-g": 5,
    "g--g": 2,
    "g-x": 2,
    "g X": 2,
    "g Xabc": 2,
    "g X-5": 2,
    "g X0": 2,
    "g seed=": 2,
    "g ch=1,6": 2,
    "g ch=0": 2,
    "a ch=6": 2,
    "dls": 0,
    "g-dls": 2,
    "g-AP-a-dls": 7,
    "g-AP-w-dls": 7,
    "g seed=1 seed=2": 9,
    "w": 0,
    "w X5": 0,
    "g-": 2,
    "-g": 0,
    "g foo": 2,
}


def test_one_hop():
    t = parse_topology("g")
    (h,) = t.media_path
    assert (h.tx, h.rx, h.band, h.wireless) == ("src", "dst", "11g", True)
    assert t.cross_flows == ()


def test_two_hop_with_cross_traffic():
    t = parse_topology("g-AP-g X5")
    assert [h.tx for h in t.media_path] == ["src", "ap0"]
    assert {h.channel for h in t.media_path} == {1}
    (cf,) = t.cross_flows
    assert cf.rate_bps == 5e6 and cf.path[0].channel == 1
    assert t.same_channel_hops() == 2


def test_wired_egress_is_not_wireless():
    t = parse_topology("a-AP-w")
    assert [h.kind for h in t.media_path] == ["wireless", "wired"]
    assert t.same_channel_hops() == 1
    assert t.media_path[0].channel == 36


def test_dls_collapses_to_direct_hop():
    t = parse_topology("g-AP-g-dls")
    (h,) = t.media_path
    assert h.dls and (h.tx, h.rx) == ("src", "dst")
    assert t.listeners == (("ap0", 1),)


@pytest.mark.parametrize("spec", VALID)
def test_round_trip(spec):
    assert unparse(parse_topology(spec)) == normalize(spec)
    assert normalize(normalize(spec)) == normalize(spec)


@pytest.mark.parametrize("spec,pos", INVALID.items())
def test_rejections_carry_position(spec, pos):
    with pytest.raises(TopologyError) as ei:
        parse_topology(spec)
    assert ei.value.position == pos
    assert f"position {pos}" in str(ei.value)


hop = st.sampled_from(["g", "a", "w"])


@st.composite
def specs(draw):
    parts = [draw(st.sampled_from(["g", "a"]))]
    for _ in range(draw(st.integers(0, 3))):
        if draw(st.booleans()):
            parts.append("AP")
        parts.append(draw(hop))
    s = "-".join(parts)
    for r in draw(st.lists(st.integers(1, 20), max_size=2)):
        s += f" X{r}"
    if draw(st.booleans()):
        s += f" seed={draw(st.integers(0, 99))}"
    return s


@given(specs())
@settings(max_examples=200)
def test_generated_round_trip(spec):
    assert unparse(parse_topology(spec)) == normalize(spec)


def test_cbr_gap():
    src = TrafficSource(FlowSpec(CBR(4e6)))
    t0, size = src.next_datagram(0)
    t1, _ = src.next_datagram(t0)
    t2, _ = src.next_datagram(t1)
    assert (t0, t1 - t0, t2 - t1, size) == (0, 2632, 2632, 1316)


def test_cbr_gap_carries_remainder():
    src = TrafficSource(FlowSpec(CBR(3e6)))
    t = src.next_datagram(0)[0]
    for _ in range(3000):
        t = src.next_datagram(t)[0]
    assert t == 3000 * 1316 * 8 * 1_000_000 // 3_000_000


def test_rate_override_applies():
    src = TrafficSource(FlowSpec(CBR(4e6)))
    t0 = src.next_datagram(0)[0]
    t1 = src.next_datagram(t0, rate_override_bps=8e6)[0]
    assert t1 - t0 == 1316


def test_saturating_emits_now():
    src = TrafficSource(FlowSpec(Saturating()))
    assert src.next_datagram(123) == (123, 1316)


def test_vbr_source_mean_rate():
    src = TrafficSource(FlowSpec(VBR(4e6, 2.0)), RngStream(1, "vbr"))
    t, n = 0, 0
    while True:
        t, _ = src.next_datagram(t)
        if t >= 30_000_000:
            break
        n += 1
    assert n * 1316 * 8 / 30 == pytest.approx(4e6, rel=0.05)


def test_vbr_sigma_hits_percentile():
    import math
    from statistics import NormalDist

    s = vbr_sigma(2.0)
    assert math.exp(NormalDist().inv_cdf(0.95) * s - s * s / 2) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        vbr_sigma(100.0)


def test_flowspec_overhead():
    f = FlowSpec(CBR(1e6))
    assert f.msdu_bytes == 1396
    assert f.overhead_factor == pytest.approx(1396 / 1316)
    with pytest.raises(ValueError):
        FlowSpec(CBR(1e6), transport="tcp")


def test_load_scenario(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(textwrap.dedent("""
        topology: g-AP-g X5
        seed: 4
        window_ms: 100
        loss: 0.01
        channel_schedule:
          - link: hop0
            segments:
              - {start_s: 0, loss: 0.01, rate_mbps: 54}
              - {start_s: 5, loss: 0.05, rate_mbps: 24}
        estimators: {p: 0.4}
        adaptation: {rho: 0.5}
    """))
    sc = load_scenario(p)
    assert sc.topology == "g-AP-g X5" and sc.seed == 4 and sc.window_ms == 100
    assert sc.schedules[0].segments[1] == (5.0, 0.05, 24.0)
    assert sc.estimators == {"p": 0.4} and sc.adaptation == {"rho": 0.5}


def test_load_scenario_rejects_unknown_keys(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("topology: g\nbogus: 1\n")
    with pytest.raises(ValueError, match="bogus"):
        load_scenario(p)


def test_load_scenario_bad_topology(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("topology: g-AP\n")
    with pytest.raises(TopologyError):
        load_scenario(p)
