import pytest
from hypothesis import given, settings, strategies as st

from airtime.ledger import (
    Backoff,
    Category,
    ConservationError,
    Idle,
    LinkTap,
    NodeStats,
    Other,
    QueueDepth,
    TimeLedger,
    TxDone,
    TxTime,
    WindowStats,
    retry_rate,
    throughput,
)


def test_tx_done_accumulates():
    s = NodeStats("n")
    s.record_event(TxDone(12_000, 326, 1))
    assert (s.tx_bits, s.tx_us, s.attempts, s.intended) == (12_000, 326, 1, 1)


def test_undelivered_frame_counts_attempts_not_bits():
    s = NodeStats("n")
    s.record_event(TxDone(12_000, 0, 7, delivered=False))
    assert (s.tx_bits, s.attempts, s.intended) == (0, 7, 1)


def test_idle_accumulates():
    s = NodeStats("n")
    s.record_event(Idle(1000))
    s.record_event(Idle(1000))
    assert s.idle_us == 2000


def test_queue_depth_last_write_wins():
    s = NodeStats("n", window_us=100)
    s.record_event(QueueDepth(500_000))
    s.record_event(QueueDepth(400_000))
    s.record_event(Idle(100))
    assert s.snapshot_and_reset(100).tx_queue_depth_bits == 400_000


def test_empty_window():
    s = NodeStats("n", window_us=200_000)
    s.add_time(Category.IDLE, 200_000)
    ws = s.snapshot_and_reset(200_000)
    assert ws.ledger == TimeLedger(0, 0, 0, 200_000)
    assert ws.tx_bits == 0


def test_snapshot_resets_and_advances():
    s = NodeStats("n", window_us=1000)
    for ev in (TxTime(300), Backoff(100), Other(200), Idle(400)):
        s.record_event(ev)
    ws = s.snapshot_and_reset(1000)
    assert ws.ledger.total_us == 1000 and ws.window_index == 0
    assert (s.tx_us, s.backoff_us, s.other_us, s.idle_us) == (0, 0, 0, 0)
    s.add_time(Category.IDLE, 1000)
    assert s.snapshot_and_reset(2000).window_index == 1


def test_conservation_failure_is_fatal():
    s = NodeStats("n", window_us=1000)
    s.record_event(Idle(999))
    with pytest.raises(ConservationError):
        s.snapshot_and_reset(1000)


def test_wrong_window_span_is_rejected():
    s = NodeStats("n", window_us=1000)
    s.record_event(Idle(500))
    with pytest.raises(ValueError):
        s.snapshot_and_reset(500)


def test_unknown_event():
    with pytest.raises(TypeError):
        NodeStats("n").record_event("idle")


def _ws(bits, m=200_000):
    return WindowStats(0, m, TimeLedger(0, 0, 0, m), tx_bits=bits)


@pytest.mark.parametrize("bits,mbps", [(1_000_000, 5.0), (0, 0.0), (2_000_000, 10.0)])
def test_throughput(bits, mbps):
    assert throughput(_ws(bits)) == pytest.approx(mbps * 1e6)


@pytest.mark.parametrize("a,i,r", [(100, 100, 1.0), (150, 100, 1.5), (0, 0, None)])
def test_retry_rate(a, i, r):
    assert retry_rate(a, i) == r


def test_tap_weights_rate_by_airtime():
    tap = LinkTap("l")
    tap.observe(1, 100, 54e6 * 100)
    tap.observe(2, 300, 24e6 * 300)
    lq = tap.snapshot_and_reset()
    assert lq.avg_phy_rate_bps == pytest.approx((54e6 * 100 + 24e6 * 300) / 400)
    assert lq.retry_rate == 1.5
    assert tap.snapshot_and_reset().retry_rate is None


def test_fractions_sum_to_one():
    f = TimeLedger(1, 2, 3, 4).fractions()
    assert sum(f.values()) == pytest.approx(1.0)


@given(st.lists(st.tuples(st.sampled_from(list(Category)), st.integers(0, 5000)), max_size=50))
@settings(max_examples=200)
def test_conservation_holds_for_any_split(chunks):
    total = sum(us for _, us in chunks)
    s = NodeStats("n", window_us=max(total, 1))
    for cat, us in chunks:
        s.add_time(cat, us)
    if total == 0:
        s.add_time(Category.IDLE, 1)
    ws = s.snapshot_and_reset(s.window_us)
    assert ws.ledger.total_us == s.window_us
