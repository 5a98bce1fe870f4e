"""Shared CSMA/CA channel model (802.11a/g OFDM DCF).

Accounting convention: an exchange occupies ``data + SIFS + ACK + DIFS`` of
contiguous busy time, the DIFS being the idle sensing that every station must
see after the ACK before its backoff counter may move. The transmitter books
the whole span as transmit time and every other station on the channel books
it as time used by others. Backoff slots are local: the counting station books
them as backoff, a station with nothing to send books them as idle.
"""
from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .engine import EventHandle, RngStream, Simulator, ceil_div, draw_uniform_int
from .ledger import Category, LinkTap, NodeStats, TxDone

OFDM_RATES_BPS = (6_000_000, 9_000_000, 12_000_000, 18_000_000, 24_000_000, 36_000_000, 48_000_000, 54_000_000)
BANDS = ("11a", "11g")


class AccountingError(AssertionError):
    """A node's time was classified twice or left unclassified."""


@dataclass(frozen=True)
class MacTimingParams:
    slot_us: int = 9
    sifs_us: int = 16
    difs_us: int = 34
    preamble_us: int = 20
    symbol_us: int = 4
    cw_min: int = 15
    cw_max: int = 1023
    retry_limit: int = 7
    ack_bytes: int = 14
    control_rate_bps: int = 24_000_000
    service_bits: int = 16
    tail_bits: int = 6
    mac_header_bytes: int = 28
    rts_cts: bool = False
    rts_bytes: int = 20
    cts_bytes: int = 14

    def __post_init__(self) -> None:
        durations = (self.slot_us, self.sifs_us, self.difs_us, self.preamble_us, self.symbol_us)
        if min(durations) <= 0:
            raise ValueError("MAC durations must be positive")
        if not 0 < self.cw_min <= self.cw_max:
            raise ValueError("need 0 < cw_min <= cw_max")
        if self.retry_limit < 1:
            raise ValueError("retry_limit must be >= 1")
        if self.control_rate_bps not in OFDM_RATES_BPS:
            raise ValueError(f"control rate {self.control_rate_bps} is not an OFDM rate")


def _check_rate(rate_bps: float) -> int:
    if rate_bps not in OFDM_RATES_BPS:
        raise ValueError(f"unsupported phy rate {rate_bps} bps; expected one of {OFDM_RATES_BPS}")
    return int(rate_bps)


def ppdu_airtime(body_bytes: int, phy_rate_bps: float, timing: MacTimingParams) -> int:
    """Preamble plus whole OFDM symbols for ``body_bytes`` of MAC frame."""
    rate = _check_rate(phy_rate_bps)
    bits_per_symbol = rate * timing.symbol_us // 1_000_000
    bits = timing.service_bits + 8 * body_bytes + timing.tail_bits
    return timing.preamble_us + ceil_div(bits, bits_per_symbol) * timing.symbol_us


def frame_airtime(payload_bytes: int, phy_rate_bps: float, timing: MacTimingParams = MacTimingParams()) -> int:
    """Data PPDU duration in microseconds for an MSDU of ``payload_bytes``."""
    if payload_bytes <= 0:
        raise ValueError("payload_bytes must be positive")
    return ppdu_airtime(timing.mac_header_bytes + payload_bytes, phy_rate_bps, timing)


def ack_airtime(timing: MacTimingParams = MacTimingParams()) -> int:
    return ppdu_airtime(timing.ack_bytes, timing.control_rate_bps, timing)


def exchange_airtime(payload_bytes: int, phy_rate_bps: float, timing: MacTimingParams = MacTimingParams()) -> int:
    """Full channel occupancy of one attempt: DIFS + data + SIFS + ACK (+ RTS/CTS)."""
    t = timing.difs_us + frame_airtime(payload_bytes, phy_rate_bps, timing) + timing.sifs_us + ack_airtime(timing)
    if timing.rts_cts:
        t += (
            ppdu_airtime(timing.rts_bytes, timing.control_rate_bps, timing)
            + ppdu_airtime(timing.cts_bytes, timing.control_rate_bps, timing)
            + 2 * timing.sifs_us
        )
    return t


@dataclass(frozen=True)
class ScheduleSegment:
    start_us: int
    per_attempt_loss_prob: float
    phy_rate_bps: int


@dataclass
class ChannelSchedule:
    """Piecewise-constant (loss, rate) timeline of one link."""

    segments: list[ScheduleSegment]

    def __post_init__(self) -> None:
        if not self.segments or self.segments[0].start_us != 0:
            raise ValueError("schedule must start at t=0")
        starts = [s.start_us for s in self.segments]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("schedule segments must have strictly increasing start times")
        for s in self.segments:
            if not 0.0 <= s.per_attempt_loss_prob < 1.0 and s.per_attempt_loss_prob != 1.0:
                raise ValueError(f"loss probability {s.per_attempt_loss_prob} outside [0, 1]")
            _check_rate(s.phy_rate_bps)
        self._starts = starts

    @classmethod
    def constant(cls, loss: float, rate_bps: int) -> "ChannelSchedule":
        return cls([ScheduleSegment(0, loss, rate_bps)])

    def at(self, t_us: int) -> ScheduleSegment:
        return self.segments[bisect.bisect_right(self._starts, t_us) - 1]


@dataclass
class WirelessLink:
    link_id: str
    band: str
    channel: int
    tx: str
    rx: str
    schedule: ChannelSchedule

    def __post_init__(self) -> None:
        if self.band not in BANDS:
            raise ValueError(f"unknown band {self.band!r}")

    @property
    def phy_rate_bps(self) -> int:
        return self.schedule.segments[0].phy_rate_bps

    @property
    def per_attempt_loss_prob(self) -> float:
        return self.schedule.segments[0].per_attempt_loss_prob


@dataclass
class WiredLink:
    """Lossless, contention-free FIFO pipe with zero propagation delay."""

    link_id: str
    tx: str
    rx: str
    rate_bps: int = 100_000_000


@dataclass(frozen=True)
class TxOutcome:
    delivered: bool
    attempts: int


@dataclass
class Frame:
    msdu_bytes: int
    link: WirelessLink
    payload: object = None
    on_done: Callable[["Frame", TxOutcome], None] | None = None


class NodeTimeline:
    """Exclusive, gap-free classification of one station's time.

    The optional transition log keeps ``(from_us, to_us, category)`` runs and
    is meant for tests and small traces.
    """

    __slots__ = ("node_id", "stats", "classified_until", "state", "log")

    def __init__(self, node_id: str, stats: NodeStats, keep_log: bool = False):
        self.node_id = node_id
        self.stats = stats
        self.classified_until = 0
        self.state = Category.IDLE
        self.log: list[tuple[int, int, Category]] | None = [] if keep_log else None

    def classify_elapsed(self, from_us: int, to_us: int, category: Category) -> None:
        if from_us != self.classified_until:
            kind = "overlap" if from_us < self.classified_until else "gap"
            raise AccountingError(
                f"{self.node_id}: {kind} classifying [{from_us}, {to_us}) after {self.classified_until}"
            )
        if to_us < from_us:
            raise AccountingError(f"{self.node_id}: reversed interval [{from_us}, {to_us})")
        if to_us == from_us:
            return
        self.stats.add_time(category, to_us - from_us)
        self.classified_until = to_us
        self.state = category
        log = self.log
        if log is not None:
            if log and log[-1][2] is category and log[-1][1] == from_us:
                log[-1] = (log[-1][0], to_us, category)
            else:
                log.append((from_us, to_us, category))


class Station:
    """One node's radio on one channel: a single FIFO queue and DCF state."""

    def __init__(self, node_id: str, timeline: NodeTimeline, rng: RngStream, queue_limit: int = 200):
        self.node_id = node_id
        self.timeline = timeline
        self.rng = rng
        self.queue: deque[Frame] = deque()
        self.queue_limit = queue_limit
        self.queue_bits = 0
        self.cw = 0
        self.slots: int = -1  # -1: not contending
        self.count_start = 0
        self.hol_attempts = 0
        self.hol_airtime = 0
        self.hol_rate_airtime = 0.0
        self.tx_end = 0
        self.drops_queue = 0

    @property
    def contending(self) -> bool:
        return self.slots >= 0


class Channel:
    """One shared medium. Stations on different Channel objects never interact."""

    def __init__(
        self,
        sim: Simulator,
        channel_id: int,
        timing: MacTimingParams = MacTimingParams(),
        loss_rng: Callable[[str], RngStream] | None = None,
    ):
        self.sim = sim
        self.channel_id = channel_id
        self.timing = timing
        self.stations: list[Station] = []
        self.by_node: dict[str, Station] = {}
        self.taps: dict[str, LinkTap] = {}
        self._loss_rng = loss_rng or (lambda name: sim.stream(f"loss/{name}"))
        self._loss_streams: dict[str, RngStream] = {}
        self._airtime_cache: dict[tuple[int, int], int] = {}
        self.last_t = 0
        self.busy = False
        self.busy_until = 0
        self.idle_since = 0
        self._access: EventHandle | None = None
        self._transmitters: list[tuple[Station, Frame, int]] = []
        self.collisions = 0

    # -- topology -----------------------------------------------------------
    def attach(self, node_id: str, stats: NodeStats, queue_limit: int = 200, keep_log: bool = False) -> Station:
        if node_id in self.by_node:
            return self.by_node[node_id]
        if self.sim.now_us != 0:
            self.advance(self.sim.now_us)
        tl = NodeTimeline(node_id, stats, keep_log)
        tl.classified_until = self.last_t
        st = Station(node_id, tl, self.sim.stream(f"backoff/{node_id}/ch{self.channel_id}"), queue_limit)
        st.cw = self.timing.cw_min
        self.stations.append(st)
        self.by_node[node_id] = st
        return st

    def tap(self, link: WirelessLink) -> LinkTap:
        t = self.taps.get(link.link_id)
        if t is None:
            t = self.taps[link.link_id] = LinkTap(link.link_id, last_rate_bps=link.phy_rate_bps)
        return t

    def airtime(self, msdu_bytes: int, rate_bps: int) -> int:
        key = (msdu_bytes, rate_bps)
        d = self._airtime_cache.get(key)
        if d is None:
            d = self._airtime_cache[key] = exchange_airtime(msdu_bytes, rate_bps, self.timing)
        return d

    # -- time classification -------------------------------------------------
    def advance(self, t: int) -> None:
        """Classify every station's time up to ``t`` from the current medium state."""
        last = self.last_t
        if t <= last:
            return
        if self.busy:
            for st in self.stations:
                tl = st.timeline
                e = st.tx_end
                if e > last:
                    mid = e if e < t else t
                    tl.classify_elapsed(last, mid, Category.TX)
                    if mid < t:
                        tl.classify_elapsed(mid, t, Category.OTHER)
                else:
                    tl.classify_elapsed(last, t, Category.OTHER)
        else:
            for st in self.stations:
                st.timeline.classify_elapsed(last, t, Category.BACKOFF if st.slots >= 0 else Category.IDLE)
        self.last_t = t

    # -- DCF -----------------------------------------------------------------
    def contend_and_transmit(self, station: Station, frame: Frame) -> bool:
        """Queue ``frame`` at ``station``; the outcome arrives through ``frame.on_done``.

        Returns False (and drops the frame) if the station's queue is full.
        """
        if len(station.queue) >= station.queue_limit:
            station.drops_queue += 1
            return False
        now = self.sim.now_us
        self.advance(now)
        station.queue.append(frame)
        station.queue_bits += 8 * frame.msdu_bytes
        station.timeline.stats.queue_bits = station.queue_bits
        if station.slots < 0:
            self._start_backoff(station, now)
            if not self.busy:
                self._reschedule_access()
        return True

    def _start_backoff(self, st: Station, now: int) -> None:
        st.slots = draw_uniform_int(st.rng, 0, st.cw)
        if self.busy:
            st.count_start = self.busy_until
        else:
            slot = self.timing.slot_us
            base = self.idle_since
            st.count_start = base + ceil_div(max(0, now - base), slot) * slot

    def _reschedule_access(self) -> None:
        if self._access is not None:
            self._access.cancel()
            self._access = None
        slot = self.timing.slot_us
        best = None
        for st in self.stations:
            if st.slots >= 0:
                e = st.count_start + st.slots * slot
                if best is None or e < best:
                    best = e
        if best is not None:
            self._access = self.sim.schedule(best, self._on_access, name=f"access/ch{self.channel_id}")

    def _on_access(self) -> None:
        self._access = None
        now = self.sim.now_us
        self.advance(now)
        slot = self.timing.slot_us
        winners = []
        for st in self.stations:
            if st.slots < 0:
                continue
            if st.count_start + st.slots * slot == now:
                winners.append(st)
            elif now > st.count_start:
                st.slots -= (now - st.count_start) // slot
        end = now
        txs = []
        for st in winners:
            frame = st.queue[0]
            seg = frame.link.schedule.at(now)
            dur = self.airtime(frame.msdu_bytes, seg.phy_rate_bps)
            st.tx_end = now + dur
            st.hol_attempts += 1
            st.hol_airtime += dur
            st.hol_rate_airtime += seg.phy_rate_bps * dur
            txs.append((st, frame, dur, seg))
            if st.tx_end > end:
                end = st.tx_end
        self._transmitters = txs
        self.busy = True
        self.busy_until = end
        self.sim.schedule(end, self._on_tx_end, name=f"txend/ch{self.channel_id}")

    def _loss_stream(self, link_id: str) -> RngStream:
        s = self._loss_streams.get(link_id)
        if s is None:
            s = self._loss_streams[link_id] = self._loss_rng(link_id)
        return s

    def _on_tx_end(self) -> None:
        now = self.sim.now_us
        self.advance(now)
        txs = self._transmitters
        self._transmitters = []
        self.busy = False
        self.idle_since = now
        collided = len(txs) > 1
        if collided:
            self.collisions += 1
        done: list[tuple[Frame, TxOutcome]] = []
        timing = self.timing
        for st, frame, dur, seg in txs:
            st.tx_end = 0
            st.slots = -1
            # loss draw happens even for collisions so a link's stream advances once per attempt
            lost = self._loss_stream(frame.link.link_id).bernoulli(seg.per_attempt_loss_prob)
            ok = not collided and not lost
            tap = self.taps.get(frame.link.link_id)
            if ok or st.hol_attempts >= timing.retry_limit:
                if tap is not None:
                    tap.observe(st.hol_attempts, st.hol_airtime, st.hol_rate_airtime)
                st.hol_airtime = 0
                st.hol_rate_airtime = 0.0
                st.queue.popleft()
                st.queue_bits -= 8 * frame.msdu_bytes
                st.timeline.stats.queue_bits = st.queue_bits
                st.timeline.stats.record_event(TxDone(8 * frame.msdu_bytes, 0, st.hol_attempts, ok))
                done.append((frame, TxOutcome(ok, st.hol_attempts)))
                st.hol_attempts = 0
                st.cw = timing.cw_min
            else:
                st.cw = min(2 * (st.cw + 1) - 1, timing.cw_max)
            if st.queue:
                self._start_backoff(st, now)
        for st in self.stations:
            if st.slots >= 0:
                st.count_start = now
        self._reschedule_access()
        for frame, outcome in done:
            if frame.on_done is not None:
                frame.on_done(frame, outcome)


class WiredPipe:
    """Serialises frames over a wired link; never contends with anything."""

    def __init__(self, sim: Simulator, link: WiredLink):
        self.sim = sim
        self.link = link
        self.busy_until = 0
        self.delivered_bits = 0

    def send(self, msdu_bytes: int, deliver: Callable[[], None]) -> None:
        now = self.sim.now_us
        start = max(now, self.busy_until)
        done = start + max(1, ceil_div(8 * msdu_bytes * 1_000_000, self.link.rate_bps))
        self.busy_until = done
        self.delivered_bits += 8 * msdu_bytes
        self.sim.schedule(done, deliver, name=f"wired/{self.link.link_id}")
