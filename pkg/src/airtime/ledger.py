"""Per-node, per-window channel statistics as a driver-resident agent keeps them.

Time is split four ways (transmitting, backing off, hearing others, idle) and
the four parts always add up to the window length in whole microseconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Union

DEFAULT_WINDOW_US = 200_000


class Category(str, Enum):
    TX = "tx"
    BACKOFF = "backoff"
    OTHER = "other"
    IDLE = "idle"


class ConservationError(AssertionError):
    """Ledger parts do not add up to the window: an accounting bug."""


@dataclass(frozen=True)
class TimeLedger:
    tx_us: int = 0
    backoff_us: int = 0
    other_us: int = 0
    idle_us: int = 0

    @property
    def total_us(self) -> int:
        return self.tx_us + self.backoff_us + self.other_us + self.idle_us

    def fractions(self) -> dict[str, float]:
        """Share of each category, i.e. the time-utilisation pie."""
        total = self.total_us
        if total == 0:
            return {c.value: 0.0 for c in Category}
        return {
            "tx": self.tx_us / total,
            "backoff": self.backoff_us / total,
            "other": self.other_us / total,
            "idle": self.idle_us / total,
        }


@dataclass(frozen=True)
class LinkQuality:
    link_id: str
    avg_phy_rate_bps: float
    retry_rate: float | None
    sample_count: int


@dataclass(frozen=True)
class WindowStats:
    window_index: int
    meas_time_us: int
    ledger: TimeLedger
    tx_bits: int = 0
    attempts: int = 0
    intended_packets: int = 0
    tx_queue_depth_bits: int = 0
    links: tuple[LinkQuality, ...] = ()
    t_start_us: int = 0
    node: str = ""


# record_event payloads
@dataclass(frozen=True)
class TxDone:
    bits: int
    airtime_us: int = 0
    attempts: int = 1
    delivered: bool = True


@dataclass(frozen=True)
class TxTime:
    us: int


@dataclass(frozen=True)
class Backoff:
    us: int


@dataclass(frozen=True)
class Other:
    us: int


@dataclass(frozen=True)
class Idle:
    us: int


@dataclass(frozen=True)
class QueueDepth:
    bits: int


LedgerEvent = Union[TxDone, TxTime, Backoff, Other, Idle, QueueDepth]


@dataclass
class NodeStats:
    """Running counters for one node on one medium.

    ``TxDone.airtime_us`` is for callers that do not classify time themselves;
    the simulator classifies airtime through ``TxTime`` and passes 0 there.
    """

    node: str
    window_us: int = DEFAULT_WINDOW_US
    window_index: int = 0
    window_start_us: int = 0
    tx_us: int = 0
    backoff_us: int = 0
    other_us: int = 0
    idle_us: int = 0
    tx_bits: int = 0
    attempts: int = 0
    intended: int = 0
    queue_bits: int = 0
    history: list[WindowStats] = field(default_factory=list)

    def record_event(self, event: LedgerEvent) -> None:
        if isinstance(event, TxDone):
            if event.delivered:
                self.tx_bits += event.bits
            self.tx_us += event.airtime_us
            self.attempts += event.attempts
            self.intended += 1
        elif isinstance(event, TxTime):
            self.tx_us += event.us
        elif isinstance(event, Backoff):
            self.backoff_us += event.us
        elif isinstance(event, Other):
            self.other_us += event.us
        elif isinstance(event, Idle):
            self.idle_us += event.us
        elif isinstance(event, QueueDepth):
            self.queue_bits = event.bits
        else:
            raise TypeError(f"unknown ledger event {event!r}")

    def add_time(self, category: Category, us: int) -> None:
        # hot path for the medium; same effect as record_event
        if category is Category.TX:
            self.tx_us += us
        elif category is Category.BACKOFF:
            self.backoff_us += us
        elif category is Category.OTHER:
            self.other_us += us
        else:
            self.idle_us += us

    def snapshot_and_reset(self, now_us: int, links: tuple[LinkQuality, ...] = ()) -> WindowStats:
        span = now_us - self.window_start_us
        if span != self.window_us:
            raise ValueError(
                f"{self.node}: snapshot at {now_us} us closes a {span} us window, expected {self.window_us} us"
            )
        ledger = TimeLedger(self.tx_us, self.backoff_us, self.other_us, self.idle_us)
        if ledger.total_us != span or min(ledger.tx_us, ledger.backoff_us, ledger.other_us, ledger.idle_us) < 0:
            raise ConservationError(f"{self.node} window {self.window_index}: {ledger} does not sum to {span} us")
        stats = WindowStats(
            window_index=self.window_index,
            meas_time_us=span,
            ledger=ledger,
            tx_bits=self.tx_bits,
            attempts=self.attempts,
            intended_packets=self.intended,
            tx_queue_depth_bits=self.queue_bits,
            links=links,
            t_start_us=self.window_start_us,
            node=self.node,
        )
        self.history.append(stats)
        self.window_index += 1
        self.window_start_us = now_us
        self.tx_us = self.backoff_us = self.other_us = self.idle_us = 0
        self.tx_bits = self.attempts = self.intended = 0
        return stats


def throughput(stats: WindowStats) -> float:
    """Effective throughput in bit/s: bits sent over the window length."""
    if stats.meas_time_us <= 0:
        raise ValueError("meas_time_us must be positive")
    return stats.tx_bits * 1e6 / stats.meas_time_us


def retry_rate(attempts: int, intended: int) -> float | None:
    """Attempts per packet intended for transmission; None when nothing was intended."""
    if intended <= 0:
        return None
    return attempts / intended


@dataclass
class LinkTap:
    """Sniffer view of one wireless link, reset every window.

    Phy rate is averaged weighted by airtime so a mid-window rate change
    counts for as long as the channel actually ran at it.
    """

    link_id: str
    attempts: int = 0
    intended: int = 0
    rate_airtime: float = 0.0
    airtime_us: int = 0
    last_rate_bps: float = 0.0
    miss_prob: float = 0.0
    rng: Any = None

    def observe(self, attempts: int, airtime_us: int, rate_airtime: float) -> None:
        """One finished packet: its attempts, their airtime and sum of rate * airtime."""
        if self.miss_prob and self.rng.bernoulli(self.miss_prob):
            return
        self.attempts += attempts
        self.intended += 1
        self.rate_airtime += rate_airtime
        self.airtime_us += airtime_us
        if airtime_us:
            self.last_rate_bps = rate_airtime / airtime_us

    def snapshot_and_reset(self) -> LinkQuality:
        q = self.rate_airtime / self.airtime_us if self.airtime_us else self.last_rate_bps
        lq = LinkQuality(self.link_id, q, retry_rate(self.attempts, self.intended), self.intended)
        self.attempts = self.intended = self.airtime_us = 0
        self.rate_airtime = 0.0
        return lq
