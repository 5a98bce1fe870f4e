"""Discrete-event core: integer-microsecond clock, ordered event queue, seeded streams.

Every stream is a Philox4x64 counter-based generator (via numpy) keyed by
``blake2b(seed, name)``, so a named stream's draws depend only on the seed and
its name. Adding a node never shifts another node's draws.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Any, Callable

import numpy as np

_BUFFER = 4096
_STD_NORMAL = NormalDist()


class SchedulingError(RuntimeError):
    """An event was scheduled in the past: always a logic bug in the caller."""


@dataclass
class EventHandle:
    time_us: int
    seq: int
    callback: Callable[..., Any]
    args: tuple = ()
    name: str = ""
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True

    def __lt__(self, other: "EventHandle") -> bool:
        return (self.time_us, self.seq) < (other.time_us, other.seq)


class Simulator:
    """Single-threaded event loop.

    Events pop in ``(time_us, sequence)`` order; the sequence number is the
    insertion counter, so simultaneous events fire in the order they were
    scheduled.
    """

    def __init__(self, seed: int = 0, trace: bool = False):
        self.seed = int(seed)
        self.now_us = 0
        self._queue: list[EventHandle] = []
        self._seq = itertools.count()
        self._streams: dict[str, RngStream] = {}
        self.processed = 0
        self.trace: list[tuple[int, int, str]] | None = [] if trace else None

    def schedule(self, time_us: int, callback: Callable[..., Any], *args: Any, name: str = "") -> EventHandle:
        time_us = int(time_us)
        if time_us < self.now_us:
            raise SchedulingError(f"cannot schedule at {time_us} us, clock is at {self.now_us} us")
        handle = EventHandle(time_us, next(self._seq), callback, args, name)
        heapq.heappush(self._queue, handle)
        return handle

    def schedule_in(self, delay_us: int, callback: Callable[..., Any], *args: Any, name: str = "") -> EventHandle:
        return self.schedule(self.now_us + int(delay_us), callback, *args, name=name)

    def peek_time(self) -> int | None:
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].time_us if self._queue else None

    def run_until(self, end_us: int) -> int:
        end_us = int(end_us)
        if end_us < self.now_us:
            raise SchedulingError(f"run_until({end_us}) is behind the clock ({self.now_us})")
        queue = self._queue
        trace = self.trace
        while queue and queue[0].time_us <= end_us:
            ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self.now_us = ev.time_us
            self.processed += 1
            if trace is not None:
                trace.append((ev.time_us, ev.seq, ev.name or getattr(ev.callback, "__qualname__", "?")))
            ev.callback(*ev.args)
        self.now_us = end_us
        return self.now_us

    def stream(self, name: str) -> "RngStream":
        """Named substream, created on first use."""
        s = self._streams.get(name)
        if s is None:
            s = self._streams[name] = RngStream(self.seed, name)
        return s


def _stream_key(seed: int, name: str) -> int:
    digest = hashlib.blake2b(f"{seed & 0xFFFFFFFFFFFFFFFF}/{name}".encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


@dataclass
class RngStream:
    seed: int
    name: str = "main"
    _gen: np.random.Philox = field(init=False, repr=False)
    _buf: list[int] = field(init=False, repr=False, default_factory=list)
    _pos: int = field(init=False, repr=False, default=0)

    def __post_init__(self) -> None:
        self._gen = np.random.Philox(key=_stream_key(self.seed, self.name))
        self._buf = []
        self._pos = 0

    def raw64(self) -> int:
        if self._pos >= len(self._buf):
            self._buf = self._gen.random_raw(_BUFFER).tolist()
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.raw64() >> 11) * (1.0 / 9007199254740992.0)

    def bernoulli(self, p: float) -> bool:
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        return self.uniform() < p

    def normal(self) -> float:
        u = self.uniform()
        while u == 0.0:
            u = self.uniform()
        return _STD_NORMAL.inv_cdf(u)


def draw_uniform_int(stream: RngStream, lo: int, hi: int) -> int:
    """Uniform integer in ``[lo, hi]`` by masked rejection (no modulo bias)."""
    if lo > hi:
        raise ValueError(f"empty range [{lo}, {hi}]")
    span = hi - lo
    if span == 0:
        return lo
    mask = (1 << span.bit_length()) - 1
    while True:
        v = stream.raw64() & mask
        if v <= span:
            return lo + v


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


__all__ = [
    "EventHandle",
    "RngStream",
    "SchedulingError",
    "Simulator",
    "ceil_div",
    "draw_uniform_int",
]
