"""Incremental rate adaptation driven by per-window channel statistics.

Each window the controller reports the achieved rate, an available rate,
queueing delay and its change (jitter). Spare idle time raises the available
rate by a fraction ``rho`` of what that idle time could carry; a rate drop
without spare idle time lowers it by ``beta`` times the drop.
"""
from __future__ import annotations

from dataclasses import dataclass

from .ledger import WindowStats

DELAY_SATURATED_US = 2**31
MPEG_TS_OVERHEAD = 1396 / 1316  # 7 x 188-byte TS packets + 80 header bytes per datagram


@dataclass(frozen=True)
class AdaptationParams:
    rho: float = 0.8
    beta: float = 1.0
    idle_min_threshold_us: int = 10_000
    min_rate_diff_threshold_bps: float = 100_000.0
    packet_proc_delay_us: int = 0
    app_overhead_factor: float = MPEG_TS_OVERHEAD
    min_source_rate_bps: float = 100_000.0
    max_source_rate_bps: float = 54_000_000.0

    def __post_init__(self) -> None:
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must be in (0, 1]")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.idle_min_threshold_us < 0 or self.min_rate_diff_threshold_bps < 0 or self.packet_proc_delay_us < 0:
            raise ValueError("thresholds must be non-negative")
        if self.app_overhead_factor < 1.0:
            raise ValueError("app_overhead_factor must be >= 1")
        if not 0 <= self.min_source_rate_bps <= self.max_source_rate_bps:
            raise ValueError("need 0 <= min_source_rate <= max_source_rate")

    @classmethod
    def for_window(cls, window_us: int, **kw) -> "AdaptationParams":
        """Defaults with the idle threshold at 5% of the window."""
        kw.setdefault("idle_min_threshold_us", window_us // 20)
        return cls(**kw)


@dataclass(frozen=True)
class AdaptationState:
    tx_rate_previous_bps: float = 0.0
    tx_delay_previous_us: float = 0.0


@dataclass(frozen=True)
class AdaptationOutput:
    tx_rate_bps: float
    avail_tx_rate_bps: float
    tx_delay_us: float
    tx_jitter_us: float
    delta_tx_bits: float = 0.0
    branch: str = "none"  # "increase" | "decrease" | "none"


def delay_jitter(queue_depth_bits: float, tx_rate_bps: float, prev_delay_us: float) -> tuple[float, float]:
    if tx_rate_bps < 0:
        raise ValueError("tx rate cannot be negative")
    if queue_depth_bits <= 0:
        delay = 0.0
    elif tx_rate_bps == 0:
        delay = float(DELAY_SATURATED_US)
    else:
        delay = queue_depth_bits / tx_rate_bps * 1e6
    return delay, delay - prev_delay_us


def step(
    stats: WindowStats,
    params: AdaptationParams,
    state: AdaptationState,
    positive_increment_bps: float | None = None,
) -> tuple[AdaptationOutput, AdaptationState]:
    """One controller update.

    ``positive_increment_bps`` swaps the idle-time increase for an external
    estimate (the sniffer-driven variant); the decrease branch is unchanged.
    """
    M = stats.meas_time_us
    if M <= 0:
        raise ValueError("meas_time_us must be positive")
    led = stats.ledger
    tx_bits = stats.tx_bits
    tx_rate = tx_bits * 1e6 / M

    delta_bits = 0.0
    branch = "none"
    if led.idle_us > params.idle_min_threshold_us:
        if positive_increment_bps is not None:
            delta_bits = positive_increment_bps * M / 1e6
        else:
            denom = led.tx_us + led.backoff_us + params.packet_proc_delay_us
            if denom > 0:
                delta_bits = params.rho * tx_bits * (led.idle_us / denom)
        branch = "increase"
    elif tx_rate > 0:
        diff = state.tx_rate_previous_bps - tx_rate
        if diff > params.min_rate_diff_threshold_bps:
            delta_bits = -params.beta * (M / 1e6) * diff
            branch = "decrease"

    delta_rate = delta_bits * 1e6 / M
    avail = max(0.0, tx_rate + delta_rate)
    # previous delay is whatever the last step reported
    delay, jitter = delay_jitter(stats.tx_queue_depth_bits, tx_rate, state.tx_delay_previous_us)
    out = AdaptationOutput(tx_rate, avail, delay, jitter, delta_bits, branch)
    return out, AdaptationState(tx_rate_previous_bps=tx_rate, tx_delay_previous_us=delay)


def apply_to_source(output: AdaptationOutput, params: AdaptationParams) -> float:
    """Application send rate for the next window (payload bit/s)."""
    rate = output.avail_tx_rate_bps / params.app_overhead_factor
    return min(max(rate, params.min_source_rate_bps), params.max_source_rate_bps)
