"""Idle-time available-bandwidth estimators.

Source predictor (SP): scale the source's own bits-per-busy-time by the idle
share of the window and a discount ``p``.

Source sniffer (SS): idle share of the window times the harmonic path rate
``1 / sum(r_i / q_i)`` over the sniffed wireless links, times the MAC
efficiency factor ``f``.

Both return ``None`` when the window carries no basis for an estimate; the
caller keeps its previous value.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .ledger import LinkQuality, WindowStats, throughput

SP_P_ONE_HOP = 0.8
SP_P_TWO_HOP = 0.4
SS_F_54 = 24 / 54

# SS efficiency per phy rate: 24/54 at 54 Mbps, other rates scaled by the
# lossless lone-station efficiency relative to 54 Mbps (scripts/calibrate_f.py).
F_TABLE = {
    6_000_000: 0.7298,
    9_000_000: 0.7007,
    12_000_000: 0.676,
    18_000_000: 0.6281,
    24_000_000: 0.5886,
    36_000_000: 0.5183,
    48_000_000: 0.4654,
    54_000_000: SS_F_54,
}


@dataclass(frozen=True)
class SpParams:
    p: float = SP_P_ONE_HOP

    def __post_init__(self) -> None:
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must be in (0, 1], got {self.p}")

    @classmethod
    def for_hops(cls, same_channel_hops: int) -> "SpParams":
        """0.8 for one hop, 0.4 for two, 0.8/h beyond."""
        if same_channel_hops < 1:
            raise ValueError("need at least one hop")
        return cls(SP_P_ONE_HOP / same_channel_hops)


@dataclass(frozen=True)
class SsParams:
    f: float = SS_F_54

    def __post_init__(self) -> None:
        if not 0.0 < self.f <= 1.0:
            raise ValueError(f"f must be in (0, 1], got {self.f}")

    @classmethod
    def for_rate(cls, phy_rate_bps: float) -> "SsParams":
        return cls(F_TABLE.get(int(phy_rate_bps), SS_F_54))


@dataclass(frozen=True)
class BandwidthEstimate:
    additional_bps: float
    measured_bps: float
    total_bps: float
    method: str
    window_index: int


def sp_estimate(stats: WindowStats, params: SpParams = SpParams()) -> float | None:
    if stats.meas_time_us <= 0:
        raise ValueError("meas_time_us must be positive")
    busy = stats.ledger.tx_us + stats.ledger.backoff_us
    if busy == 0:
        return None
    # (I/M) in us/us, TxBits/(Tx+Bo) in bit/us -> x1e6 for bit/s
    return (stats.ledger.idle_us / stats.meas_time_us) * (stats.tx_bits / busy) * 1e6 * params.p


def ss_estimate(
    idle_us: int,
    meas_time_us: int,
    links: Sequence[LinkQuality],
    params: SsParams = SsParams(),
) -> float | None:
    if meas_time_us <= 0:
        raise ValueError("meas_time_us must be positive")
    if not links:
        raise ValueError("SS needs at least one link")
    inv = 0.0
    for lq in links:
        if lq.retry_rate is None:
            return None
        if lq.avg_phy_rate_bps <= 0:
            raise ValueError(f"link {lq.link_id} has non-positive phy rate")
        inv += lq.retry_rate / lq.avg_phy_rate_bps
    # one link: q / r directly, so the single-attempt case is exactly (I/M) * q * f
    path = links[0].avg_phy_rate_bps / links[0].retry_rate if len(links) == 1 else 1.0 / inv
    return (idle_us / meas_time_us) * path * params.f


def ss_estimate_window(stats: WindowStats, params: SsParams = SsParams()) -> float | None:
    return ss_estimate(stats.ledger.idle_us, stats.meas_time_us, stats.links, params)


def total_estimate(stats: WindowStats, additional_bps: float, method: str = "SP") -> BandwidthEstimate:
    if additional_bps < 0:
        raise ValueError("additional bandwidth cannot be negative")
    measured = throughput(stats)
    return BandwidthEstimate(additional_bps, measured, measured + additional_bps, method, stats.window_index)


def held(estimates: Iterable[float | None], initial: float = 0.0) -> list[float]:
    """Replace missing per-window estimates with the last available one."""
    out = []
    last = initial
    for e in estimates:
        if e is not None:
            last = e
        out.append(last)
    return out
