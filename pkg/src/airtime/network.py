"""Executable network: channels, relays, flows and measurement windows for a Topology."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .engine import EventHandle, Simulator
from .ledger import DEFAULT_WINDOW_US, NodeStats, WindowStats
from .medium import (
    Channel,
    ChannelSchedule,
    Frame,
    MacTimingParams,
    Station,
    TxOutcome,
    WiredLink,
    WiredPipe,
    WirelessLink,
)
from .scenario import (
    CBR,
    DEFAULT_HEADER_BYTES,
    DEFAULT_PAYLOAD_BYTES,
    FlowSpec,
    Hop,
    Saturating,
    Topology,
    TrafficSource,
    parse_topology,
)


@dataclass(frozen=True)
class ReliableParams:
    """Windowed ARQ standing in for TCP: loss recovery plus reverse-path ACK airtime."""

    window: int = 32
    data_per_ack: int = 2
    ack_bytes: int = 64
    rto_factor: float = 4.0
    initial_delay_us: int = 20_000
    min_rto_us: int = 10_000
    ack_delay_us: int = 10_000


@dataclass
class NetConfig:
    window_us: int = DEFAULT_WINDOW_US
    phy_rate_bps: int = 54_000_000
    loss: float = 0.0
    timing: MacTimingParams = field(default_factory=MacTimingParams)
    queue_limit: int = 200
    wired_rate_bps: int = 100_000_000
    schedules: dict[str, ChannelSchedule] = field(default_factory=dict)  # link id or "*"
    cross_start_us: int = 0
    cross_payload_bytes: int = DEFAULT_PAYLOAD_BYTES
    header_bytes: int = DEFAULT_HEADER_BYTES
    sniff_loss: float = 0.0
    reliable: ReliableParams = field(default_factory=ReliableParams)
    saturating_backlog: int = 8
    keep_logs: bool = False
    trace: bool = False

    def schedule_for(self, link_id: str) -> ChannelSchedule:
        base = link_id.removesuffix(".rev")
        s = self.schedules.get(base) or self.schedules.get("*")
        return s if s is not None else ChannelSchedule.constant(self.loss, self.phy_rate_bps)


class Datagram:
    __slots__ = ("flow", "seq", "payload_bytes", "msdu_bytes", "path", "idx", "is_ack", "acks")

    def __init__(self, flow, seq, payload_bytes, msdu_bytes, path, is_ack=False, acks=()):
        self.flow = flow
        self.seq = seq
        self.payload_bytes = payload_bytes
        self.msdu_bytes = msdu_bytes
        self.path = path
        self.idx = 0
        self.is_ack = is_ack
        self.acks = acks


@dataclass
class _Hop:
    hop: Hop
    channel: Channel | None = None
    station: Station | None = None
    link: WirelessLink | None = None
    pipe: WiredPipe | None = None


class Flow:
    """A source-to-sink stream along a fixed hop list."""

    def __init__(self, name: str, spec: FlowSpec, path: list[_Hop], reverse: list[_Hop], source: TrafficSource):
        self.name = name
        self.spec = spec
        self.path = path
        self.reverse = reverse
        self.source = source
        self.saturating = isinstance(spec.profile, Saturating)
        self.reliable = spec.transport == "reliable_simplified"
        self.rate_override: float | None = None
        self.next_seq = 0
        self.sent = 0
        self.delivered_payload_bits = 0
        self.delivered_count = 0
        self.mac_drops = 0
        self.queue_drops = 0
        # reliable transport state
        self.backlog = 0
        self.unacked: dict[int, list] = {}
        self.received: set[int] = set()
        self.pending_acks: list[int] = []
        self.ack_timer: EventHandle | None = None
        self.srtt_us = 0.0
        self.retransmissions = 0
        self.acks_sent = 0

    @property
    def current_rate_bps(self) -> float | None:
        return self.source.rate_bps


@dataclass
class RunResult:
    observer: WindowStats | None
    observer_windows: list[WindowStats]
    windows: dict[str, list[WindowStats]]
    observer_delivered_bits: list[int]
    sink_payload_bits: list[int]
    source_rate_bps: list[float | None]
    duration_us: int
    media: Flow
    cross: list[Flow]
    events: int
    trace: list | None

    @property
    def goodput_bps(self) -> float:
        return sum(self.sink_payload_bits) * 1e6 / self.duration_us


class Network:
    """Builds and runs one simulation instance; nothing is shared between instances."""

    def __init__(self, topology: Topology | str, flow: FlowSpec, config: NetConfig | None = None, seed: int = 0):
        if isinstance(topology, str):
            topology = parse_topology(topology)
        self.topology = topology
        self.config = config = config or NetConfig()
        self.sim = Simulator(seed, trace=config.trace)
        self.channels: dict[int, Channel] = {}
        self.stats: dict[str, NodeStats] = {}
        self._hops: dict[str, _Hop] = {}

        reliable = flow.transport == "reliable_simplified"
        for h in topology.media_path:
            self._build_hop(h)
            if reliable:
                self._build_hop(Hop(h.link_id + ".rev", h.kind, h.rx, h.tx, h.band, h.channel, h.dls))
        for cf in topology.cross_flows:
            for h in cf.path:
                self._build_hop(h)
        for node, ch in topology.listeners:
            self._attach(node, ch)

        self.observer_hop = self._hops[topology.observer.link_id]
        self.observer_key = f"{topology.observer.tx}@ch{topology.observer.channel}"
        self._path_taps = [self._hops[h.link_id].channel.tap(self._hops[h.link_id].link) for h in topology.wireless_hops]
        if config.sniff_loss > 0:
            for tap in self._path_taps:
                tap.miss_prob = config.sniff_loss
                tap.rng = self.sim.stream(f"sniff/{tap.link_id}")

        fwd = [self._hops[h.link_id] for h in topology.media_path]
        rev = [self._hops[h.link_id + ".rev"] for h in reversed(topology.media_path)] if reliable else []
        src = TrafficSource(flow, self.sim.stream("traffic/media"))
        self.media = Flow("media", flow, fwd, rev, src)
        self.cross: list[Flow] = []
        for i, cf in enumerate(topology.cross_flows):
            spec = FlowSpec(CBR(cf.rate_bps), datagram_payload_bytes=config.cross_payload_bytes,
                            header_bytes=config.header_bytes, duration_s=flow.duration_s)
            path = [self._hops[h.link_id] for h in cf.path]
            self.cross.append(Flow(f"cross{i}", spec, path, [], TrafficSource(spec, self.sim.stream(f"traffic/cross{i}"))))

        self._obs_bits = 0
        self._sink_bits = 0

    # -- construction --------------------------------------------------------
    def _attach(self, node: str, ch_id: int) -> Station:
        ch = self.channels.get(ch_id)
        if ch is None:
            ch = self.channels[ch_id] = Channel(self.sim, ch_id, self.config.timing)
        key = f"{node}@ch{ch_id}"
        st = self.stats.get(key)
        if st is None:
            st = self.stats[key] = NodeStats(key, self.config.window_us)
        return ch.attach(node, st, self.config.queue_limit, self.config.keep_logs)

    def _build_hop(self, h: Hop) -> None:
        if h.wireless:
            station = self._attach(h.tx, h.channel)
            self._attach(h.rx, h.channel)
            link = WirelessLink(h.link_id, h.band, h.channel, h.tx, h.rx, self.config.schedule_for(h.link_id))
            self._hops[h.link_id] = _Hop(h, self.channels[h.channel], station, link)
        else:
            pipe = WiredPipe(self.sim, WiredLink(h.link_id, h.tx, h.rx, self.config.wired_rate_bps))
            self._hops[h.link_id] = _Hop(h, pipe=pipe)

    # -- forwarding ----------------------------------------------------------
    def _send(self, dg: Datagram) -> None:
        hop = dg.path[dg.idx]
        if hop.pipe is not None:
            hop.pipe.send(dg.msdu_bytes, lambda: self._departed(dg, True))
            return
        frame = Frame(dg.msdu_bytes, hop.link, dg, self._frame_done)
        if not hop.channel.contend_and_transmit(hop.station, frame):
            dg.flow.queue_drops += 1

    def _frame_done(self, frame: Frame, outcome: TxOutcome) -> None:
        dg: Datagram = frame.payload
        if frame.link is self.observer_hop.link and outcome.delivered:
            self._obs_bits += 8 * frame.msdu_bytes
        if not outcome.delivered:
            dg.flow.mac_drops += 1
        self._departed(dg, outcome.delivered)

    def _departed(self, dg: Datagram, delivered: bool) -> None:
        if dg.idx == 0:
            self._hop0_released(dg)
        if not delivered:
            return
        dg.idx += 1
        if dg.idx < len(dg.path):
            self._send(dg)
        else:
            self._arrive(dg)

    def _hop0_released(self, dg: Datagram) -> None:
        f = dg.flow
        if f.saturating and not f.reliable and not dg.is_ack:
            self._emit_unreliable(f)

    def _arrive(self, dg: Datagram) -> None:
        f = dg.flow
        if dg.is_ack:
            self._on_ack(f, dg)
            return
        if f.reliable:
            if dg.seq not in f.received:
                f.received.add(dg.seq)
                self._count_delivery(f, dg)
            f.pending_acks.append(dg.seq)
            if len(f.pending_acks) >= self.config.reliable.data_per_ack:
                self._send_ack(f)
            elif f.ack_timer is None:
                f.ack_timer = self.sim.schedule_in(self.config.reliable.ack_delay_us, self._send_ack, f, name="ackdelay")
        else:
            self._count_delivery(f, dg)

    def _count_delivery(self, f: Flow, dg: Datagram) -> None:
        f.delivered_payload_bits += 8 * dg.payload_bytes
        f.delivered_count += 1
        if f is self.media:
            self._sink_bits += 8 * dg.payload_bytes

    def _new_datagram(self, f: Flow) -> Datagram:
        dg = Datagram(f, f.next_seq, f.spec.datagram_payload_bytes, f.spec.msdu_bytes, f.path)
        f.next_seq += 1
        f.sent += 1
        return dg

    def _emit_unreliable(self, f: Flow) -> None:
        self._send(self._new_datagram(f))

    # -- sources -------------------------------------------------------------
    def _source_tick(self, f: Flow) -> None:
        if f.reliable:
            f.backlog += 1
            self._pump(f)
        else:
            self._emit_unreliable(f)
        t, _ = f.source.next_datagram(self.sim.now_us, f.rate_override)
        f.rate_override = None
        self.sim.schedule(t, self._source_tick, f, name=f"src/{f.name}")

    def _start_flow(self, f: Flow, at_us: int) -> None:
        if f.saturating:
            if f.reliable:
                self.sim.schedule(at_us, self._pump, f, name=f"start/{f.name}")
            else:
                for _ in range(self.config.saturating_backlog):
                    self.sim.schedule(at_us, self._emit_unreliable, f, name=f"start/{f.name}")
            return
        t, _ = f.source.next_datagram(at_us)
        self.sim.schedule(t, self._source_tick, f, name=f"src/{f.name}")

    # -- reliable transport --------------------------------------------------
    def _rto(self, f: Flow) -> int:
        rp = self.config.reliable
        base = f.srtt_us if f.srtt_us > 0 else rp.initial_delay_us
        return max(rp.min_rto_us, int(rp.rto_factor * base))

    def _pump(self, f: Flow) -> None:
        w = self.config.reliable.window
        while len(f.unacked) < w and (f.saturating or f.backlog > 0):
            if not f.saturating:
                f.backlog -= 1
            dg = self._new_datagram(f)
            self._transmit_reliable(f, dg.seq, dg)

    def _transmit_reliable(self, f: Flow, seq: int, dg: Datagram | None = None) -> None:
        if dg is None:
            dg = Datagram(f, seq, f.spec.datagram_payload_bytes, f.spec.msdu_bytes, f.path)
        now = self.sim.now_us
        entry = f.unacked.get(seq)
        if entry is None:
            entry = f.unacked[seq] = [None, now, False]
        else:
            entry[0].cancel()
            entry[2] = True
            f.retransmissions += 1
        entry[0] = self.sim.schedule(now + self._rto(f), self._on_rto, f, seq, name="rto")
        self._send(dg)

    def _on_rto(self, f: Flow, seq: int) -> None:
        if seq in f.unacked:
            self._transmit_reliable(f, seq)

    def _send_ack(self, f: Flow) -> None:
        if f.ack_timer is not None:
            f.ack_timer.cancel()
            f.ack_timer = None
        if not f.pending_acks:
            return
        acks = tuple(f.pending_acks)
        f.pending_acks = []
        f.acks_sent += 1
        rp = self.config.reliable
        self._send(Datagram(f, -1, rp.ack_bytes, rp.ack_bytes, f.reverse, is_ack=True, acks=acks))

    def _on_ack(self, f: Flow, dg: Datagram) -> None:
        now = self.sim.now_us
        for seq in dg.acks:
            entry = f.unacked.pop(seq, None)
            if entry is None:
                continue
            entry[0].cancel()
            if not entry[2]:
                sample = now - entry[1]
                f.srtt_us = sample if f.srtt_us == 0 else 0.875 * f.srtt_us + 0.125 * sample
        self._pump(f)

    # -- measurement ---------------------------------------------------------
    def run(
        self,
        duration_us: int,
        on_window: Callable[[WindowStats, "Network"], float | None] | None = None,
    ) -> RunResult:
        """Simulate ``duration_us`` and snapshot every window.

        ``on_window`` sees the observer's stats at each boundary and may return
        a new media payload rate (bit/s) that applies from then on.
        """
        M = self.config.window_us
        if duration_us % M:
            raise ValueError(f"duration {duration_us} us is not a whole number of {M} us windows")
        self._start_flow(self.media, 0)
        for f in self.cross:
            self._start_flow(f, self.config.cross_start_us)

        observer_windows: list[WindowStats] = []
        windows: dict[str, list[WindowStats]] = {k: [] for k in self.stats}
        obs_bits: list[int] = []
        sink_bits: list[int] = []
        rates: list[float | None] = []
        taps = [t for ch in self.channels.values() for t in ch.taps.values()]

        def boundary(t: int) -> None:
            for ch in self.channels.values():
                ch.advance(t)
            snaps = {tap.link_id: tap.snapshot_and_reset() for tap in taps}
            path_q = tuple(snaps[tap.link_id] for tap in self._path_taps)
            obs = None
            for key, st in self.stats.items():
                ws = st.snapshot_and_reset(t, path_q if key == self.observer_key else ())
                windows[key].append(ws)
                if key == self.observer_key:
                    obs = ws
            observer_windows.append(obs)
            obs_bits.append(self._obs_bits)
            sink_bits.append(self._sink_bits)
            self._obs_bits = self._sink_bits = 0
            rates.append(self.media.current_rate_bps)
            if on_window is not None:
                new = on_window(obs, self)
                if new is not None:
                    self.set_media_rate(new)
            if t + M <= duration_us:
                self.sim.schedule(t + M, boundary, t + M, name="window")

        self.sim.schedule(M, boundary, M, name="window")
        self.sim.run_until(duration_us)
        return RunResult(
            observer=observer_windows[-1] if observer_windows else None,
            observer_windows=observer_windows,
            windows=windows,
            observer_delivered_bits=obs_bits,
            sink_payload_bits=sink_bits,
            source_rate_bps=rates,
            duration_us=duration_us,
            media=self.media,
            cross=self.cross,
            events=self.sim.processed,
            trace=self.sim.trace,
        )

    def set_media_rate(self, rate_bps: float) -> None:
        self.media.source.rate_bps = rate_bps
        self.media.rate_override = rate_bps


def measure_capacity(
    topology: Topology | str,
    seed: int = 0,
    duration_s: float = 30.0,
    transport: str = "unreliable",
    config: NetConfig | None = None,
    payload_bytes: int = DEFAULT_PAYLOAD_BYTES,
) -> float:
    """Push as much as the path takes; return delivered payload bit/s at the sink."""
    config = config or NetConfig()
    duration_us = int(round(duration_s * 1e6))
    duration_us -= duration_us % config.window_us
    flow = FlowSpec(Saturating(), transport, payload_bytes, duration_s, config.header_bytes)
    net = Network(topology, flow, config, seed)
    return net.run(duration_us).goodput_bps


def mac_efficiency(phy_rate_bps: int, seed: int = 0, duration_s: float = 10.0) -> float:
    """Lossless lone-station payload goodput as a share of the phy rate."""
    cfg = NetConfig(phy_rate_bps=phy_rate_bps, loss=0.0)
    return measure_capacity("g", seed=seed, duration_s=duration_s, config=cfg) / phy_rate_bps


def calibrate_f_table(rates_bps=None, seed: int = 0, duration_s: float = 10.0, anchor: float = 24 / 54) -> dict[int, float]:
    """SS efficiency factor per phy rate.

    The factor at 54 Mbps is pinned to ``anchor``; other rates scale it by the
    simulated MAC efficiency relative to 54 Mbps.
    """
    from .medium import OFDM_RATES_BPS

    rates = list(rates_bps or OFDM_RATES_BPS)
    ref = mac_efficiency(54_000_000, seed, duration_s)
    return {int(r): round(anchor * mac_efficiency(int(r), seed, duration_s) / ref, 4) for r in rates}
