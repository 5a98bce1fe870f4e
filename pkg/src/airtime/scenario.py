"""Topology strings, flow descriptions and traffic sources.

Topology grammar::

    spec  := hop ("-" hop)* (" " extra)*
    hop   := "g" | "a" | "w" | "AP" | "dls"
    extra := "X" float | "seed=" int | "ch=" int ("," int)*

``g``/``a`` are 802.11g/802.11a hops, ``w`` a wired hop, ``AP`` a relaying
access point. ``dls`` turns the preceding ``<wireless>-AP-<wireless>`` into a
single direct station-to-station hop; the AP stays on the channel as a
listener. Two link tokens in a row imply a relaying station between them.
``Xn`` adds an n Mbps cross flow on the channel of the first wireless hop.
Without ``ch=`` every 802.11g hop uses channel 1 and every 802.11a hop uses
channel 36, so all hops of one band contend with each other.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import yaml

from .engine import RngStream

HOP_TOKENS = ("g", "a", "w", "AP", "dls")
WIRELESS = {"g": "11g", "a": "11a"}
DEFAULT_CHANNEL = {"11g": 1, "11a": 36}
CHANNEL_RANGE = {"11g": (1, 14), "11a": (36, 196)}
DEFAULT_PAYLOAD_BYTES = 7 * 188
DEFAULT_HEADER_BYTES = 80
VBR_FRAME_US = 33_000
_PEAK_Z = 1.6448536269514722  # 95th percentile of N(0, 1)


class TopologyError(ValueError):
    """Bad topology string; ``position`` is the 0-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.message = message
        self.position = position


@dataclass(frozen=True)
class Hop:
    link_id: str
    kind: str  # "wireless" | "wired"
    tx: str
    rx: str
    band: str | None = None
    channel: int | None = None
    dls: bool = False

    @property
    def wireless(self) -> bool:
        return self.kind == "wireless"


@dataclass(frozen=True)
class CrossFlow:
    rate_bps: float
    path: tuple[Hop, ...]


@dataclass(frozen=True)
class Topology:
    tokens: tuple[str, ...]
    nodes: tuple[str, ...]
    links: tuple[Hop, ...]
    media_path: tuple[Hop, ...]
    cross_flows: tuple[CrossFlow, ...] = ()
    listeners: tuple[tuple[str, int], ...] = ()  # (node, channel) pairs that only listen
    seed: int | None = None
    channels_override: tuple[int, ...] | None = None
    cross_rates_mbps: tuple[float, ...] = ()

    @property
    def wireless_hops(self) -> tuple[Hop, ...]:
        return tuple(h for h in self.media_path if h.wireless)

    @property
    def hop_count(self) -> int:
        return len(self.media_path)

    @property
    def observer(self) -> Hop:
        """First wireless hop of the media path; its transmitter runs the agent."""
        hops = self.wireless_hops
        if not hops:
            raise ValueError("topology has no wireless hop")
        return hops[0]

    def same_channel_hops(self) -> int:
        """Media-path wireless hops sharing the observer's channel."""
        ch = self.observer.channel
        return sum(1 for h in self.wireless_hops if h.channel == ch)


# ---------------------------------------------------------------- lexing ---
_EXTRA_X = re.compile(r"X([0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)$")
_EXTRA_SEED = re.compile(r"seed=(-?[0-9]+)$")
_EXTRA_CH = re.compile(r"ch=([0-9]+(?:,[0-9]+)*)$")


def _words(spec: str) -> list[tuple[str, int]]:
    return [(m.group(0), m.start()) for m in re.finditer(r"\S+", spec)]


def _lex(spec: str) -> tuple[list[tuple[str, int]], list[tuple[str, Any, int]]]:
    words = _words(spec)
    if not words:
        raise TopologyError("empty topology", 0)
    path_word, pos0 = words[0]
    hops: list[tuple[str, int]] = []
    pos = pos0
    for tok in path_word.split("-"):
        if tok not in HOP_TOKENS:
            raise TopologyError(f"unknown hop token {tok!r}; expected one of {', '.join(HOP_TOKENS)}", pos)
        hops.append((tok, pos))
        pos += len(tok) + 1
    extras: list[tuple[str, Any, int]] = []
    for word, wpos in words[1:]:
        if m := _EXTRA_X.match(word):
            rate = float(m.group(1))
            if not math.isfinite(rate) or rate <= 0:
                raise TopologyError(f"cross-traffic rate must be positive, got {word!r}", wpos)
            extras.append(("X", rate, wpos))
        elif word.startswith("X"):
            raise TopologyError(f"cross-traffic needs a numeric Mbps value, got {word!r}", wpos)
        elif m := _EXTRA_SEED.match(word):
            extras.append(("seed", int(m.group(1)), wpos))
        elif m := _EXTRA_CH.match(word):
            extras.append(("ch", tuple(int(c) for c in m.group(1).split(",")), wpos))
        else:
            raise TopologyError(f"unrecognised extra {word!r}", wpos)
    return hops, extras


def _fmt_float(x: float) -> str:
    return format(x, "g")


def _render(hops: list[str], extras: list[tuple[str, Any]]) -> str:
    parts = ["-".join(hops)]
    for kind, val in extras:
        if kind == "X":
            parts.append("X" + _fmt_float(val))
        elif kind == "seed":
            parts.append(f"seed={val}")
        else:
            parts.append("ch=" + ",".join(str(c) for c in val))
    return " ".join(parts)


def normalize(spec: str) -> str:
    """Canonical spelling of a topology string.

    Collapses whitespace, prints numbers in shortest form and orders extras as
    cross flows (in given order), then seed, then channels.
    """
    hops, extras = _lex(spec)
    rank = {"X": 0, "seed": 1, "ch": 2}
    ordered = sorted(((k, v) for k, v, _ in extras), key=lambda kv: rank[kv[0]])
    return _render([h for h, _ in hops], ordered)


def unparse(topology: Topology) -> str:
    extras: list[tuple[str, Any]] = [("X", r) for r in topology.cross_rates_mbps]
    if topology.seed is not None:
        extras.append(("seed", topology.seed))
    if topology.channels_override is not None:
        extras.append(("ch", topology.channels_override))
    return _render(list(topology.tokens), extras)


# --------------------------------------------------------------- parsing ---
def parse_topology(spec: str) -> Topology:
    hops, extras = _lex(spec)

    # dls rewriting: [L, AP, L, dls] -> one direct hop
    items: list[dict] = []
    for tok, pos in hops:
        if tok == "dls":
            if len(items) < 3 or items[-2]["tok"] != "AP":
                raise TopologyError("dls must follow a <wireless>-AP-<wireless> segment", pos)
            a, ap, b = items[-3], items[-2], items[-1]
            if a["tok"] not in WIRELESS or b["tok"] not in WIRELESS:
                raise TopologyError("dls needs wireless hops on both sides of the AP", pos)
            if a["tok"] != b["tok"]:
                raise TopologyError("dls needs both hops in the same band", pos)
            del items[-3:]
            items.append({"tok": a["tok"], "pos": a["pos"], "dls": True, "ap": True})
            continue
        items.append({"tok": tok, "pos": pos, "dls": False, "ap": False})

    if items[0]["tok"] == "AP":
        raise TopologyError("path must start with a link, not an AP", items[0]["pos"])
    if items[-1]["tok"] == "AP":
        raise TopologyError("path must end with a link, not an AP", items[-1]["pos"])
    for prev, cur in zip(items, items[1:]):
        if prev["tok"] == "AP" and cur["tok"] == "AP":
            raise TopologyError("two APs in a row with no link between them", cur["pos"])

    link_items = [it for it in items if it["tok"] != "AP"]
    n_wireless = sum(1 for it in link_items if it["tok"] in WIRELESS)
    if n_wireless == 0:
        raise TopologyError("path needs at least one wireless hop", items[0]["pos"])

    seed = None
    ch_override: tuple[int, ...] | None = None
    cross_rates: list[float] = []
    for kind, val, pos in extras:
        if kind == "X":
            cross_rates.append(val)
        elif kind == "seed":
            if seed is not None:
                raise TopologyError("seed given twice", pos)
            seed = val
        else:
            if ch_override is not None:
                raise TopologyError("ch given twice", pos)
            if len(val) != n_wireless:
                raise TopologyError(f"ch= lists {len(val)} channels for {n_wireless} wireless hops", pos)
            bands = [WIRELESS[it["tok"]] for it in link_items if it["tok"] in WIRELESS]
            for band, c in zip(bands, val):
                lo, hi = CHANNEL_RANGE[band]
                if not lo <= c <= hi:
                    raise TopologyError(f"channel {c} is outside {lo}..{hi} for {band}", pos)
            ch_override = val

    nodes = ["src"]
    media: list[Hop] = []
    listeners: list[tuple[str, int]] = []
    relay = ap = 0
    wi = 0
    pending_ap = False
    for it in items:
        if it["tok"] == "AP":
            pending_ap = True
            continue
        if media:
            if pending_ap:
                name = f"ap{ap}"
                ap += 1
            else:
                name = f"relay{relay}"
                relay += 1
            nodes.append(name)
        pending_ap = False
        tx = nodes[-1]
        link_id = f"hop{len(media)}"
        if it["tok"] in WIRELESS:
            band = WIRELESS[it["tok"]]
            channel = ch_override[wi] if ch_override else DEFAULT_CHANNEL[band]
            wi += 1
            media.append(Hop(link_id, "wireless", tx, "", band, channel, it["dls"]))
            if it["ap"]:
                listeners.append((f"ap{ap}", channel))
                ap += 1
        else:
            media.append(Hop(link_id, "wired", tx, ""))
    nodes.append("dst")
    # receivers are known once every node is named
    fixed: list[Hop] = []
    for k, h in enumerate(media):
        rx = media[k + 1].tx if k + 1 < len(media) else "dst"
        fixed.append(Hop(h.link_id, h.kind, h.tx, rx, h.band, h.channel, h.dls))
    media = fixed
    nodes.extend(n for n, _ in listeners)

    cross: list[CrossFlow] = []
    if cross_rates:
        wl = [h for h in media if h.wireless]
        if not wl:
            raise TopologyError("cross traffic needs a wireless hop to share", extras[0][2])
        first = wl[0]
        for i, r in enumerate(cross_rates):
            hop = Hop(f"x{i}", "wireless", f"xsrc{i}", f"xdst{i}", first.band, first.channel)
            cross.append(CrossFlow(r * 1e6, (hop,)))
            nodes.extend([hop.tx, hop.rx])

    links = tuple(media) + tuple(h for c in cross for h in c.path)
    return Topology(
        tokens=tuple(h for h, _ in hops),
        nodes=tuple(nodes),
        links=links,
        media_path=tuple(media),
        cross_flows=tuple(cross),
        listeners=tuple(listeners),
        seed=seed,
        channels_override=ch_override,
        cross_rates_mbps=tuple(cross_rates),
    )


# ----------------------------------------------------------------- flows ---
@dataclass(frozen=True)
class CBR:
    rate_bps: float

    def __post_init__(self) -> None:
        if not self.rate_bps > 0:
            raise ValueError("CBR rate must be positive")


@dataclass(frozen=True)
class VBR:
    mean_bps: float
    burstiness: float = 2.0

    def __post_init__(self) -> None:
        if not self.mean_bps > 0:
            raise ValueError("VBR mean rate must be positive")
        if not self.burstiness > 1.0:
            raise ValueError("burstiness is a peak/mean ratio and must exceed 1")


@dataclass(frozen=True)
class Saturating:
    pass


Profile = Union[CBR, VBR, Saturating]


@dataclass(frozen=True)
class FlowSpec:
    profile: Profile
    transport: str = "unreliable"
    datagram_payload_bytes: int = DEFAULT_PAYLOAD_BYTES
    duration_s: float = 30.0
    header_bytes: int = DEFAULT_HEADER_BYTES

    def __post_init__(self) -> None:
        if self.transport not in ("unreliable", "reliable_simplified"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.datagram_payload_bytes <= 0:
            raise ValueError("datagram payload must be positive")

    @property
    def msdu_bytes(self) -> int:
        return self.datagram_payload_bytes + self.header_bytes

    @property
    def overhead_factor(self) -> float:
        return self.msdu_bytes / self.datagram_payload_bytes


def vbr_sigma(burstiness: float) -> float:
    """Log-normal sigma whose 95th percentile sits at ``burstiness`` x the mean.

    Solves ``exp(z*s - s^2/2) = b`` for the smaller root.
    """
    disc = _PEAK_Z**2 - 2.0 * math.log(burstiness)
    if disc < 0:
        raise ValueError(f"burstiness {burstiness} too large for a log-normal frame model")
    return _PEAK_Z - math.sqrt(disc)


class TrafficSource:
    """Datagram emission schedule for one flow.

    ``next_datagram`` returns the next ``(emit_time_us, payload_bytes)``; the
    first call emits at ``now_us``. ``rate_override_bps`` replaces the
    profile's rate from that emission on.
    """

    def __init__(self, flow: FlowSpec, rng: RngStream | None = None, start_us: int = 0):
        self.flow = flow
        self.rng = rng
        self.payload = flow.datagram_payload_bytes
        self._last: int | None = None
        self._carry = 0
        self._burst_left = 0
        self._frame_time = start_us
        self._budget_bytes = 0.0
        prof = flow.profile
        if isinstance(prof, VBR):
            if rng is None:
                raise ValueError("VBR needs a random stream")
            self._sigma = vbr_sigma(prof.burstiness)
        self.rate_bps = prof.rate_bps if isinstance(prof, CBR) else prof.mean_bps if isinstance(prof, VBR) else None

    def next_datagram(self, now_us: int, rate_override_bps: float | None = None) -> tuple[int, int]:
        if rate_override_bps is not None:
            self.rate_bps = rate_override_bps
        prof = self.flow.profile
        if isinstance(prof, Saturating):
            return now_us, self.payload
        if isinstance(prof, CBR):
            return self._next_cbr(now_us), self.payload
        return self._next_vbr(now_us), self.payload

    def _next_cbr(self, now_us: int) -> int:
        if self._last is None:
            self._last = now_us
            return now_us
        rate = max(1, int(round(self.rate_bps)))
        num = self.payload * 8 * 1_000_000 + self._carry
        gap, self._carry = divmod(num, rate)
        self._last = max(self._last + gap, now_us)
        return self._last

    def _next_vbr(self, now_us: int) -> int:
        if self._last is None:
            self._frame_time = now_us
            self._new_frame()
            self._last = now_us
        while self._burst_left == 0:
            self._frame_time += VBR_FRAME_US
            self._new_frame()
        self._burst_left -= 1
        return max(self._frame_time, now_us)

    def _new_frame(self) -> None:
        s = self._sigma
        size = math.exp(s * self.rng.normal() - 0.5 * s * s)
        self._budget_bytes += self.rate_bps * VBR_FRAME_US / 8e6 * size
        n = int(self._budget_bytes // self.payload)
        self._budget_bytes -= n * self.payload
        self._burst_left = n


# --------------------------------------------------------- scenario file ---
@dataclass
class ScheduleSpec:
    link: str  # hop id, "x0", ... or "*"
    segments: list[tuple[float, float, float]]  # (start_s, loss, rate_mbps)


@dataclass
class ScenarioFile:
    """Contents of a YAML scenario file. Unset fields fall back to CLI/harness defaults."""

    topology: str
    seed: int | None = None
    window_ms: float | None = None
    duration_s: float | None = None
    phy_rate_mbps: float | None = None
    loss: float | None = None
    transport: str | None = None
    profile: str | None = None
    burstiness: float | None = None
    payload_bytes: int | None = None
    cross_start_s: float | None = None
    schedules: list[ScheduleSpec] = field(default_factory=list)
    estimators: dict[str, float] = field(default_factory=dict)
    adaptation: dict[str, float] = field(default_factory=dict)


_SCENARIO_KEYS = {
    "topology", "seed", "window_ms", "duration_s", "phy_rate_mbps", "loss", "transport",
    "profile", "burstiness", "payload_bytes", "cross_start_s", "channel_schedule",
    "estimators", "adaptation",
}


def load_scenario(path: str | Path) -> ScenarioFile:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read scenario {path}: {exc.strerror}") from exc
    if not isinstance(raw, dict) or "topology" not in raw:
        raise ValueError(f"{path}: scenario must be a mapping with a 'topology' key")
    unknown = set(raw) - _SCENARIO_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    parse_topology(raw["topology"])
    schedules = []
    for entry in raw.get("channel_schedule") or []:
        segs = [(float(s["start_s"]), float(s["loss"]), float(s["rate_mbps"])) for s in entry["segments"]]
        schedules.append(ScheduleSpec(str(entry.get("link", "*")), segs))
    scalars = {k: raw[k] for k in _SCENARIO_KEYS - {"channel_schedule"} if k in raw}
    return ScenarioFile(schedules=schedules, **scalars)


def measure_capacity(topology: Topology | str, seed: int = 0, duration_s: float = 30.0, **kwargs) -> float:
    """Saturating end-to-end probe; delivered payload bits per second at the sink."""
    from .network import measure_capacity as _measure

    return _measure(topology, seed=seed, duration_s=duration_s, **kwargs)
