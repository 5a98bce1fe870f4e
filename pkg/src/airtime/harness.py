"""Experiment runner: capacity probe, fixed-rate and adaptive runs, CSV reports.

Output layout for ``run(config)`` with ``out_dir`` set::

    <out>/run.json                 manifest (scenario, seed, parameters, capacity)
    <out>/summary.csv              one row per (scenario, rate, method)
    <out>/<cell>/windows.csv       one row per measurement window
    <out>/<cell>/links.csv         per-window sniffed link qualities
    <out>/<cell>/series.svg        optional plot

``<cell>`` is ``rate_<bps>`` for fixed-rate runs and ``adaptive`` otherwise.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from statistics import fmean
from typing import Iterable, Sequence

from .adaptation import AdaptationParams, AdaptationState, apply_to_source, step
from .estimators import SpParams, SsParams, sp_estimate, ss_estimate_window
from .ledger import DEFAULT_WINDOW_US, WindowStats, throughput
from .medium import ChannelSchedule, ScheduleSegment
from .network import NetConfig, Network, RunResult, measure_capacity
from .scenario import CBR, VBR, FlowSpec, Saturating, Topology, load_scenario, normalize, parse_topology

WINDOW_COLUMNS = (
    "window_index", "t_start_us", "tx_bits", "tx_us", "backoff_us", "other_us", "idle_us",
    "attempts", "intended", "queue_bits", "measured_bps", "sp_add_bps", "ss_add_bps",
    "total_sp_bps", "total_ss_bps", "avail_tx_rate_bps", "tx_delay_us", "tx_jitter_us",
)
SUMMARY_COLUMNS = (
    "scenario", "rate", "method", "capacity_bps", "windows", "mean_measured_bps",
    "mean_additional_bps", "mean_total_bps", "in_band_fraction",
)
LINK_COLUMNS = ("window_index", "link_id", "avg_phy_rate_bps", "retry_rate", "sample_count")
WARMUP_WINDOWS = 5
BAND = 0.2


class ReportError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    topology: str
    mode: str = "fixed"  # "fixed" | "adaptive"
    rates_bps: tuple[float, ...] = (1e6, 2e6, 4e6)
    method: str = "both"  # "sp" | "ss" | "both"
    seed: int = 0
    duration_s: float = 30.0
    window_us: int = DEFAULT_WINDOW_US
    out_dir: str | None = None
    loss: float = 0.0
    phy_rate_bps: int = 54_000_000
    transport: str = "unreliable"
    profile: str = "cbr"  # "cbr" | "vbr"
    burstiness: float = 2.0
    payload_bytes: int = 1316
    cross_start_s: float = 0.0
    initial_rate_bps: float = 1e6
    p: float | None = None
    f: float | None = None
    adaptation: dict = field(default_factory=dict)
    schedules: dict[str, list[tuple[float, float, float]]] = field(default_factory=dict)
    plot: bool = False
    jobs: int = 1
    capacity_bps: float | None = None  # skip the probe when given

    def __post_init__(self) -> None:
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"mode must be 'fixed' or 'adaptive', not {self.mode!r}")
        if self.method not in ("sp", "ss", "both"):
            raise ValueError(f"method must be sp, ss or both, not {self.method!r}")
        if self.window_us <= 0:
            raise ValueError("window must be positive")
        if self.duration_s * 1e6 < 10 * self.window_us:
            raise ValueError("duration must cover at least 10 measurement windows")
        if self.mode == "fixed" and (not self.rates_bps or any(r <= 0 for r in self.rates_bps)):
            raise ValueError("fixed mode needs positive rates")
        if self.profile not in ("cbr", "vbr"):
            raise ValueError(f"profile must be cbr or vbr, not {self.profile!r}")

    @property
    def duration_us(self) -> int:
        d = int(round(self.duration_s * 1e6))
        return d - d % self.window_us

    @classmethod
    def from_scenario(cls, path: str, **overrides) -> "ExperimentConfig":
        sc = load_scenario(path)
        kw: dict = {"topology": sc.topology}
        simple = {
            "seed": "seed", "duration_s": "duration_s", "loss": "loss", "transport": "transport",
            "profile": "profile", "burstiness": "burstiness", "payload_bytes": "payload_bytes",
            "cross_start_s": "cross_start_s",
        }
        for src, dst in simple.items():
            v = getattr(sc, src)
            if v is not None:
                kw[dst] = v
        if sc.window_ms is not None:
            kw["window_us"] = int(round(sc.window_ms * 1000))
        if sc.phy_rate_mbps is not None:
            kw["phy_rate_bps"] = int(round(sc.phy_rate_mbps * 1e6))
        if "p" in sc.estimators:
            kw["p"] = float(sc.estimators["p"])
        if "f" in sc.estimators:
            kw["f"] = float(sc.estimators["f"])
        kw["adaptation"] = dict(sc.adaptation)
        kw["schedules"] = {s.link: s.segments for s in sc.schedules}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


@dataclass
class WindowRow:
    window_index: int
    t_start_us: int
    tx_bits: int
    tx_us: int
    backoff_us: int
    other_us: int
    idle_us: int
    attempts: int
    intended: int
    queue_bits: int
    measured_bps: float
    sp_add_bps: float | None
    ss_add_bps: float | None
    total_sp_bps: float | None
    total_ss_bps: float | None
    avail_tx_rate_bps: float
    tx_delay_us: float
    tx_jitter_us: float
    # kept in memory only
    source_rate_bps: float | None = None
    branch: str = ""
    delivered_bits: int = 0
    links: tuple = ()

    def csv_values(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in WINDOW_COLUMNS]


@dataclass
class Summary:
    scenario: str
    rate: str
    method: str
    capacity_bps: float
    windows: int
    mean_measured_bps: float
    mean_additional_bps: float
    mean_total_bps: float
    in_band_fraction: float


@dataclass
class CellReport:
    name: str
    rate_bps: float | None
    rows: list[WindowRow]
    summaries: list[Summary]


@dataclass
class RunReport:
    scenario: str
    seed: int
    capacity_bps: float
    cells: list[CellReport]
    manifest: dict

    @property
    def summaries(self) -> list[Summary]:
        return [s for c in self.cells for s in c.summaries]

    def cell(self, name: str) -> CellReport:
        for c in self.cells:
            if c.name == name:
                return c
        raise KeyError(name)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ------------------------------------------------------------ assembly ---
def net_config(cfg: ExperimentConfig) -> NetConfig:
    schedules = {}
    for link, segs in cfg.schedules.items():
        schedules[link] = ChannelSchedule(
            [ScheduleSegment(int(round(s * 1e6)), float(loss), int(round(r * 1e6))) for s, loss, r in segs]
        )
    return NetConfig(
        window_us=cfg.window_us,
        phy_rate_bps=cfg.phy_rate_bps,
        loss=cfg.loss,
        schedules=schedules,
        cross_start_us=int(round(cfg.cross_start_s * 1e6)),
        cross_payload_bytes=cfg.payload_bytes,
    )


def estimator_params(topology: Topology, cfg: ExperimentConfig) -> tuple[SpParams, SsParams]:
    sp = SpParams(cfg.p) if cfg.p is not None else SpParams.for_hops(topology.same_channel_hops())
    if cfg.f is not None:
        ss = SsParams(cfg.f)
    else:
        nc = net_config(cfg)
        slowest = min(nc.schedule_for(h.link_id).segments[0].phy_rate_bps for h in topology.wireless_hops)
        ss = SsParams.for_rate(slowest)
    return sp, ss


def _flow(cfg: ExperimentConfig, rate_bps: float) -> FlowSpec:
    profile = CBR(rate_bps) if cfg.profile == "cbr" else VBR(rate_bps, cfg.burstiness)
    return FlowSpec(profile, cfg.transport, cfg.payload_bytes, cfg.duration_s)


def run_cell(cfg: ExperimentConfig, rate_bps: float | None, capacity_bps: float) -> CellReport:
    """One traffic run; ``rate_bps=None`` means adaptive mode."""
    topology = parse_topology(cfg.topology)
    sp_params, ss_params = estimator_params(topology, cfg)
    adaptive = rate_bps is None
    start_rate = cfg.initial_rate_bps if adaptive else rate_bps
    ap = AdaptationParams.for_window(cfg.window_us, **cfg.adaptation)
    want_sp = cfg.method in ("sp", "both")
    want_ss = cfg.method in ("ss", "both")
    control_ss = adaptive and cfg.method == "ss"

    net = Network(topology, _flow(cfg, start_rate), net_config(cfg), cfg.seed)
    state = AdaptationState()
    last = {"sp": 0.0, "ss": 0.0}
    rows: list[WindowRow] = []
    rate_now = [start_rate]

    def on_window(ws: WindowStats, _net: Network) -> float | None:
        nonlocal state
        measured = throughput(ws)
        sp = ss = None
        if want_sp:
            e = sp_estimate(ws, sp_params)
            sp = last["sp"] = e if e is not None else last["sp"]
        if want_ss or control_ss:
            e = ss_estimate_window(ws, ss_params)
            ss_val = last["ss"] = e if e is not None else last["ss"]
            if want_ss:
                ss = ss_val
        out, state = step(ws, ap, state, last["ss"] if control_ss else None)
        rows.append(
            WindowRow(
                window_index=ws.window_index,
                t_start_us=ws.t_start_us,
                tx_bits=ws.tx_bits,
                tx_us=ws.ledger.tx_us,
                backoff_us=ws.ledger.backoff_us,
                other_us=ws.ledger.other_us,
                idle_us=ws.ledger.idle_us,
                attempts=ws.attempts,
                intended=ws.intended_packets,
                queue_bits=ws.tx_queue_depth_bits,
                measured_bps=measured,
                sp_add_bps=sp,
                ss_add_bps=ss,
                total_sp_bps=None if sp is None else measured + sp,
                total_ss_bps=None if ss is None else measured + ss,
                avail_tx_rate_bps=out.avail_tx_rate_bps,
                tx_delay_us=out.tx_delay_us,
                tx_jitter_us=out.tx_jitter_us,
                source_rate_bps=rate_now[0],
                branch=out.branch,
                links=ws.links,
            )
        )
        if adaptive:
            rate_now[0] = apply_to_source(out, ap)
            return rate_now[0]
        return None

    result: RunResult = net.run(cfg.duration_us, on_window)
    for row, bits in zip(rows, result.observer_delivered_bits):
        row.delivered_bits = bits
    scenario = normalize(cfg.topology)
    label = "adaptive" if adaptive else str(int(round(rate_bps)))
    methods = [m for m in ("sp", "ss") if (m == "sp" and want_sp) or (m == "ss" and want_ss)]
    summaries = [summarize(rows, scenario, label, m, capacity_bps) for m in methods]
    return CellReport("adaptive" if adaptive else f"rate_{label}", rate_bps, rows, summaries)


def _probe(cfg: ExperimentConfig) -> float:
    return measure_capacity(
        cfg.topology, seed=cfg.seed, duration_s=cfg.duration_us / 1e6, transport=cfg.transport,
        config=net_config(cfg), payload_bytes=cfg.payload_bytes,
    )


def run(cfg: ExperimentConfig) -> RunReport:
    """Capacity probe, then every traffic cell, then (optionally) files."""
    parse_topology(cfg.topology)
    capacity = cfg.capacity_bps if cfg.capacity_bps is not None else _probe(cfg)
    rates: list[float | None] = [None] if cfg.mode == "adaptive" else list(cfg.rates_bps)
    if cfg.jobs > 1 and len(rates) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            cells = list(ex.map(run_cell, [cfg] * len(rates), rates, [capacity] * len(rates)))
    else:
        cells = [run_cell(cfg, r, capacity) for r in rates]
    topology = parse_topology(cfg.topology)
    sp_params, ss_params = estimator_params(topology, cfg)
    manifest = {
        "scenario": normalize(cfg.topology),
        "seed": cfg.seed,
        "mode": cfg.mode,
        "method": cfg.method,
        "duration_us": cfg.duration_us,
        "window_us": cfg.window_us,
        "loss": cfg.loss,
        "phy_rate_bps": cfg.phy_rate_bps,
        "transport": cfg.transport,
        "profile": cfg.profile,
        "payload_bytes": cfg.payload_bytes,
        "cross_start_s": cfg.cross_start_s,
        "p": sp_params.p,
        "f": ss_params.f,
        "capacity_bps": capacity,
        "cells": [c.name for c in cells],
        "warmup_windows": WARMUP_WINDOWS,
        "band": BAND,
    }
    report = RunReport(normalize(cfg.topology), cfg.seed, capacity, cells, manifest)
    if cfg.out_dir is not None:
        write_report(report, cfg.out_dir, plot=cfg.plot)
    return report


# ------------------------------------------------------------- metrics ---
def in_band_fraction(rows: Sequence[WindowRow], capacity_bps: float, band: float = BAND, method: str = "sp") -> float:
    """Share of non-empty windows whose total estimate is within ``band`` of capacity.

    Windows in which the source sent nothing are left out of the denominator.
    """
    if band <= 0:
        raise ValueError("band must be positive")
    if not rows:
        raise ValueError("no rows")
    key = "total_sp_bps" if method == "sp" else "total_ss_bps"
    counted = [r for r in rows if r.tx_bits > 0 and getattr(r, key) is not None]
    if not counted:
        return 0.0
    hits = sum(1 for r in counted if abs(getattr(r, key) - capacity_bps) <= band * capacity_bps)
    return hits / len(counted)


def summarize(rows: Sequence[WindowRow], scenario: str, rate: str, method: str, capacity_bps: float) -> Summary:
    body = list(rows[WARMUP_WINDOWS:])
    if not body:
        raise ValueError("run too short for the warm-up")
    add_key = "sp_add_bps" if method == "sp" else "ss_add_bps"
    adds = [getattr(r, add_key) for r in body]
    if any(a is None for a in adds):
        raise ValueError(f"method {method} was not computed for this run")
    measured = fmean(r.measured_bps for r in body)
    additional = fmean(adds)
    total = fmean(r.measured_bps + a for r, a in zip(body, adds))
    return Summary(
        scenario=scenario,
        rate=rate,
        method=method,
        capacity_bps=capacity_bps,
        windows=len(body),
        mean_measured_bps=measured,
        mean_additional_bps=additional,
        mean_total_bps=total,
        in_band_fraction=in_band_fraction(body, capacity_bps, BAND, method),
    )


def compare_methods(report_a: RunReport, report_b: RunReport) -> list[dict]:
    """Side-by-side summary table of two runs over the same scenario and seed."""
    ma, mb = report_a.manifest, report_b.manifest
    for key in ("scenario", "seed", "duration_us", "window_us", "loss", "phy_rate_bps", "transport", "profile"):
        if ma.get(key) != mb.get(key):
            raise ReportError(f"reports differ in {key}: {ma.get(key)!r} vs {mb.get(key)!r}")
    table = []
    for rep, tag in ((report_a, "a"), (report_b, "b")):
        for s in rep.summaries:
            table.append({"run": tag, **asdict(s)})
    table.sort(key=lambda r: (_rate_key(r["rate"]), r["method"], r["run"]))
    return table


def _rate_key(rate: str) -> float:
    return math.inf if rate == "adaptive" else float(rate)


def format_table(table: list[dict]) -> str:
    head = f"{'rate':>10} {'method':>6} {'run':>3} {'measured':>10} {'additional':>11} {'total':>10} {'capacity':>10} {'in-band':>8}"
    lines = [head]
    for r in table:
        rate = r["rate"] if r["rate"] == "adaptive" else f"{float(r['rate']) / 1e6:g}M"
        lines.append(
            f"{rate:>10} {r['method']:>6} {r['run']:>3} {r['mean_measured_bps'] / 1e6:10.3f} "
            f"{r['mean_additional_bps'] / 1e6:11.3f} {r['mean_total_bps'] / 1e6:10.3f} "
            f"{r['capacity_bps'] / 1e6:10.3f} {r['in_band_fraction']:8.3f}"
        )
    return "\n".join(lines)


# ------------------------------------------------------------------ IO ---
def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def _csv(header: Iterable[str], rows: Iterable[Iterable[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_report(report: RunReport, out_dir: str | Path, plot: bool = False) -> None:
    out = Path(out_dir)
    _write(out / "run.json", json.dumps(report.manifest, indent=2, sort_keys=True) + "\n")
    _write(out / "summary.csv", _csv(SUMMARY_COLUMNS, ([_fmt(getattr(s, c)) for c in SUMMARY_COLUMNS] for s in report.summaries)))
    for cell in report.cells:
        _write(out / cell.name / "windows.csv", _csv(WINDOW_COLUMNS, (r.csv_values() for r in cell.rows)))
        link_rows = (
            [str(r.window_index), lq.link_id, _fmt(float(lq.avg_phy_rate_bps)), _fmt(lq.retry_rate), str(lq.sample_count)]
            for r in cell.rows
            for lq in r.links
        )
        _write(out / cell.name / "links.csv", _csv(LINK_COLUMNS, link_rows))
        if plot:
            _write(out / cell.name / "series.svg", render_svg(cell, report.capacity_bps))


def _parse_cell(v: str, col: str):
    if v == "":
        return None
    if col in ("measured_bps", "sp_add_bps", "ss_add_bps", "total_sp_bps", "total_ss_bps",
               "avail_tx_rate_bps", "tx_delay_us", "tx_jitter_us"):
        return float(v)
    return int(v)


def load_report(out_dir: str | Path, verify: bool = True) -> RunReport:
    """Read a run directory back; with ``verify`` the summary is recomputed from the windows."""
    out = Path(out_dir)
    try:
        manifest = json.loads((out / "run.json").read_text())
        with open(out / "summary.csv", newline="") as fh:
            srows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ReportError(f"cannot read report in {out}: {exc}") from exc
    cells = []
    for name in manifest["cells"]:
        with open(out / name / "windows.csv", newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != WINDOW_COLUMNS:
                raise ReportError(f"{out / name / 'windows.csv'}: unexpected columns")
            rows = [WindowRow(**{c: _parse_cell(r[c], c) for c in WINDOW_COLUMNS}) for r in reader]
        label = "adaptive" if name == "adaptive" else name.removeprefix("rate_")
        sums = []
        for s in srows:
            if s["rate"] != label:
                continue
            sums.append(
                Summary(
                    scenario=s["scenario"], rate=s["rate"], method=s["method"],
                    capacity_bps=float(s["capacity_bps"]), windows=int(s["windows"]),
                    mean_measured_bps=float(s["mean_measured_bps"]),
                    mean_additional_bps=float(s["mean_additional_bps"]),
                    mean_total_bps=float(s["mean_total_bps"]),
                    in_band_fraction=float(s["in_band_fraction"]),
                )
            )
        if verify:
            for s in sums:
                again = summarize(rows, s.scenario, s.rate, s.method, s.capacity_bps)
                for fld in ("mean_measured_bps", "mean_additional_bps", "mean_total_bps", "in_band_fraction"):
                    a, b = getattr(s, fld), getattr(again, fld)
                    if not math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-9):
                        raise ReportError(f"{out}: summary {s.rate}/{s.method} {fld}={a} but windows give {b}")
        rate = None if label == "adaptive" else float(label)
        cells.append(CellReport(name, rate, rows, sums))
    return RunReport(manifest["scenario"], manifest["seed"], manifest["capacity_bps"], cells, manifest)


def render_svg(cell: CellReport, capacity_bps: float, width: int = 720, height: int = 300) -> str:
    """Per-window total estimates against the capacity line and the +-20% band."""
    pad = 40
    n = max(1, len(cell.rows))
    series = []
    for key, colour in (("total_sp_bps", "#1f77b4"), ("total_ss_bps", "#d62728"), ("measured_bps", "#555555")):
        vals = [getattr(r, key) for r in cell.rows]
        if any(v is None for v in vals):
            continue
        series.append((key, colour, vals))
    top = max([capacity_bps * 1.5] + [max(v) for _, _, v in series])
    sx = lambda i: pad + (width - 2 * pad) * i / max(1, n - 1)
    sy = lambda v: height - pad - (height - 2 * pad) * v / top
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="20" font-family="sans-serif" font-size="12">{cell.name}: total estimate per window (Mbps)</text>',
    ]
    for v, colour, dash in ((capacity_bps, "#ff8c00", ""), (capacity_bps * (1 + BAND), "#2ca02c", "4 3"), (capacity_bps * (1 - BAND), "#2ca02c", "4 3")):
        y = sy(v)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        parts.append(f'<line x1="{pad}" y1="{y:.1f}" x2="{width - pad}" y2="{y:.1f}" stroke="{colour}"{dash_attr}/>')
    for key, colour, vals in series:
        pts = " ".join(f"{sx(i):.1f},{sy(v):.1f}" for i, v in enumerate(vals))
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1" points="{pts}"><title>{key}</title></polyline>')
    parts.append(f'<text x="{pad}" y="{height - 10}" font-family="sans-serif" font-size="10">0 .. {top / 1e6:.1f} Mbps, {n} windows</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def with_capacity(cfg: ExperimentConfig, capacity_bps: float) -> ExperimentConfig:
    return replace(cfg, capacity_bps=capacity_bps)


__all__ = [
    "BAND",
    "ExperimentConfig",
    "RunReport",
    "Saturating",
    "WindowRow",
    "compare_methods",
    "in_band_fraction",
    "load_report",
    "run",
    "run_cell",
    "summarize",
    "write_report",
]
