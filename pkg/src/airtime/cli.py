"""Command line: ``airtime run | capacity | compare``.

Rates on the command line are in Mbps; files and reports use bit/s.
"""
from __future__ import annotations

import argparse
import sys

from . import harness
from .scenario import TopologyError, normalize, parse_topology


def _rates(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) * 1e6 for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rate list {text!r}; expected e.g. 1,2,4")
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("rates must be positive")
    return vals


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--topology", help="topology spec, e.g. 'g-AP-g X5'")
    p.add_argument("--scenario", help="YAML scenario file (command-line flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="seconds")
    p.add_argument("--window-ms", type=float)
    p.add_argument("--loss", type=float, help="per-attempt loss probability on every wireless link")
    p.add_argument("--phy-rate", type=float, help="Mbps")
    p.add_argument("--transport", choices=("unreliable", "reliable_simplified"))
    p.add_argument("--payload-bytes", type=int)
    p.add_argument("--cross-start", type=float, help="seconds before cross traffic begins")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="airtime", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="estimate bandwidth at fixed rates or run the adaptive loop")
    _common(r)
    r.add_argument("--mode", choices=("fixed", "adaptive"), default="fixed")
    r.add_argument("--rates", type=_rates, help="comma-separated Mbps (fixed mode)")
    r.add_argument("--method", choices=("sp", "ss", "both"), default="both")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--profile", choices=("cbr", "vbr"))
    r.add_argument("--burstiness", type=float)
    r.add_argument("--initial-rate", type=float, help="Mbps, adaptive start rate")
    r.add_argument("--p", type=float, help="SP discount (default 0.8 / same-channel hops)")
    r.add_argument("--f", type=float, help="SS efficiency factor (default from phy rate)")
    r.add_argument("--plot", action="store_true", help="write series.svg per cell")
    r.add_argument("--jobs", type=int, default=1, help="parallel cells")

    c = sub.add_parser("capacity", help="saturate the path and report delivered payload rate")
    _common(c)

    m = sub.add_parser("compare", help="side-by-side summaries of two run directories")
    m.add_argument("dirs", nargs=2, metavar="DIR")
    return ap


def _config(args: argparse.Namespace, **extra) -> harness.ExperimentConfig:
    over = dict(
        topology=args.topology,
        seed=args.seed,
        duration_s=args.duration,
        window_us=None if args.window_ms is None else int(round(args.window_ms * 1000)),
        loss=args.loss,
        phy_rate_bps=None if args.phy_rate is None else int(round(args.phy_rate * 1e6)),
        transport=args.transport,
        payload_bytes=args.payload_bytes,
        cross_start_s=args.cross_start,
        **extra,
    )
    if args.scenario:
        return harness.ExperimentConfig.from_scenario(args.scenario, **over)
    if not args.topology:
        raise ValueError("give --topology or --scenario")
    return harness.ExperimentConfig(**{k: v for k, v in over.items() if v is not None})


def _run(args: argparse.Namespace) -> int:
    if args.mode == "fixed" and args.rates is None and not args.scenario:
        raise ValueError("fixed mode needs --rates")
    cfg = _config(
        args,
        mode=args.mode,
        rates_bps=args.rates,
        method=args.method,
        out_dir=args.out,
        profile=args.profile,
        burstiness=args.burstiness,
        initial_rate_bps=None if args.initial_rate is None else args.initial_rate * 1e6,
        p=args.p,
        f=args.f,
        plot=args.plot or None,
        jobs=args.jobs,
    )
    report = harness.run(cfg)
    print(f"scenario {report.scenario}  seed {report.seed}  capacity {report.capacity_bps / 1e6:.3f} Mbps")
    table = [{"run": "", **vars(s)} for s in report.summaries]
    print(harness.format_table(table))
    print(f"wrote {args.out}")
    return 0


def _capacity(args: argparse.Namespace) -> int:
    cfg = _config(args, rates_bps=(1e6,))
    cap = harness._probe(cfg)
    print(f"{normalize(cfg.topology)}\t{cap:.0f} bps\t({cap / 1e6:.3f} Mbps)")
    return 0


def _compare(args: argparse.Namespace) -> int:
    a, b = (harness.load_report(d) for d in args.dirs)
    print(f"a = {args.dirs[0]}\nb = {args.dirs[1]}")
    print(harness.format_table(harness.compare_methods(a, b)))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "topology", None):
            parse_topology(args.topology)
        return {"run": _run, "capacity": _capacity, "compare": _compare}[args.cmd](args)
    except TopologyError as exc:
        print(f"airtime: bad topology: {exc}", file=sys.stderr)
    except (ValueError, KeyError, OSError) as exc:
        print(f"airtime: error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
