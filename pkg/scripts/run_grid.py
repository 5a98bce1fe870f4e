"""Run the fixed-rate and adaptive experiment grid and write every report.

    python3 scripts/run_grid.py --out results [--duration 30] [--jobs 4]

Each topology gets ``<out>/<name>/fixed`` (rates 1, 2, 4, 8 Mbps, both
estimators) and ``<out>/<name>/adaptive`` (SP-driven loop), with SVG plots.
"""
import argparse
from pathlib import Path

from airtime import harness
from airtime.harness import ExperimentConfig

GRID = {
    "one_hop": ("g", None),
    "two_hop": ("g-AP-g", 0.4),
    "dls": ("g-AP-g-dls", None),
    "one_hop_x5": ("g X5", None),
    "two_hop_x5": ("g-AP-g X5", 0.4),
    "a_wired": ("a-AP-w", None),
}


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results")
    ap.add_argument("--duration", type=float, default=30.0)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--loss", type=float, default=0.01)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    for name, (topo, p) in GRID.items():
        common = dict(topology=topo, seed=args.seed, duration_s=args.duration, loss=args.loss, p=p, plot=True)
        fixed = harness.run(ExperimentConfig(mode="fixed", rates_bps=(1e6, 2e6, 4e6, 8e6), method="both",
                                             out_dir=str(out / name / "fixed"), jobs=args.jobs, **common))
        adaptive = harness.run(ExperimentConfig(mode="adaptive", method="sp", capacity_bps=fixed.capacity_bps,
                                                out_dir=str(out / name / "adaptive"), **common))
        print(f"== {name}: {topo}  capacity {fixed.capacity_bps / 1e6:.2f} Mbps")
        rows = [{"run": "", **vars(s)} for s in fixed.summaries + adaptive.summaries]
        print(harness.format_table(rows))


if __name__ == "__main__":
    main()
