"""Print the SS efficiency table from lossless single-station runs.

    python3 scripts/calibrate_f.py [--duration 10] [--seed 0]
"""
import argparse

from airtime.network import calibrate_f_table, mac_efficiency


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--duration", type=float, default=10.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    table = calibrate_f_table(seed=args.seed, duration_s=args.duration)
    print("F_TABLE = {")
    for rate, f in sorted(table.items()):
        eff = mac_efficiency(rate, args.seed, args.duration)
        print(f"    {rate:_}: {f},  # lone-station efficiency {eff:.4f}")
    print("}")


if __name__ == "__main__":
    main()
