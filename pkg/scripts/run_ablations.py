#!/usr/bin/env python3
"""Run the full ablation table on the synthetic task and write the CSV."""

import argparse
from pathlib import Path

from oya.ablation import AXES, run_ablation, write_ablation_csv
from oya.benchmark import BenchmarkConfig
from oya.training import TrainConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="ablation.csv")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--steps", type=int, default=600)
    ap.add_argument("--axis", choices=AXES + ("all",), default="all")
    args = ap.parse_args()

    axes = AXES if args.axis == "all" else (args.axis,)
    rows = run_ablation(axes, BenchmarkConfig(seed=args.seed), TrainConfig(steps=args.steps, seed=args.seed))
    write_ablation_csv(Path(args.out), rows)
    for row in rows:
        print(f"{row.axis:12s} {row.variant:14s} " + " ".join(f"{v:.4f}" for v in row.csi))
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
