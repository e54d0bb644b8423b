#!/usr/bin/env python3
"""Train the two-stage model on the fixed synthetic task and print its scores.

Equivalent to the headline end-to-end benchmark: 400 swath-sparse training
pairs, 50 dense validation pairs, 2000 optimizer steps.
"""

import argparse
import time

from oya.benchmark import BenchmarkConfig, run_benchmark
from oya.training import TrainConfig
from oya.verification import STANDARD_THRESHOLDS


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--train-pairs", type=int, default=400)
    ap.add_argument("--val-pairs", type=int, default=50)
    args = ap.parse_args()

    bench = BenchmarkConfig(seed=args.seed, train_pairs=args.train_pairs, val_pairs=args.val_pairs)
    t0 = time.time()
    res = run_benchmark(bench, TrainConfig(steps=args.steps, seed=args.seed))
    print(f"elapsed: {(time.time() - t0) / 60:.1f} min")
    print(f"always-rain baseline CSI@0.2: {res['baseline_csi']:.4f}")
    rep = res["report"]
    for i, thr in enumerate(STANDARD_THRESHOLDS):
        print(
            f"threshold {thr}: CSI={rep.csi[i]:.4f} POD={rep.pod[i]:.4f} "
            f"FAR={rep.far[i]:.4f} Bias={rep.bias[i]:.4f}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
