#!/usr/bin/env python3
"""Compare steps-to-target for fine-tuned vs from-scratch training.

Pretrains on dense noisy targets, then measures the first training step at
which each variant reaches the CSI target on dense validation truth.
"""

import argparse
from statistics import median

from oya.benchmark import (
    BenchmarkConfig,
    build_pretrain_records,
    build_train_records,
    build_val_records,
    first_step_reaching,
)
from oya.training import TrainConfig, train


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--pretrain-steps", type=int, default=2000)
    ap.add_argument("--target-csi", type=float, default=0.80)
    ap.add_argument("--eval-every", type=int, default=50)
    ap.add_argument("--seeds", default="0,1,2")
    args = ap.parse_args()

    bench = BenchmarkConfig(seed=args.seed)
    train_recs = build_train_records(bench)
    val_recs = build_val_records(bench)
    clf_cfg, reg_cfg = bench.model_cfgs(bench.channels)

    print(f"pretraining {args.pretrain_steps} steps on dense noisy targets ...")
    pre = train(
        TrainConfig(steps=args.pretrain_steps, seed=args.seed, stage="pretrain"),
        build_pretrain_records(bench),
        classifier_cfg=clf_cfg,
        regressor_cfg=reg_cfg,
    )

    ratios = []
    for seed in (int(s) for s in args.seeds.split(",")):
        s_scratch = first_step_reaching(
            TrainConfig(steps=2000, seed=seed),
            train_recs,
            val_recs,
            args.target_csi,
            eval_every=args.eval_every,
            classifier_cfg=clf_cfg,
            regressor_cfg=reg_cfg,
        )
        s_ft = first_step_reaching(
            TrainConfig(steps=2000, seed=seed, stage="finetune"),
            train_recs,
            val_recs,
            args.target_csi,
            eval_every=args.eval_every,
            init=pre,
        )
        print(f"seed {seed}: scratch reaches at step {s_scratch}, finetune at step {s_ft}")
        if s_scratch and s_ft is not None:
            ratios.append(s_ft / max(1, s_scratch))
    if ratios:
        print(f"median finetune/scratch ratio: {median(ratios):.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
