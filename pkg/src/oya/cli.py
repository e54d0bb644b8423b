"""Command-line entry point.

Subcommands: synth, build-dataset, train, evaluate, infer, mosaic, ablate,
case-report. Config files are flat key/value text; command-line flags win
over config-file values. All randomness flows from --seed, so re-running a
command overwrites its artifacts with identical bytes. OYA_NUM_WORKERS caps
parallel data-generation workers (default 1).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import ablation, benchmark
from .checkpoint import load_checkpoint, save_checkpoint
from .data import class_histogram, histogram_table, split_by_period
from .grid import PatchRecord, collocate, tile_patches
from .inference import TwoStagePredictor
from .store import (
    read_grid_spec,
    read_field,
    read_patch_store,
    read_scene,
    read_swath_csv,
    write_field,
    write_patch_store,
)
from .synthetic import channel_set
from .training import TrainConfig, train
from .verification import (
    CellContingency,
    accumulate,
    case_report,
    merge,
    metrics,
    render_csi_field,
    write_metrics_csv,
    write_ppm,
)
from .mosaic import merge_global, satellite_coverage, write_global_product


def _num_workers() -> int:
    return max(1, int(os.environ.get("OYA_NUM_WORKERS", "1")))


def _parse_thresholds(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _parse_years(text: str) -> set[int]:
    years: set[int] = set()
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            years.update(range(int(a), int(b) + 1))
        else:
            years.add(int(part))
    return years


def _parse_channels(text: str):
    if text == "all":
        return None
    return tuple(int(v) for v in text.split(","))


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _bench_from_args(args) -> benchmark.BenchmarkConfig:
    return benchmark.BenchmarkConfig(
        seed=args.seed,
        channels=args.channels,
        patch=args.patch,
        train_pairs=args.pairs,
        val_pairs=args.val_pairs,
        pretrain_pairs=args.pretrain_pairs,
        pretrain_noise=args.noise_level,
        swath_width=args.swath_width,
        correlation_length=args.corr_length,
        model_depth=args.depth,
        model_width=args.width,
    )


def _write_store_with_histogram(root, records, grid, channels, split) -> None:
    write_patch_store(root, records, grid, channels, split=split)
    if records:
        (Path(root) / "class_histogram.txt").write_text(histogram_table(class_histogram(records)))


def cmd_synth(args) -> int:
    bench = _bench_from_args(args)
    workers = _num_workers()
    out = Path(args.out)
    channels = channel_set(bench.channels)
    grid = benchmark.window_grid(bench.patch)
    train_recs = benchmark.build_train_records(bench, workers=workers)
    _write_store_with_histogram(out / "train", train_recs, grid, channels, "train")
    val_recs = benchmark.build_val_records(bench, workers=workers)
    _write_store_with_histogram(out / "val", val_recs, grid, channels, "val")
    print(f"wrote {len(train_recs)} train and {len(val_recs)} val records to {out}")
    if bench.pretrain_pairs > 0:
        pre = benchmark.build_pretrain_records(bench, workers=workers)
        _write_store_with_histogram(out / "pretrain", pre, grid, channels, "pretrain")
        print(f"wrote {len(pre)} pretrain records to {out / 'pretrain'}")
    return 0


def cmd_build_dataset(args) -> int:
    scenes_dir = _require(args.scenes, "scenes directory")
    swaths_dir = _require(args.swaths, "swaths directory")
    stems = sorted(p.with_suffix("") for p in scenes_dir.glob("*.txt"))
    if not stems:
        raise FileNotFoundError(f"no scene files (*.txt) in {scenes_dir}")
    records = []
    grid = None
    channels = None
    for stem in stems:
        scene = read_scene(stem)
        swath = read_swath_csv(_require(swaths_dir / (stem.name + ".csv"), "swath file"))
        if grid is None:
            grid, channels = scene.grid, scene.channels
        elif scene.grid != grid:
            raise ValueError(f"scene {stem.name} grid differs from the first scene")
        records.extend(tile_patches(collocate(scene, swath), args.patch))
    train_recs, val_recs = split_by_period(
        records, _parse_years(args.train_years), _parse_years(args.val_years)
    )
    out = Path(args.out)
    _write_store_with_histogram(out / "train", train_recs, grid, channels, "train")
    _write_store_with_histogram(out / "val", val_recs, grid, channels, "val")
    print(f"wrote {len(train_recs)} train and {len(val_recs)} val records to {out}")
    return 0


def _train_config_from_args(args) -> TrainConfig:
    cfg = TrainConfig.from_file(_require(args.config, "config file")) if args.config else TrainConfig()
    overrides = {}
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.weight_decay is not None:
        overrides["weight_decay"] = args.weight_decay
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.class_weights is not None:
        overrides["class_weights"] = (
            None if args.class_weights == "auto" else tuple(float(v) for v in args.class_weights.split(","))
        )
    if args.decision_threshold is not None:
        overrides["decision_threshold"] = args.decision_threshold
    if args.stage is not None:
        overrides["stage"] = args.stage
    if args.no_augment:
        overrides["augment"] = False
    if args.no_lds:
        overrides["lds"] = False
    return replace(cfg, **overrides)


def cmd_train(args) -> int:
    store = read_patch_store(_require(args.data, "patch store"))
    cfg = _train_config_from_args(args)
    init = load_checkpoint(_require(args.init, "init checkpoint")) if args.init else None
    channel_indices = _parse_channels(args.channels)
    kwargs = {}
    if init is None:
        n = len(channel_indices) if channel_indices is not None else len(store.channels)
        from .model import UNetConfig

        kwargs["classifier_cfg"] = UNetConfig(
            in_channels=n, depth=args.depth, base_width=args.width, out_channels=2
        )
        kwargs["regressor_cfg"] = UNetConfig(
            in_channels=n, depth=args.depth, base_width=args.width, out_channels=1
        )
        kwargs["channel_indices"] = channel_indices
    ckpt = train(cfg, store.records, init=init, loss_log=args.loss_log, **kwargs)
    save_checkpoint(ckpt, args.out)
    print(f"wrote checkpoint ({ckpt.stage}, {ckpt.metadata.get('steps_run', 0)} steps) to {args.out}")
    return 0


def _pairs_for_eval(args):
    """(m, y_true, y_pred) triples plus the truth store, from ckpt or store."""
    truth = read_patch_store(_require(args.data, "truth patch store"))
    triples = []
    if args.pred:
        pred = read_patch_store(_require(args.pred, "prediction patch store"))
        if len(pred.records) != len(truth.records):
            raise ValueError(
                f"prediction store has {len(pred.records)} records, truth has {len(truth.records)}"
            )
        for t, p in zip(truth.records, pred.records):
            triples.append((t.m, t.y, p.y))
    elif args.checkpoint:
        ckpt = load_checkpoint(_require(args.checkpoint, "checkpoint"))
        predictor = TwoStagePredictor(ckpt, decision_threshold=args.decision_threshold)
        for t in truth.records:
            triples.append((t.m, t.y, predictor.estimate(t.x)))
    else:
        raise ValueError("evaluate needs --checkpoint or --pred")
    return triples, truth


def cmd_evaluate(args) -> int:
    thresholds = _parse_thresholds(args.thresholds)
    triples, truth = _pairs_for_eval(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = merge(*[accumulate(m, yt, yp, thresholds) for m, yt, yp in triples])
    write_metrics_csv(out / "metrics.csv", table)
    rep = metrics(table)
    for i, thr in enumerate(thresholds):
        print(
            f"threshold {thr}: CSI={rep.csi[i]:.4f} POD={rep.pod[i]:.4f} "
            f"FAR={rep.far[i]:.4f} Bias={rep.bias[i]:.4f}"
        )
    if args.csi_map_threshold is not None:
        shape = truth.grid.shape
        acc = CellContingency(truth.grid, args.csi_map_threshold)
        for m, yt, yp in triples:
            if m.shape != shape:
                raise ValueError("csi map needs records matching the store grid window")
            acc.update(m, yt, yp)
        grid_csi = acc.csi()
        write_field(out / "csi_map.bin", np.nan_to_num(grid_csi, nan=-1.0).astype(np.float32))
        write_ppm(out / "csi_map.ppm", render_csi_field(grid_csi))
    return 0


def cmd_infer(args) -> int:
    store = read_patch_store(_require(args.data, "patch store"))
    ckpt = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    predictor = TwoStagePredictor(ckpt, decision_threshold=args.decision_threshold)
    out_records = []
    for rec in store.records:
        est = predictor.estimate(rec.x).astype(np.float32)
        out_records.append(
            PatchRecord(
                x=rec.x,
                y=est,
                m=np.ones_like(rec.m),
                row=rec.row,
                col=rec.col,
                t_start=rec.t_start,
                t_end=rec.t_end,
            )
        )
    write_patch_store(Path(args.out), out_records, store.grid, store.channels, split="prediction")
    print(f"wrote {len(out_records)} prediction records to {args.out}")
    return 0


def cmd_mosaic(args) -> int:
    grid = read_grid_spec(_require(args.grid_spec, "grid spec"))
    estimates = []
    satellites = []
    for spec in args.estimate:
        try:
            sat_id, sub_lon, path = spec.split("=")
        except ValueError:
            raise ValueError(f"--estimate must be SAT=SUBLON=PATH, got {spec!r}") from None
        rates = read_field(_require(path, f"estimate for {sat_id}"))
        cov = satellite_coverage(sat_id, float(sub_lon), grid, args.radius)
        estimates.append((rates, cov.coverage))
        satellites.append(f"{sat_id} sub_longitude={sub_lon}")
    est = merge_global(estimates, grid)
    write_global_product(args.out, est, satellites, args.timestamp)
    covered = int((est.contributor_count > 0).sum())
    print(f"wrote global product to {args.out} ({covered} covered cells)")
    return 0


def cmd_ablate(args) -> int:
    axes = ablation.AXES if args.axis == "all" else (args.axis,)
    bench = _bench_from_args(args)
    base_cfg = TrainConfig(
        steps=args.steps,
        seed=args.seed,
        batch_size=args.batch_size if args.batch_size is not None else 8,
    )
    rows = ablation.run_ablation(axes, bench, base_cfg, pretrain_steps=args.pretrain_steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ablation.write_ablation_csv(out / "ablation.csv", rows)
    for row in rows:
        print(f"{row.axis} {row.variant}: " + " ".join(f"{v:.4f}" for v in row.csi))
    return 0


def cmd_case_report(args) -> int:
    scene = read_scene(_require(Path(args.scene).with_suffix(".txt"), "scene").with_suffix(""))
    swath = read_swath_csv(_require(args.swath, "swath csv"))
    pair = collocate(scene, swath)
    products = {}
    if args.checkpoint:
        ckpt = load_checkpoint(_require(args.checkpoint, "checkpoint"))
        predictor = TwoStagePredictor(ckpt, decision_threshold=args.decision_threshold)
        products["retrieval"] = predictor.estimate(scene.data)
    for spec in args.product or []:
        try:
            name, path = spec.split("=")
        except ValueError:
            raise ValueError(f"--product must be NAME=PATH, got {spec!r}") from None
        products[name] = read_field(_require(path, f"product {name}"))
    if not products:
        raise ValueError("case-report needs --checkpoint or at least one --product")
    report = case_report(scene, pair, products, _parse_thresholds(args.thresholds))
    out = Path(args.out)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for name, arr in report.fields.items():
        write_field(out / "fields" / f"{name}.bin", arr)
        write_ppm(out / "images" / f"{name}.ppm", report.images[name])
    for name, table in report.tables.items():
        write_metrics_csv(out / f"metrics_{name}.csv", table)
    print(f"wrote case report for {sorted(products)} to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oya", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_synth_args(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=7)
        p.add_argument("--pairs", type=int, default=400)
        p.add_argument("--val-pairs", type=int, default=50)
        p.add_argument("--pretrain-pairs", type=int, default=0)
        p.add_argument("--patch", type=int, default=64)
        p.add_argument("--channels", type=int, default=8)
        p.add_argument("--swath-width", type=int, default=25)
        p.add_argument("--noise-level", type=float, default=0.3)
        p.add_argument("--corr-length", type=float, default=6.0)
        p.add_argument("--depth", type=int, default=2)
        p.add_argument("--width", type=int, default=8)

    p = sub.add_parser("synth", help="generate synthetic patch stores")
    add_synth_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-dataset", help="collocate scenes and swaths into patch stores")
    p.add_argument("--scenes", required=True)
    p.add_argument("--swaths", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch", type=int, default=128)
    p.add_argument("--train-years", default="2016-2021")
    p.add_argument("--val-years", default="2022")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train the two-stage model on a patch store")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="flat key/value config file")
    p.add_argument("--init", default=None, help="init checkpoint (required for finetune)")
    p.add_argument("--stage", choices=("scratch", "pretrain", "finetune"), default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--class-weights", default=None, help="'auto' or 'w_norain,w_rain'")
    p.add_argument("--decision-threshold", type=float, default=None)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--no-lds", action="store_true")
    p.add_argument("--channels", default="all", help="'all' or comma-separated channel indices")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--loss-log", default=None, help="append-only loss CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score predictions against a truth store")
    p.add_argument("--data", required=True, help="truth patch store")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--pred", default=None, help="prediction patch store (alternative to --checkpoint)")
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds", default="0.2,1.0,2.4,7.0")
    p.add_argument("--decision-threshold", type=float, default=0.5)
    p.add_argument("--csi-map-threshold", type=float, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="write a prediction store for a patch store")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--decision-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("mosaic", help="merge per-satellite estimates into one product")
    p.add_argument("--out", required=True)
    p.add_argument("--grid-spec", required=True)
    p.add_argument("--estimate", action="append", required=True, help="SAT=SUBLON=FIELD.bin")
    p.add_argument("--radius", type=float, default=70.0)
    p.add_argument("--timestamp", default="1970-01-01T00:00:00")
    p.set_defaults(func=cmd_mosaic)

    p = sub.add_parser("ablate", help="run the ablation harness on the synthetic task")
    p.add_argument("--axis", choices=ablation.AXES + ("all",), required=True)
    add_synth_args(p)
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--pretrain-steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("case-report", help="per-event field dumps, images, and metric tables")
    p.add_argument("--scene", required=True, help="scene file stem (.txt/.bin pair)")
    p.add_argument("--swath", required=True, help="swath csv file")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--product", action="append", help="NAME=FIELD.bin, repeatable")
    p.add_argument("--thresholds", default="0.2,1.0,2.4,7.0")
    p.add_argument("--decision-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_case_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
