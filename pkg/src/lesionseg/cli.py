"""Command-line entry point: ``lesionseg <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import harness
from .config import ExperimentConfig, load_config
from .data import (
    IMAGE_SUFFIXES,
    _mask_key,
    load_dataset,
    load_samples,
    read_mask,
    read_rgb,
    synth_dataset,
    write_png,
)
from .imgproc import HairRemovalConfig, hair_stages, preprocess, resize_image
from .metrics import METRICS, MetricsReport, fmt, to_markdown
from .model import load_checkpoint, predict, save_checkpoint

log = logging.getLogger("lesionseg")


def _images_in(folder) -> list[Path]:
    return [p for p in sorted(Path(folder).iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config file (key = value with sections)")
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--delta", type=float, help="BCE weight in the hybrid segmentation loss")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--side", type=int, help="network input side (multiple of 32)")
    p.add_argument("--backbone", choices=["toy", "full"])
    p.add_argument("--no-preprocess", action="store_true", help="skip hair removal")
    p.add_argument("--tag", default=None, help="dataset source tag")


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(
        seed=args.seed, folds=args.folds, delta=args.delta, epochs=args.epochs, lr=args.lr,
        batch_size=args.batch_size, side=args.side, backbone=args.backbone,
    )
    if args.no_preprocess:
        cfg = replace(cfg, preprocess=False)
    return cfg


def _samples(args, cfg: ExperimentConfig):
    index = load_dataset(args.data, args.tag or "custom")
    if args.tag:
        cfg = replace(cfg, dataset=args.tag)
    return load_samples(index), cfg


def cmd_preprocess(args) -> int:
    hair = HairRemovalConfig(args.threshold, args.kernel, args.radius)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in _images_in(args.inp):
        img = read_rgb(p)
        result = preprocess(img, args.side, hair)
        write_png(out / f"{p.stem}.png", result)
        if args.dump_stages:
            stages = hair_stages(resize_image(img, args.side), hair)
            for i, (name, arr) in enumerate(stages.items(), start=1):
                if name == "threshold":
                    arr = arr * 255
                write_png(out / f"{p.stem}_stage{i}_{name}.png", arr.astype(np.uint8))
    return 0


def cmd_synth(args) -> int:
    index = synth_dataset(args.n, args.seed, args.out, side=args.side, hair=not args.no_hair)
    print(f"wrote {len(index)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _experiment(args)
    samples, cfg = _samples(args, cfg)
    data = harness.prepare(samples, cfg)
    model, losses = harness.train_model(data, cfg)
    save_checkpoint(
        args.out, model, cfg.train.seed,
        extra={"side": cfg.side, "preprocess": cfg.preprocess, "hair": asdict(cfg.hair)},
    )
    print(f"final loss {losses[-1]:.4f}; checkpoint written to {args.out}")
    return 0


def cmd_infer(args) -> int:
    model, blob = load_checkpoint(args.checkpoint)
    extra = blob.get("extra", {})
    side = args.side or extra.get("side", 256)
    hair = HairRemovalConfig(**extra["hair"]) if extra.get("hair") else HairRemovalConfig()
    if args.no_preprocess or extra.get("preprocess") is False:
        hair = None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in _images_in(args.inp):
        mask = predict(model, read_rgb(p), side, hair)
        write_png(out / f"{p.stem}.png", mask * 255)
    return 0


def cmd_eval(args) -> int:
    gts = {_mask_key(p.stem): p for p in _images_in(args.gt)}
    report = MetricsReport(fold="eval")
    for p in _images_in(args.pred):
        key = _mask_key(p.stem)
        if key not in gts:
            raise FileNotFoundError(f"no ground truth for prediction {p.name}")
        report.add(key, read_mask(p), read_mask(gts[key]))
    mean, std = report.mean, report.std
    header = ["n", "mDSC", "mIoU", "mFM", "mSen", "mSpe"]
    row = [str(len(report.per_image)), *(fmt(mean[k], std[k]) for k in METRICS)]
    text = to_markdown(header, [row])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "per_image.csv").write_text(report.to_csv())
        (out / "summary.md").write_text(text)
    print(text, end="")
    return 0


def cmd_cv(args) -> int:
    cfg = _experiment(args)
    samples, cfg = _samples(args, cfg)
    results = harness.cv_report(args.out, samples, cfg, compare_preprocessing=args.compare_preprocessing)
    print((Path(args.out) / "table1.md").read_text(), end="")
    if "other" in results:
        print((Path(args.out) / "table2.md").read_text(), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = _experiment(args)
    samples, cfg = _samples(args, cfg)
    if args.table in ("3", "both"):
        res = harness.run_ablation(samples, harness.table3_configs(cfg.model), cfg)
        harness.write_report(args.out, "table3", harness.TABLE3_HEADER, harness.table3_rows(res), cfg, "Module placement per backbone level")
    if args.table in ("4", "both"):
        res = harness.run_ablation(samples, harness.table4_configs(cfg.model), cfg)
        harness.write_report(args.out, "table4", harness.TABLE4_HEADER, harness.table4_rows(res), cfg, "Component ablation")
    return 0


def cmd_sweep(args) -> int:
    cfg = _experiment(args)
    samples, cfg = _samples(args, cfg)
    deltas = args.deltas or list(harness.DEFAULT_DELTAS)
    rows = harness.sweep_delta(samples, deltas, cfg)
    harness.write_report(args.out, "delta_sweep", harness.SWEEP_HEADER, rows, cfg, "Loss mixing weight sweep")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lesionseg", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="resize and remove hair from a folder of images")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=int, default=10)
    p.add_argument("--kernel", type=int, default=17)
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--side", type=int, default=256)
    p.add_argument("--dump-stages", action="store_true", help="also write the five intermediate stages")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="write a synthetic lesion dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--side", type=int, default=128)
    p.add_argument("--no-hair", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a whole dataset and save a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict masks for a folder of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--side", type=int)
    p.add_argument("--no-preprocess", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="k-fold cross-validation report")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--compare-preprocessing", action="store_true", help="also run the other preprocessing setting")
    _add_common(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("ablate", help="module-placement and component ablations")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--table", choices=["3", "4", "both"], default="both")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-delta", help="cross-validate over loss mixing weights")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--deltas", type=float, nargs="+")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
