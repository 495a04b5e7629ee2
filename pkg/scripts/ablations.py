"""Module-placement and component ablations plus the loss-weight sweep on
synthetic data.

    python scripts/ablations.py --out runs/ablate --n 100 --epochs 10
"""
import argparse
import logging
from dataclasses import replace

from lesionseg import harness
from lesionseg.config import load_config
from lesionseg.data import synth_samples


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/ablate")
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--side", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--deltas", type=float, nargs="+", default=list(harness.DEFAULT_DELTAS))
    ap.add_argument("--config")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config).with_overrides(side=args.side, folds=args.folds, seed=args.seed, epochs=args.epochs)
    cfg = replace(cfg, dataset="synthetic")
    samples = synth_samples(args.n, seed=args.seed, side=args.side)

    res = harness.run_ablation(samples, harness.table3_configs(cfg.model), cfg)
    harness.write_report(args.out, "table3", harness.TABLE3_HEADER, harness.table3_rows(res), cfg, "Module placement per backbone level")
    res = harness.run_ablation(samples, harness.table4_configs(cfg.model), cfg)
    harness.write_report(args.out, "table4", harness.TABLE4_HEADER, harness.table4_rows(res), cfg, "Component ablation")
    rows = harness.sweep_delta(samples, args.deltas, cfg)
    harness.write_report(args.out, "delta_sweep", harness.SWEEP_HEADER, rows, cfg, "Loss mixing weight sweep")
    for name in ("table3", "table4", "delta_sweep"):
        print(open(f"{args.out}/{name}.md").read())


if __name__ == "__main__":
    main()
