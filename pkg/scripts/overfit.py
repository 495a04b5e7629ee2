"""Overfit one synthetic image and report training DSC every 25 steps.

    python scripts/overfit.py --steps 200
"""
import argparse

import numpy as np
import torch

from lesionseg.attention import boundary_target
from lesionseg.data import synth_samples
from lesionseg.imgproc import preprocess
from lesionseg.metrics import dsc
from lesionseg.model import TrainConfig, build_model, make_optimizer, to_tensor, train_step


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--side", type=int, default=128)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    s = synth_samples(1, seed=args.seed, side=args.side)[0]
    x = to_tensor(preprocess(s.image, args.side))
    g = torch.from_numpy(s.mask[None, None].astype(np.float32))
    gb = torch.from_numpy(boundary_target(s.mask)[None, None].astype(np.float32))
    model = build_model(seed=args.seed)
    opt = make_optimizer(model, TrainConfig(lr=args.lr))
    for step in range(1, args.steps + 1):
        loss = train_step(model, opt, (x, g, gb))
        if step % 25 == 0:
            model.eval()
            with torch.no_grad():
                pred = (model(x).final[0, 0].numpy() > 0.5).astype(np.uint8)
            print(f"step {step:4d}  loss {loss:.4f}  DSC {dsc(pred, s.mask):.4f}")


if __name__ == "__main__":
    main()
