#!/usr/bin/env python3
"""Learning-rate range test on freshly generated data: exponentially grow
the rate over a fixed number of steps and record the smoothed loss. The
steepest sustained decline marks the usable peak-rate band."""

import argparse
import sys
from pathlib import Path

from helios.dataset import prepare_data
from helios.model import ModelConfig, init_model
from helios.pvsim import calibrate_module, generate_dataset
from helios.pvsim.generate import default_locations
from helios.rng import RngStream
from helios.trainer import lr_range_test


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", default="out/lr_range")
    ap.add_argument("--steps", type=int, default=120)
    ap.add_argument("--lr-lo", type=float, default=1e-6)
    ap.add_argument("--lr-hi", type=float, default=1e-2)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = calibrate_module()
    by_loc = generate_dataset(default_locations(2, args.seed), 1, params, out / "dataset.csv")
    prep = prepare_data(by_loc, args.seed)
    cfg = ModelConfig(d_eff=64, n_heads=4, ff_dim=128,
                      y_min=prep.normalizer.y_min, y_max=prep.normalizer.y_max)
    model = init_model(cfg, RngStream(args.seed, 20))
    rows = lr_range_test(model, prep.train_windows, args.steps,
                         lr_lo=args.lr_lo, lr_hi=args.lr_hi, seed=args.seed)
    path = out / "lr_finder.csv"
    path.write_text("lr,loss\n" + "".join(f"{lr!r},{loss!r}\n" for lr, loss in rows))
    best = min(rows, key=lambda r: r[1])
    print(f"{len(rows)} rows -> {path}; smoothed-loss minimum at lr {best[0]:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
