"""
Which pixels survive
====================

Trains on a MNIST subset with input units as dropout candidates, then writes
original/masked image pairs. Needs the IDX files; set ISINGDROP_DATA to the
directory holding mnist/ (default /root/data).
"""
import os
import sys
from pathlib import Path

import numpy as np

from isingdrop import AnnealSchedule, NetworkSpec, TrainConfig, emit_masked_inputs, evaluate, load_idx, subsample, train

root = Path(os.environ.get("ISINGDROP_DATA", "/root/data")) / "mnist"
if not (root / "train-images-idx3-ubyte").exists():
    sys.exit(f"no MNIST files under {root}")
tr = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
te = load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte", "test")
tr = subsample(tr, 5000, seed=0)

spec = NetworkSpec((784, 100, 100, 10), dropout="ising", input_dropout=True,
                   inference_masking=True)
cfg = TrainConfig(epochs=5, refresh_every=5, schedule=AnnealSchedule(sweeps=200, restarts=1))
bank, mask, stats = train(spec, tr, cfg)
print("avg drop % per layer:", np.round(stats.layer_drop_pct, 1))
print("final mask keeps", int(mask.keep[0].sum()), "of 784 pixels")
print("test accuracy with the mask:", round(100 * evaluate(bank, te, mask), 2))

# the border pixels that never light up are the first to go
border = np.zeros((28, 28), bool)
border[:3], border[-3:], border[:, :3], border[:, -3:] = True, True, True, True
print("dropped share on the border:", round(1 - mask.keep[0][border.ravel()].mean(), 3),
      "in the centre:", round(1 - mask.keep[0][~border.ravel()].mean(), 3))

out = os.environ.get("ISINGDROP_OUT", "runs/masked_inputs")
paths = emit_masked_inputs(te, mask.keep[0], 6, out)
print(f"wrote {len(paths)} PGM files to {out}")
