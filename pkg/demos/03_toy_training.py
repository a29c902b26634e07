"""
Three dropout modes on a toy problem
====================================

Same network, same data, same seed: no dropout, random dropout, and masks
picked by minimising the Ising energy every mini-batch.
"""
import numpy as np

from isingdrop import DataSet, NetworkSpec, TrainConfig, evaluate, train
from isingdrop.harness import total_dropout_rate

rng = np.random.default_rng(1)
centres = rng.random((4, 32))
labels = np.arange(1200) % 4
x = np.clip(centres[labels] + rng.normal(scale=0.25, size=(1200, 32)), 0, 1)
train_set = DataSet(x[:1000], labels[:1000])
test_set = DataSet(x[1000:], labels[1000:], "test")

cfg = TrainConfig(epochs=15)
for mode in ("none", "random", "ising"):
    spec = NetworkSpec((32, 24, 24, 4), dropout=mode, inference_masking=(mode == "ising"))
    bank, mask, stats = train(spec, train_set, cfg)
    used = mask if spec.inference_masking else None
    total, strict = total_dropout_rate(spec, mask.dropped_counts())
    print(f"{mode:>6}: acc {100 * evaluate(bank, test_set, used):5.1f}%  "
          f"avg drop per layer {np.round(stats.layer_drop_pct, 1)}  "
          f"final mask removes {total:.1f}% ({strict:.1f}% strict) of parameters")
