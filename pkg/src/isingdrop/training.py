"""Training loop with per-mini-batch Ising (or random) dropout masks."""
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import data as data_mod
from .core_math import batch_softmax_cross_entropy
from .ising import AnnealSchedule, CostMapParams, UnitIndexMap, anneal, build_instance
from .network import (
    MaskSet,
    NetworkSpec,
    WeightBank,
    backprop_step,
    forward,
    init_weights,
    make_optimizer,
    merge_weights,
)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "ISINGDROP-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 32
    max_iterations: int = 200  # cap on passes of the outer loop
    lr: float = 0.01
    seed: int = 0
    patience: int = 10
    min_delta: float = 1e-4
    early_stopping: bool = True
    val_size: int = 0  # >0 holds out a stratified validation split for early stopping
    refresh_every: int = 1  # mini-batches between Ising mask refreshes
    cost: CostMapParams = field(default_factory=CostMapParams)
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)
    lam: float = 6.0
    field_mode: str = "signed_bias"
    convention: str = "literal"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.max_iterations < 1:
            raise ValueError("batch_size, epochs and max_iterations must be >= 1")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")
        if isinstance(self.cost, dict):
            self.cost = CostMapParams(**self.cost)
        if isinstance(self.schedule, dict):
            self.schedule = AnnealSchedule(**self.schedule)


@dataclass
class TrainStats:
    layer_drop_pct: list  # time-averaged over every training mini-batch, per unit layer
    final_drop_counts: list
    train_loss: list = field(default_factory=list)  # epoch means of the backprop loss
    monitor_loss: list = field(default_factory=list)  # epoch values driving early stopping
    steps: int = 0
    epochs_run: int = 0
    stopped_early: bool = False
    anneal_calls: int = 0
    seconds: float = 0.0


class TrainResult(NamedTuple):
    bank: WeightBank
    mask: MaskSet
    stats: TrainStats


def _random_mask(spec, rng):
    keep = [np.ones(n) for n in spec.sizes]
    for l in spec.candidate_layers():
        keep[l] = (rng.random(spec.sizes[l]) >= spec.p).astype(np.float64)
    return MaskSet(keep)


def _batch_loss(weights, biases, batch, mask):
    _, logits = forward(weights, biases, batch.images, mask)
    return batch_softmax_cross_entropy(logits, batch.labels)[0]


def dataset_loss(weights, biases, data, mask=None, chunk=2000):
    total = 0.0
    for b in data_mod.batches(data, chunk):
        total += _batch_loss(weights, biases, b, mask) * len(b)
    return total / len(data)


def train(spec, data, config=TrainConfig()):
    """Train ``spec`` on ``data``; returns ``TrainResult(bank, mask, stats)``.

    The first mini-batch is trained unmasked and W* is snapshotted. After
    every later mini-batch the current mask is used for the step, merged into
    W*, and (in ising mode, every ``refresh_every`` batches) a new mask is
    annealed from W* on that batch.
    """
    started = time.perf_counter()
    sizes = spec.sizes
    if data.images.shape[1] != sizes[0]:
        raise ValueError(f"data width {data.images.shape[1]} != input layer {sizes[0]}")
    val = None
    if config.val_size > 0:
        held = data_mod.subsample_index(data.labels, config.val_size, config.seed)
        rest = np.ones(len(data), bool)
        rest[held] = False
        val, data = data.take(held), data.take(np.flatnonzero(rest))

    bank = init_weights(spec, config.seed)
    opt = make_optimizer(bank, config.lr)
    mask_rng = np.random.default_rng([config.seed, 1])
    index_map = UnitIndexMap.for_spec(spec)
    ones = MaskSet.ones(sizes)
    use_masks = spec.dropout != "none"
    mask = ones
    drop_sum = np.zeros(len(sizes))
    stats = TrainStats(layer_drop_pct=[], final_drop_counts=[])
    best, bad_epochs = np.inf, 0
    step = 0
    n_epochs = min(config.epochs, config.max_iterations)

    for epoch in range(n_epochs):
        order = data_mod.shuffle_epoch(data, config.seed, epoch)
        epoch_train, epoch_monitor = [], []
        for batch in data_mod.batches(data, config.batch_size, order):
            if not use_masks:
                loss = backprop_step(bank, None, batch, opt)
                epoch_train.append(loss)
                epoch_monitor.append(loss if step == 0 else
                                     _batch_loss(bank.weights, bank.biases, batch, None))
                step += 1
                continue

            if spec.dropout == "random" and step > 0:
                mask = _random_mask(spec, mask_rng)
            drop_sum += mask.dropped_counts()
            loss = backprop_step(bank, mask, batch, opt)
            epoch_train.append(loss)
            if step == 0:
                for l in range(len(bank.weights)):
                    bank.merged_weights[l] = bank.weights[l].copy()
                    bank.merged_biases[l] = bank.biases[l].copy()
                epoch_monitor.append(loss)
            else:
                merge_weights(bank, mask)
                epoch_monitor.append(
                    _batch_loss(bank.merged_weights, bank.merged_biases, batch, mask))
            if spec.dropout == "ising" and step % config.refresh_every == 0:
                mask = _ising_mask(bank, batch, index_map, config, step)
                stats.anneal_calls += 1
            step += 1

        stats.train_loss.append(float(np.mean(epoch_train)))
        if val is not None:
            w, b = bank.select("W*" if use_masks else "W")
            m = mask if (spec.inference_masking and use_masks) else None
            monitor = dataset_loss(w, b, val, m)
        else:
            monitor = float(np.mean(epoch_monitor))
        stats.monitor_loss.append(monitor)
        stats.epochs_run = epoch + 1
        log.info("epoch %d train %.4f monitor %.4f", epoch, stats.train_loss[-1], monitor)
        if monitor < best - config.min_delta:
            best, bad_epochs = monitor, 0
        else:
            bad_epochs += 1
        if config.early_stopping and bad_epochs >= config.patience:
            stats.stopped_early = True
            break

    if not use_masks:
        bank.merged_weights = [w.copy() for w in bank.weights]
        bank.merged_biases = [b.copy() for b in bank.biases]
    final = mask if spec.dropout == "ising" else ones
    stats.steps = step
    stats.layer_drop_pct = (100.0 * drop_sum / max(step, 1) / np.array(sizes)).tolist()
    stats.final_drop_counts = final.dropped_counts()
    stats.seconds = time.perf_counter() - started
    return TrainResult(bank, final, stats)


def _ising_mask(bank, batch, index_map, config, step):
    inst = build_instance(
        bank, batch, config.cost, index_map,
        lam=config.lam, field_mode=config.field_mode, convention=config.convention,
    )
    schedule = AnnealSchedule(
        config.schedule.t_initial, config.schedule.t_final,
        config.schedule.sweeps, config.schedule.restarts,
        seed=config.schedule.seed + 7919 * step,
    )
    return MaskSet.from_state(anneal(inst, schedule), index_map.sizes)


def inference_mask(spec, final_mask):
    """Mask applied at test time: the final mask when inference masking is on."""
    if spec.inference_masking and spec.dropout == "ising":
        return final_mask
    return MaskSet.ones(spec.sizes)


def predict(weights, biases, images, mask=None, chunk=2000):
    out = []
    for start in range(0, len(images), chunk):
        _, logits = forward(weights, biases, images[start:start + chunk], mask)
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(bank, data, mask=None, which="W*"):
    """Classification accuracy (fraction in [0, 1]) of the chosen bank."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty data set")
    weights, biases = bank.select(which)
    return float(np.mean(predict(weights, biases, data.images, mask) == data.labels))


def save_checkpoint(path, spec, bank, mask, seed):
    """Store spec, W*, the final mask and the seed in a versioned .npz file."""
    meta = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(spec),
        "seed": int(seed),
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for l, (w, b) in enumerate(zip(bank.merged_weights, bank.merged_biases)):
        arrays[f"weight_{l}"] = w
        arrays[f"bias_{l}"] = b
    for l, k in enumerate(mask.keep):
        arrays[f"keep_{l}"] = k.astype(np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path):
    """Returns ``(spec, bank, mask, seed)``; the bank has W == W*."""
    with np.load(path, allow_pickle=False) as z:
        if "meta" not in z.files:
            raise CheckpointError(f"{path}: no metadata record")
        meta = json.loads(str(z["meta"]))
        if meta.get("magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (magic {meta.get('magic')!r})")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {meta.get('version')}")
        spec = NetworkSpec(**meta["spec"])
        L = spec.n_layers
        weights = [z[f"weight_{l}"] for l in range(L)]
        biases = [z[f"bias_{l}"] for l in range(L)]
        keep = [z[f"keep_{l}"].astype(np.float64) for l in range(L + 1)]
    return spec, WeightBank.from_arrays(weights, biases), MaskSet(keep), meta["seed"]
