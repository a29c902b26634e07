"""Experiment configuration, compression accounting, grids and reports."""
import csv
import io
import json
import logging
import os
import re
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import load_idx, subsample
from .ising import HARDWARE_VARIABLES, AnnealSchedule, CostMapParams
from .network import NetworkSpec
from .training import (
    TrainConfig,
    evaluate,
    inference_mask,
    save_checkpoint,
    train,
)

log = logging.getLogger(__name__)

OUT_ENV = "ISINGDROP_OUT"


def _sizes(spec):
    return tuple(spec.sizes) if hasattr(spec, "sizes") else tuple(spec)


def param_count(spec):
    """Trainable weights plus biases of an MLP with layer sizes (x, h1..hN, y)."""
    s = _sizes(spec)
    if len(s) < 3:
        raise ValueError("need at least one hidden layer")
    x, hidden, y = s[0], s[1:-1], s[-1]
    total = x * hidden[0]
    for a, b in zip(hidden[:-1], hidden[1:]):
        total += a * (b + 1)
    return total + hidden[-1] * (y + 1) + y


def total_dropout_rate(spec, dropped):
    """Share of parameters removed, in percent, as ``(headline, strict)``.

    ``dropped[l]`` is the (possibly time-averaged, fractional) number of
    dropped units in unit layer ``l`` for ``l = 0..N``. The headline figure
    counts each dropped unit's outgoing weights plus its bias (inputs have
    none). The strict figure counts every weight with either endpoint
    dropped, plus dropped biases.
    """
    s = _sizes(spec)
    d = np.zeros(len(s))
    d[: len(dropped)] = np.asarray(dropped, dtype=np.float64)
    if np.any(d < 0) or np.any(d > np.array(s)):
        raise ValueError("dropped counts must lie within the layer sizes")
    if d[-1] != 0:
        raise ValueError("output units are never dropped")
    P = param_count(s)
    outgoing = sum(d[l] * s[l + 1] for l in range(len(s) - 1))
    bias = d[1:-1].sum()
    strict = bias
    for l in range(1, len(s)):
        strict += s[l - 1] * s[l] - (s[l - 1] - d[l - 1]) * (s[l] - d[l])
    return 100.0 * (outgoing + bias) / P, 100.0 * strict / P


def counts_from_percent(spec, percents):
    s = _sizes(spec)
    return [p / 100.0 * n for p, n in zip(percents, s)]


@dataclass
class ExperimentConfig:
    name: str = ""
    sizes: tuple = (784, 100, 100, 10)
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    dropout: str = "none"
    p: float = 0.5
    input_dropout: bool = False
    inference_masking: bool = False
    mu: float = 0.5
    sigma2: float = 0.01
    t_initial: float = 2.0
    t_final: float = 0.01
    sweeps: int = 1000
    restarts: int = 8
    convention: str = "literal"
    lam: float = 6.0
    field_mode: str = "signed_bias"
    batch_size: int = 32
    epochs: int = 32
    max_iterations: int = 200
    patience: int = 10
    min_delta: float = 1e-4
    early_stopping: bool = True
    val_size: int = 0
    refresh_every: int = 1
    lr: float = 0.01
    seed: int = 0
    subsample: int = 0  # 0 = full training set
    out_dir: str = ""

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)

    def network_spec(self):
        return NetworkSpec(self.sizes, self.dropout, self.p, self.input_dropout,
                           self.inference_masking)

    def train_config(self):
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs,
            max_iterations=self.max_iterations, lr=self.lr, seed=self.seed,
            patience=self.patience, min_delta=self.min_delta,
            early_stopping=self.early_stopping, val_size=self.val_size,
            refresh_every=self.refresh_every,
            cost=CostMapParams(self.mu, self.sigma2),
            schedule=AnnealSchedule(self.t_initial, self.t_final, self.sweeps,
                                    self.restarts, self.seed),
            lam=self.lam, field_mode=self.field_mode, convention=self.convention,
        )

    def label(self):
        if self.name:
            return self.name
        if self.dropout == "none":
            text = "No Dropout"
        elif self.dropout == "random":
            text = f"Dropout (p={self.p:g})"
        else:
            text = "Ising-Dropout ({})".format(
                "training+inference" if self.inference_masking else "training")
        if self.input_dropout and self.dropout != "none":
            text += " (input layer included)"
        return text

    def to_dict(self):
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)


@dataclass
class MetricsReport:
    model: str
    arch: list
    layer_drop_pct: list  # h0..hN, time-averaged over training mini-batches
    total_pct: float
    strict_total_pct: float
    params: int
    accuracy: float  # percent, under the configured inference mask
    accuracy_masked: float
    accuracy_unmasked: float
    final_drop_counts: list
    final_total_pct: float
    train_loss: list = field(default_factory=list)
    monitor_loss: list = field(default_factory=list)
    epochs_run: int = 0
    steps: int = 0
    stopped_early: bool = False
    seconds: float = 0.0
    config: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def hidden_drop_pct(self):
        """Time-averaged drop rate over all hidden units together."""
        sizes = np.array(self.arch[1:-1], dtype=np.float64)
        pct = np.array(self.layer_drop_pct[1:len(self.arch) - 1])
        return float((pct * sizes).sum() / sizes.sum())


_DATA_CACHE = {}


def _load(images, labels, split):
    key = (images, labels)
    if key not in _DATA_CACHE:
        if not images or not labels:
            raise ValueError(f"missing {split} data paths")
        _DATA_CACHE[key] = load_idx(images, labels, split)
    return _DATA_CACHE[key]


def run_experiment(config, out_dir=None):
    """Train, evaluate masked and unmasked, and write report + checkpoint."""
    out_dir = out_dir or os.environ.get(OUT_ENV) or config.out_dir
    try:
        train_data = _load(config.train_images, config.train_labels, "train")
        test_data = _load(config.test_images, config.test_labels, "test")
    except OSError as exc:
        raise RuntimeError(f"{config.label()}: cannot read data: {exc}") from exc
    if config.subsample:
        train_data = subsample(train_data, config.subsample, config.seed, stratified=True)
    spec = config.network_spec()
    n_vars = sum(spec.sizes[l] for l in spec.candidate_layers())
    if spec.dropout == "ising" and n_vars > HARDWARE_VARIABLES:
        log.warning("%s: %d Ising variables exceeds the %d the original hardware held",
                    config.label(), n_vars, HARDWARE_VARIABLES)

    started = time.perf_counter()
    bank, final_mask, stats = train(spec, train_data, config.train_config())
    acc_masked = 100.0 * evaluate(bank, test_data, final_mask)
    acc_unmasked = 100.0 * evaluate(bank, test_data, None)
    used = inference_mask(spec, final_mask)
    acc = acc_masked if used is final_mask else acc_unmasked

    sizes = spec.sizes
    avg_counts = counts_from_percent(sizes, stats.layer_drop_pct)
    avg_counts[-1] = 0.0
    total, strict = total_dropout_rate(sizes, avg_counts)
    final_total, _ = total_dropout_rate(sizes, stats.final_drop_counts)
    report = MetricsReport(
        model=config.label(),
        arch=list(sizes),
        layer_drop_pct=[float(x) for x in stats.layer_drop_pct[:-1]],
        total_pct=total,
        strict_total_pct=strict,
        params=param_count(sizes),
        accuracy=acc,
        accuracy_masked=acc_masked,
        accuracy_unmasked=acc_unmasked,
        final_drop_counts=list(stats.final_drop_counts),
        final_total_pct=final_total,
        train_loss=stats.train_loss,
        monitor_loss=stats.monitor_loss,
        epochs_run=stats.epochs_run,
        steps=stats.steps,
        stopped_early=stats.stopped_early,
        seconds=time.perf_counter() - started,
        config=config.to_dict(),
    )
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = _slug(config.label()) + f"_{'-'.join(map(str, sizes))}_s{config.seed}"
        (out / f"{stem}.report.json").write_text(report.to_json())
        save_checkpoint(out / f"{stem}.ckpt.npz", spec, bank, final_mask, config.seed)
    return report


def _slug(text):
    keep = [c.lower() if c.isalnum() else "-" for c in text]
    return "-".join(filter(None, "".join(keep).split("-")))


def _run_row(config):
    try:
        return run_experiment(config, out_dir=None), None
    except Exception as exc:  # grid rows fail independently
        return None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"


def csv_columns(n_layers):
    return ["model", "arch"] + [f"h{i}_pct" for i in range(n_layers)] + [
        "total_pct", "strict_total_pct", "P", "acc"]


def reports_to_csv(reports):
    depth = max(len(r.arch) - 1 for r in reports) if reports else 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_columns(depth))
    for r in reports:
        pct = [f"{x:.2f}" for x in r.layer_drop_pct]
        pct += [""] * (depth - len(pct))
        w.writerow([r.model, "(" + ",".join(map(str, r.arch)) + ")", *pct,
                    f"{r.total_pct:.2f}", f"{r.strict_total_pct:.2f}", r.params,
                    f"{r.accuracy:.2f}"])
    return buf.getvalue()


def format_table(reports):
    """Plain-text table grouped by architecture, one row per model."""
    lines = []
    by_arch = {}
    for r in reports:
        by_arch.setdefault(tuple(r.arch), []).append(r)
    for arch, rows in by_arch.items():
        n = len(arch) - 1
        lines.append(f"Network {arch}  P={param_count(arch):,}")
        head = f"{'Model':<52}" + "".join(f"{'h' + str(i):>8}" for i in range(n))
        head += f"{'Total':>8}{'Strict':>8}{'Acc':>8}"
        lines.append(head)
        for r in rows:
            cells = "".join(f"{x:7.2f}%" for x in r.layer_drop_pct)
            lines.append(f"{r.model:<52}{cells}{r.total_pct:7.2f}%"
                         f"{r.strict_total_pct:7.2f}%{r.accuracy:7.2f}%")
        lines.append("")
    return "\n".join(lines)


def run_grid(configs, out_dir=None, workers=1):
    """Run every config; returns ``(reports, failures)`` and writes the table artifacts.

    Rows are independent, so ``workers > 1`` runs them in separate processes.
    A failing row is recorded in ``failures`` and does not stop the grid.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("grid needs at least one config")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_row, configs))
    else:
        results = [_run_row(c) for c in configs]
    reports, failures = [], []
    for cfg, (rep, err) in zip(configs, results):
        if rep is None:
            log.error("grid row %s failed: %s", cfg.label(), err.splitlines()[0])
            failures.append({"model": cfg.label(), "arch": list(cfg.sizes), "error": err})
        else:
            reports.append(rep)
    out_dir = out_dir or os.environ.get(OUT_ENV)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(reports_to_csv(reports), encoding="utf-8")
        (out / "reports.json").write_text(dump_reports(reports))
        text = format_table(reports)
        if failures:
            text += "\nFailed rows:\n" + "\n".join(
                f"  {f['model']} {tuple(f['arch'])}: {f['error'].splitlines()[0]}"
                for f in failures) + "\n"
        (out / "report.txt").write_text(text)
        if failures:
            (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n")
    return reports, failures


def dump_reports(reports):
    return json.dumps([asdict(r) for r in reports], indent=2, sort_keys=True) + "\n"


def parse_reports(text):
    return [MetricsReport(**d) for d in json.loads(text)]


def write_pgm(path, pixels):
    """Binary (P5) portable graymap from a 2-d uint8 array."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    # exactly one whitespace byte separates the header from the pixels
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    pixels = raw[m.end():m.end() + w * h]
    if len(pixels) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def emit_masked_inputs(data, input_keep, count, out_dir, side=28):
    """Write ``count`` original/masked image pairs; dropped pixels become 0."""
    if count < 1:
        raise ValueError("count must be >= 1")
    keep = np.asarray(input_keep, dtype=np.float64)
    if keep.shape != (data.images.shape[1],):
        raise ValueError(f"input mask of shape {keep.shape} for {data.images.shape[1]} pixels")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(min(count, len(data))):
        original = np.rint(data.images[i] * 255.0).astype(np.uint8)
        masked = (original * (keep != 0)).astype(np.uint8)
        for tag, img in (("original", original), ("masked", masked)):
            p = out / f"sample{i:03d}_label{int(data.labels[i])}_{tag}.pgm"
            write_pgm(p, img.reshape(side, -1))
            paths.append(p)
    return paths
