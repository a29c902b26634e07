"""Command line entry point: ``isingdrop {train,grid,report,emit-images}``."""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import DataSet, load_idx, read_idx_images
from .harness import (
    OUT_ENV,
    ExperimentConfig,
    MetricsReport,
    emit_masked_inputs,
    format_table,
    parse_reports,
    run_experiment,
    run_grid,
)
from .training import load_checkpoint

DATA_FLAGS = ("train_images", "train_labels", "test_images", "test_labels")


def _read_json(path):
    return json.loads(Path(path).read_text())


def _overrides(args):
    out = {}
    for name in DATA_FLAGS + ("seed",):
        val = getattr(args, name, None)
        if val is not None:
            out[name] = val
    return out


def expand_grid(spec):
    """Config list from a grid file: ``base`` x ``rows`` x ``archs`` x ``seeds``."""
    if isinstance(spec, list):
        return [ExperimentConfig.from_dict(d) for d in spec]
    base = spec.get("base", {})
    rows = spec.get("rows", [{}])
    archs = spec.get("archs", [base.get("sizes", ExperimentConfig().sizes)])
    seeds = spec.get("seeds", [base.get("seed", 0)])
    configs = []
    for arch in archs:
        for row in rows:
            for seed in seeds:
                d = dict(base, sizes=list(arch), seed=seed)
                d.update(row)
                configs.append(ExperimentConfig.from_dict(d))
    return configs


def cmd_train(args):
    cfg = ExperimentConfig.from_dict(_read_json(args.config))
    cfg = cfg.replace(**_overrides(args))
    out = args.out or os.environ.get(OUT_ENV) or cfg.out_dir or "runs"
    report = run_experiment(cfg, out_dir=out)
    print(format_table([report]))
    print(f"wrote report and checkpoint to {out}")
    return 0


def cmd_grid(args):
    configs = expand_grid(_read_json(args.config))
    if args.seed is not None or any(getattr(args, n) for n in DATA_FLAGS):
        configs = [c.replace(**_overrides(args)) for c in configs]
    out = args.out or os.environ.get(OUT_ENV) or "runs/grid"
    reports, failures = run_grid(configs, out_dir=out, workers=args.workers)
    print(format_table(reports))
    for f in failures:
        print(f"FAILED {f['model']} {tuple(f['arch'])}: {f['error'].splitlines()[0]}",
              file=sys.stderr)
    return 1 if failures else 0


def cmd_report(args):
    reports = []
    for p in args.paths:
        p = Path(p)
        if p.is_dir():
            if (p / "reports.json").exists():
                reports += parse_reports((p / "reports.json").read_text())
            else:
                reports += [MetricsReport.from_json(f.read_text())
                            for f in sorted(p.glob("*.report.json"))]
        elif p.name.endswith(".report.json"):
            reports.append(MetricsReport.from_json(p.read_text()))
        else:
            reports += parse_reports(p.read_text())
    if not reports:
        print("no reports found", file=sys.stderr)
        return 1
    print(format_table(reports))
    return 0


def cmd_emit_images(args):
    spec, _, mask, _ = load_checkpoint(args.checkpoint)
    if not spec.input_dropout:
        print("warning: checkpoint was trained without input-layer dropout; "
              "the input mask is all ones", file=sys.stderr)
    if len(args.data) == 2:
        data = load_idx(*args.data)
    else:
        imgs = read_idx_images(args.data[0])
        data = DataSet(imgs.reshape(len(imgs), -1) / 255.0, np.zeros(len(imgs), dtype=np.int64))
    out = args.out or os.environ.get(OUT_ENV) or "runs/images"
    paths = emit_masked_inputs(data, mask.keep[0], args.count, out)
    print(f"wrote {len(paths)} images to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="isingdrop", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_flags(p):
        for name in DATA_FLAGS:
            p.add_argument("--" + name.replace("_", "-"), dest=name)

    p = sub.add_parser("train", help="run one experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    data_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="run a grid of experiments")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    data_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("report", help="print a table from saved reports")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("emit-images", help="write original/masked input images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", nargs="+", required=True, metavar="PATH",
                   help="IDX images file, optionally followed by the labels file")
    p.add_argument("--count", type=int, default=6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_emit_images)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        print(f"isingdrop {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
