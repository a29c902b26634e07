import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isingdrop.cli import expand_grid, main
from isingdrop.data import DataSet, write_idx
from isingdrop.harness import (
    OUT_ENV,
    ExperimentConfig,
    MetricsReport,
    counts_from_percent,
    csv_columns,
    dump_reports,
    emit_masked_inputs,
    parse_reports,
    param_count,
    read_pgm,
    reports_to_csv,
    run_experiment,
    run_grid,
    total_dropout_rate,
    write_pgm,
)
from isingdrop.network import NetworkSpec, init_weights
from isingdrop.training import load_checkpoint

# per-layer Ising rates and printed totals of the three reference architectures
TABLE_ROWS = [
    ((784, 100, 100, 10), [0, 38.62, 42.43], 4.88),
    ((784, 100, 100, 10), [38.60, 32.18, 25.15], 37.71),
    ((784, 100, 50, 50, 10), [0, 49.21, 47.37, 26.37], 4.47),
    ((784, 100, 50, 50, 10), [40.21, 33.00, 38.31, 26.43], 39.64),
    ((784, 100, 50, 50, 25, 10), [0, 42.59, 46.62, 43.18, 51.25], 4.64),
    ((784, 100, 50, 50, 25, 10), [42.18, 31.78, 33.18, 37.00, 25.37], 41.18),
]


def test_param_count_reference_architectures():
    assert param_count((784, 100, 100, 10)) == 89610
    assert param_count((784, 100, 50, 50, 10)) == 86610
    assert param_count(NetworkSpec((784, 100, 50, 50, 25, 10))) == 87635
    with pytest.raises(ValueError):
        param_count((784, 10))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=3, max_size=6))
def test_param_count_matches_instantiated_bank(sizes):
    sizes[-1] = max(sizes[-1], 2)
    bank = init_weights(NetworkSpec(sizes), 0)
    assert param_count(sizes) == sum(w.size for w in bank.weights) + sum(
        b.size for b in bank.biases)


@pytest.mark.parametrize("arch,pct,total", TABLE_ROWS)
def test_total_matches_reference_rows(arch, pct, total):
    headline, strict = total_dropout_rate(arch, counts_from_percent(arch, pct))
    assert abs(headline - total) <= 0.05
    assert strict >= headline - 1e-9


def test_total_hand_example():
    d = [0, 38.62, 42.43, 0]
    expect = (38.62 * 100 + 42.43 * 10 + 38.62 + 42.43) / 89610 * 100
    headline, _ = total_dropout_rate((784, 100, 100, 10), d)
    assert headline == pytest.approx(expect, abs=1e-12)
    assert round(headline, 2) == 4.87


def test_total_zero_and_full():
    assert total_dropout_rate((784, 100, 100, 10), [0, 0, 0]) == (0.0, 0.0)
    # a whole hidden layer gone removes every weight touching it in the strict count
    _, strict = total_dropout_rate((4, 3, 2), [0, 3, 0])
    assert strict == pytest.approx(100.0 * (12 + 6 + 3) / param_count((4, 3, 2)))
    with pytest.raises(ValueError):
        total_dropout_rate((4, 3, 2), [0, 4, 0])
    with pytest.raises(ValueError):
        total_dropout_rate((4, 3, 2), [0, 0, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=3, max_size=5), st.data())
def test_strict_total_is_brute_force_count(sizes, data):
    sizes[-1] = max(sizes[-1], 2)
    keep = [np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)), float)
            for n in sizes[:-1]] + [np.ones(sizes[-1])]
    removed = 0
    for l in range(1, len(sizes)):
        removed += np.sum(np.outer(keep[l - 1], keep[l]) == 0)
        if l < len(sizes) - 1:
            removed += np.sum(keep[l] == 0)
    dropped = [int(np.sum(k == 0)) for k in keep]
    headline, strict = total_dropout_rate(sizes, dropped)
    assert strict == pytest.approx(100.0 * removed / param_count(sizes), abs=1e-9)
    assert 0.0 <= headline <= 100.0 + 1e-9


def test_config_round_trip_and_validation():
    cfg = ExperimentConfig(dropout="ising", sizes=(784, 100, 50, 50, 10), lam=2.5, seed=3)
    text = cfg.to_json()
    back = ExperimentConfig.from_json(text)
    assert back == cfg and back.to_json() == text
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"dropuot": "none"})
    assert cfg.replace(seed=9).seed == 9 and cfg.seed == 3


def test_labels():
    assert ExperimentConfig().label() == "No Dropout"
    assert ExperimentConfig(dropout="random", input_dropout=True).label() == \
        "Dropout (p=0.5) (input layer included)"
    assert ExperimentConfig(dropout="ising", inference_masking=True).label() == \
        "Ising-Dropout (training+inference)"


def sample_report(**kw):
    base = dict(model="No Dropout", arch=[784, 100, 100, 10], layer_drop_pct=[0.0, 1.5, 2.25],
                total_pct=0.1, strict_total_pct=0.3, params=89610, accuracy=95.5,
                accuracy_masked=95.5, accuracy_unmasked=95.5, final_drop_counts=[0, 1, 2, 0],
                final_total_pct=0.12, train_loss=[0.5, 0.25], monitor_loss=[0.5, 0.3],
                epochs_run=2, steps=10, config=ExperimentConfig().to_dict())
    base.update(kw)
    return MetricsReport(**base)


def test_report_round_trip_byte_identical():
    r = sample_report()
    text = r.to_json()
    assert MetricsReport.from_json(text).to_json() == text
    many = dump_reports([r, sample_report(model="x")])
    assert dump_reports(parse_reports(many)) == many
    assert r.hidden_drop_pct() == pytest.approx((1.5 + 2.25) / 2)


def test_csv_layout():
    rows = [sample_report(), sample_report(arch=[784, 100, 50, 50, 10],
                                           layer_drop_pct=[0, 1, 2, 3], params=86610)]
    text = reports_to_csv(rows)
    parsed = list(csv.reader(io.StringIO(text)))
    assert parsed[0] == csv_columns(4) == [
        "model", "arch", "h0_pct", "h1_pct", "h2_pct", "h3_pct",
        "total_pct", "strict_total_pct", "P", "acc"]
    assert parsed[1][1] == "(784,100,100,10)"
    assert parsed[1][5] == ""  # shallower net leaves the extra layer empty
    assert all(row[-1] for row in parsed[1:])


def test_pgm_round_trip(tmp_path):
    img = np.arange(28 * 28, dtype=np.uint8).reshape(28, 28)
    img[0, :3] = [10, 32, 9]  # whitespace byte values right after the header
    write_pgm(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n28 28\n255\n")
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)
    (tmp_path / "b.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "b.pgm")


def pixel_data(n=4):
    rng = np.random.default_rng(0)
    return DataSet(rng.integers(1, 256, (n, 784)) / 255.0, np.arange(n) % 10)


def test_emit_identity_and_black(tmp_path):
    data = pixel_data(3)
    paths = emit_masked_inputs(data, np.ones(784), 3, tmp_path / "ones")
    assert len(paths) == 6
    for i in range(3):
        orig = read_pgm(paths[2 * i])
        assert np.array_equal(orig, read_pgm(paths[2 * i + 1]))
        assert np.array_equal(orig.ravel(), np.rint(data.images[i] * 255).astype(np.uint8))
    paths = emit_masked_inputs(data, np.zeros(784), 1, tmp_path / "zeros")
    assert not read_pgm(paths[1]).any()
    with pytest.raises(ValueError):
        emit_masked_inputs(data, np.ones(10), 1, tmp_path)
    with pytest.raises(ValueError):
        emit_masked_inputs(data, np.ones(784), 0, tmp_path)


def test_emit_pixel_count_audit(tmp_path):
    rng = np.random.default_rng(3)
    keep = np.ones(784)
    keep[rng.choice(784, 303, replace=False)] = 0  # 38.6% of the pixels
    paths = emit_masked_inputs(pixel_data(2), keep, 2, tmp_path)
    masked = read_pgm(paths[1]).ravel()
    assert np.sum(masked == 0) == 303  # source pixels are all nonzero
    assert np.all(masked[keep == 0] == 0)
    assert round(100 * np.mean(keep == 0), 1) == 38.6


# end-to-end runs on a tiny synthetic IDX set

@pytest.fixture(scope="module")
def idx_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("idx")
    rng = np.random.default_rng(0)
    protos = rng.integers(0, 256, (10, 28, 28))
    out = {}
    for split, n in (("train", 300), ("test", 100)):
        labels = (np.arange(n) % 10).astype(np.uint8)
        noise = rng.integers(-40, 41, (n, 28, 28))
        imgs = np.clip(protos[labels] + noise, 0, 255).astype(np.uint8)
        ip, lp = root / f"{split}-images", root / f"{split}-labels"
        write_idx(imgs, labels, ip, lp, compress=(split == "test"))
        out[f"{split}_images"], out[f"{split}_labels"] = str(ip), str(lp)
    return out


def tiny_config(idx_files, **kw):
    base = dict(sizes=(784, 12, 12, 10), epochs=2, sweeps=50, restarts=2, **idx_files)
    base.update(kw)
    return ExperimentConfig(**base)


def test_run_experiment_writes_artifacts(idx_files, tmp_path):
    cfg = tiny_config(idx_files, dropout="ising", inference_masking=True, input_dropout=True,
                      convention="literal", field_mode="signed_bias", lam=3.0)
    rep = run_experiment(cfg, out_dir=tmp_path)
    assert rep.params == param_count(cfg.sizes)
    assert len(rep.layer_drop_pct) == 3
    assert all(0 <= p <= 100 for p in rep.layer_drop_pct)
    assert rep.accuracy == rep.accuracy_masked
    files = sorted(p.name for p in tmp_path.iterdir())
    assert len(files) == 2
    stem = "ising-dropout-training-inference-input-layer-included_784-12-12-10_s0"
    assert files == [f"{stem}.ckpt.npz", f"{stem}.report.json"]
    spec, bank, mask, seed = load_checkpoint(tmp_path / f"{stem}.ckpt.npz")
    assert spec == cfg.network_spec() and seed == 0
    again = run_experiment(cfg)
    assert again.layer_drop_pct == rep.layer_drop_pct and again.accuracy == rep.accuracy


def test_run_experiment_missing_data(tmp_path):
    cfg = ExperimentConfig(train_images=str(tmp_path / "nope"), train_labels="x",
                           test_images="y", test_labels="z")
    with pytest.raises(RuntimeError, match="cannot read data"):
        run_experiment(cfg)


def test_grid_rows_and_failures(idx_files, tmp_path):
    rows = [tiny_config(idx_files, dropout=m, sizes=a)
            for a in ((784, 12, 12, 10), (784, 10, 6, 6, 10)) for m in ("none", "random")]
    rows.append(tiny_config(idx_files, train_images=str(tmp_path / "missing")))
    reports, failures = run_grid(rows, out_dir=tmp_path / "g")
    assert len(reports) == 4 and len(failures) == 1
    text = (tmp_path / "g" / "results.csv").read_text()
    assert len(text.splitlines()) == 5
    assert (tmp_path / "g" / "failures.json").exists()
    assert "Failed rows" in (tmp_path / "g" / "report.txt").read_text()
    assert len(parse_reports((tmp_path / "g" / "reports.json").read_text())) == 4
    run_grid(rows, out_dir=tmp_path / "h")
    assert (tmp_path / "h" / "results.csv").read_text() == text
    with pytest.raises(ValueError):
        run_grid([])


def test_expand_grid():
    grid = {"base": {"epochs": 1}, "rows": [{"dropout": "none"}, {"dropout": "random"}],
            "archs": [[784, 100, 100, 10], [784, 100, 50, 50, 10], [784, 100, 50, 50, 25, 10]],
            "seeds": [0]}
    configs = expand_grid(grid)
    assert len(configs) == 6
    assert configs[-1].sizes == (784, 100, 50, 50, 25, 10) and configs[-1].epochs == 1
    assert len(expand_grid([{"seed": 1}, {"seed": 2}])) == 2


def test_cli_train_report_emit(idx_files, tmp_path, capsys):
    cfg = tiny_config(idx_files, dropout="ising", input_dropout=True, inference_masking=True,
                      convention="literal", field_mode="signed_bias", lam=3.0)
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(cfg.to_json())
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--seed", "2", "--out", str(out)]) == 0
    assert "Network (784, 12, 12, 10)" in capsys.readouterr().out
    reports = list(out.glob("*_s2.report.json"))
    assert len(reports) == 1
    assert main(["report", str(out)]) == 0
    assert "Ising-Dropout" in capsys.readouterr().out
    ckpt = next(out.glob("*.ckpt.npz"))
    img_dir = tmp_path / "imgs"
    rc = main(["emit-images", "--checkpoint", str(ckpt), "--data", idx_files["test_images"],
               idx_files["test_labels"], "--count", "3", "--out", str(img_dir)])
    assert rc == 0
    assert len(list(img_dir.glob("*.pgm"))) == 6
    # labels file is optional
    rc = main(["emit-images", "--checkpoint", str(ckpt), "--data", idx_files["test_images"],
               "--count", "1", "--out", str(tmp_path / "imgs2")])
    assert rc == 0


def test_cli_grid_and_env_override(idx_files, tmp_path, monkeypatch, capsys):
    grid = {"base": tiny_config(idx_files).to_dict(),
            "rows": [{"dropout": "none"}, {"dropout": "random", "p": 0.5}]}
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(grid))
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env_out"))
    assert main(["grid", "--config", str(path)]) == 0
    assert (tmp_path / "env_out" / "results.csv").exists()


def test_cli_failures_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sizes": [784, 10, 10], "colour": "red"}))
    assert main(["train", "--config", str(bad)]) == 2
    assert "unknown config fields" in capsys.readouterr().err
    assert main(["report", str(tmp_path)]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])
