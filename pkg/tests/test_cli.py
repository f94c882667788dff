import csv
import json
from pathlib import Path

import numpy as np
import pytest

from cli.commands import build_parser, run

SYNTHETIC = [
    "--set", "dataset=synthetic",
    "--set", "train_subset=8",
    "--set", "val_subset=4",
    "--set", "codebook_size=16",
    "--set", "latent_dim=4",
    "--set", "hidden_dim=16",
    "--set", "batch_size=4",
    "--set", "epochs=1",
]


def train_run(out: Path, *extra: str) -> int:
    return run(["train", "--out", str(out), "--seed", "7", *SYNTHETIC, *extra])


def test_train_writes_artifacts(tmp_path):
    assert train_run(tmp_path) == 0
    with (tmp_path / "metrics.csv").open() as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["step", "l1", "l2", "commit", "total", "usage_frac", "perplexity"]
    assert [row[0] for row in rows[1:]] == ["1", "2"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["quantizer"] == "optvq"
    assert summary["seed"] == 7
    assert summary["validation_images"] == 4
    assert summary["hardware"]["cpu_count"] >= 1
    assert summary["peak_rss_mb"] > 0
    assert (tmp_path / "checkpoint.ovq").read_bytes()[:4] == b"OVQ1"
    assert "seed = 7" in (tmp_path / "config.txt").read_text()
    with (tmp_path / "usage_histogram.csv").open() as handle:
        histogram = list(csv.DictReader(handle))
    assert len(histogram) == 16
    assert sum(int(row["count"]) for row in histogram) == 4 * 16


def test_metrics_are_byte_identical_across_runs(tmp_path):
    assert train_run(tmp_path / "a") == 0
    assert train_run(tmp_path / "b") == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_eval_reuses_checkpoint(tmp_path):
    assert train_run(tmp_path) == 0
    assert run(["eval", "--out", str(tmp_path), "--seed", "7", *SYNTHETIC]) == 0
    evaluated = json.loads((tmp_path / "eval.json").read_text())
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert evaluated["psnr"] == pytest.approx(summary["psnr"], abs=1e-12)


def test_config_file(tmp_path):
    config = tmp_path / "run.txt"
    config.write_text("quantizer = nearest\n" + "\n".join(SYNTHETIC[1::2]) + "\n")
    assert run(["train", "--config", str(config), "--out", str(tmp_path / "out")]) == 0
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["quantizer"] == "nearest"


def test_studies(tmp_path):
    assert run(["sinkhorn-study", "--out", str(tmp_path)]) == 0
    with (tmp_path / "sinkhorn_convergence.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 10
    assert run(["normalize-study", "--out", str(tmp_path)]) == 0
    assert run(["consistency", "--out", str(tmp_path), "--seed", "1"]) == 0
    payload = json.loads((tmp_path / "consistency.json").read_text())
    assert set(payload) == {"separated_pairs", "mismatched"}
    assert run(["dynamics2d", "--out", str(tmp_path), "--set", "sinkhorn_iters=5"]) == 0
    assert json.loads((tmp_path / "dynamics2d.json").read_text())["codes"] == 25


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--set", "colour=red"],
        ["train", "--set", "heads=zero"],
        ["train", "--set", "dataset=cifar"],
        ["train", "--seed", "-1"],
        ["train", "--set", "epsilon=0"],
        ["train", "--set", "latent_dim=6", "--set", "heads=4"],
        ["train", *SYNTHETIC, "--set", "patch_size=5"],
    ],
)
def test_config_errors_exit_2(tmp_path, argv):
    assert run([*argv, "--out", str(tmp_path)]) == 2


def test_missing_data_exits_3(tmp_path):
    argv = ["train", "--out", str(tmp_path), "--set", "dataset=mnist", "--set", f"data_dir={tmp_path / 'none'}"]
    assert run(argv) == 3


def test_missing_checkpoint_exits_3(tmp_path):
    assert run(["eval", "--out", str(tmp_path), *SYNTHETIC]) == 3


def test_diverging_training_exits_4(tmp_path):
    assert train_run(tmp_path, "--set", "lr=1e300") == 4


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


@pytest.mark.slow
def test_mnist_acceptance(tmp_path):
    data_dir = Path("data")
    if not any(data_dir.glob("train-images-idx3-ubyte*")):
        pytest.skip("MNIST files not present under ./data")
    base = ["--set", "data_dir=data", "--set", "train_subset=10000", "--set", "val_subset=1000", "--set", "epochs=5"]
    usage, gaps = [], []
    for seed in (0, 1, 2):
        summary = {}
        for kind in ("nearest", "optvq"):
            out = tmp_path / f"{kind}_{seed}"
            assert run(["train", "--out", str(out), "--seed", str(seed), "--set", f"quantizer={kind}", *base]) == 0
            summary[kind] = json.loads((out / "summary.json").read_text())
        usage.append(summary["optvq"]["usage_frac"] - summary["nearest"]["usage_frac"])
        gaps.append(summary["optvq"]["psnr"] - summary["nearest"]["psnr"])
    # Full usage and a 5 dB margin need longer training than this; see DESIGN.md.
    assert np.median(usage) > 0, usage
    assert np.median(gaps) > 0, gaps


@pytest.mark.slow
def test_ablate_writes_grid(tmp_path):
    assert run(["ablate", "--out", str(tmp_path), *SYNTHETIC]) == 0
    with (tmp_path / "ablation.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 8
    assert {row["quantizer"] for row in rows} == {"nearest", "optvq"}
    assert (tmp_path / "d32_n1024_optvq" / "metrics.csv").exists()
    val_tokens = 4 * 16
    for row in rows:
        assert float(row["usage_frac"]) <= val_tokens / int(row["codebook_size"])
    for d in ("8", "32"):
        nearest = sorted(
            (int(row["codebook_size"]), float(row["usage_frac"]))
            for row in rows
            if row["latent_dim"] == d and row["quantizer"] == "nearest"
        )
        assert nearest[0][1] > nearest[1][1], nearest
