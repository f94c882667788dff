"""Command-line surface: training, evaluation and the desk-scale studies."""
from __future__ import annotations

import argparse
import csv
import json
import logging
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from models.config import RunConfig, StepMetrics, TrainStatus
from processing import experiments
from processing.pipeline import METRIC_COLUMNS, EvalResult, evaluate, train
from processing.quantizer import effective_codebook_size
from utils.checkpoint import load_checkpoint, save_checkpoint
from utils.data_utils import load_dataset
from utils.errors import ConfigError, OptVQError
from utils.settings_manager import SettingsManager
from utils.system import detect_hardware, peak_memory_mb

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.ovq"
STUDY_ITERATIONS = 10
STUDY_TRIALS = 100


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path: Path, metrics: Sequence[StepMetrics]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in metrics:
            writer.writerow([_fmt(getattr(row, column)) for column in METRIC_COLUMNS])
    return path


def write_rows_csv(path: Path, rows: Sequence[dict]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        if rows:
            writer.writerow(rows[0].keys())
            for row in rows:
                writer.writerow([_fmt(value) for value in row.values()])
    return path


def write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def write_histogram(path: Path, histogram: np.ndarray) -> Path:
    return write_rows_csv(path, [{"code": j, "count": int(c)} for j, c in enumerate(histogram)])


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _eval_summary(config: RunConfig, result: EvalResult) -> dict:
    return {
        "quantizer": config.quantizer,
        "dataset": config.dataset,
        "seed": config.seed,
        "psnr": result.psnr,
        "l_rec": result.l_rec,
        "usage_frac": result.usage.fraction_used,
        "perplexity": result.usage.perplexity,
        "codes_used": result.usage.codes_used,
        "least_used_count": result.usage.least_used_count,
        "effective_codebook_size": effective_codebook_size(config.codebook_size, config.heads),
        "validation_images": result.images,
    }


def _log_progress(status: TrainStatus) -> None:
    logger.debug(
        "%s (%d/%d, eta %.0fs, cpu %.0f%%)",
        status.message,
        status.current_step,
        status.total_steps,
        status.eta_seconds,
        status.usage_percent,
    )


def cmd_train(config: RunConfig, settings: SettingsManager | None = None) -> int:
    out = _out_dir(config)
    if settings is not None:
        settings.save(out / "config.txt")
    train_cfg = config.train_config()
    train_set = load_dataset(config, "train")
    val_set = load_dataset(config, "val")
    report = train(train_cfg, train_set, progress=_log_progress)
    write_metrics_csv(out / "metrics.csv", report.metrics)
    save_checkpoint(out / CHECKPOINT_NAME, report.state)
    result = evaluate(report.state, train_cfg.quantizer, val_set, train_cfg.batch_size)
    write_histogram(out / "usage_histogram.csv", result.usage.histogram)
    summary = _eval_summary(config, result)
    summary["steps"] = report.state.step
    summary["hardware"] = detect_hardware().to_dict()
    summary["peak_rss_mb"] = round(peak_memory_mb(), 1)
    write_json(out / "summary.json", summary)
    logger.info("Validation PSNR %.2f dB, code usage %.2f%%", result.psnr, 100 * result.usage.fraction_used)
    return 0


def cmd_eval(config: RunConfig, settings: SettingsManager | None = None) -> int:
    out = _out_dir(config)
    state = load_checkpoint(out / CHECKPOINT_NAME)
    val_set = load_dataset(config, "val")
    result = evaluate(state, config.quantizer_config(), val_set, config.batch_size)
    write_histogram(out / "usage_histogram.csv", result.usage.histogram)
    write_json(out / "eval.json", _eval_summary(config, result))
    logger.info("Validation PSNR %.2f dB, code usage %.2f%%", result.psnr, 100 * result.usage.fraction_used)
    return 0


def cmd_dynamics2d(config: RunConfig, settings: SettingsManager | None = None) -> int:
    result = experiments.dynamics2d(config.seed, sinkhorn_cfg=config.sinkhorn_config())
    write_json(_out_dir(config) / "dynamics2d.json", result.to_dict())
    return 0


def cmd_consistency(config: RunConfig, settings: SettingsManager | None = None) -> int:
    cases = experiments.consistency(config.seed, config.sinkhorn_config())
    payload = {case.name: case.__dict__ for case in cases}
    write_json(_out_dir(config) / "consistency.json", payload)
    for case in cases:
        logger.info("%s: agreement %.3f, optvq covers %d/%d codes", case.name, case.agreement, case.optvq_coverage, case.codes)
    return 0


def cmd_sinkhorn_study(config: RunConfig, settings: SettingsManager | None = None) -> int:
    rows = experiments.sinkhorn_study(
        config.seed, trials=STUDY_TRIALS, max_iters=STUDY_ITERATIONS, epsilon=config.epsilon
    )
    write_rows_csv(_out_dir(config) / "sinkhorn_convergence.csv", [row.__dict__ for row in rows])
    return 0


def cmd_normalize_study(config: RunConfig, settings: SettingsManager | None = None) -> int:
    rows = experiments.normalize_study(config.seed, epsilon=config.epsilon, iterations=config.sinkhorn_iters)
    flat = []
    for row in rows:
        record = dict(row.__dict__)
        record["histogram"] = " ".join(str(c) for c in row.histogram)
        record["bin_edges"] = " ".join(repr(e) for e in row.bin_edges)
        flat.append(record)
    write_rows_csv(_out_dir(config) / "normalize_study.csv", flat)
    return 0


def cmd_ablate(config: RunConfig, settings: SettingsManager | None = None) -> int:
    out = _out_dir(config)
    train_set = load_dataset(config, "train")
    val_set = load_dataset(config, "val")
    cells = experiments.ablation_grid(config.train_config(), train_set, val_set)
    for cell in cells:
        cell_dir = out / f"d{cell.latent_dim}_n{cell.codebook_size}_{cell.quantizer}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(cell_dir / "metrics.csv", cell.report.metrics)
    write_rows_csv(out / "ablation.csv", [cell.row() for cell in cells])
    return 0


COMMANDS: dict[str, Callable[[RunConfig, SettingsManager | None], int]] = {
    "train": cmd_train,
    "eval": cmd_eval,
    "dynamics2d": cmd_dynamics2d,
    "consistency": cmd_consistency,
    "sinkhorn-study": cmd_sinkhorn_study,
    "normalize-study": cmd_normalize_study,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optvq", description="Vector quantization via entropic optimal transport.")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=Path, help="key=value config file")
        cmd.add_argument("--seed", type=int, help="override the run seed")
        cmd.add_argument("--out", help="output directory")
        cmd.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    return parser


def resolve_settings(args: argparse.Namespace) -> SettingsManager:
    settings = SettingsManager(args.config, args.overrides)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}.")
        settings.set("seed", args.seed)
    if args.out is not None:
        settings.set("out_dir", args.out)
    return settings


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command](settings.config, settings)
    except OptVQError as exc:
        logger.error("%s", exc)
        return exc.exit_code
