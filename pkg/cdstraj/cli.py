"""Command-line entry points: synth, train, evaluate, predict, ablate."""

from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path

import structlog

from cdstraj.config import ConfigurationError, Settings, load_settings
from cdstraj.evaluation import ablation_run, baseline_reports, evaluate_model, write_report
from cdstraj.logging_setup import configure_logging
from cdstraj.numerics import ContractViolation, Rng
from cdstraj.plotting import emit_plot
from cdstraj.scenario_data import (
    DataFormatError,
    DatasetSplit,
    ScenarioWindow,
    build_windows,
    dataset_hash,
    group_tracks,
    load_tracks_csv,
    read_split_cache,
    read_windows_jsonl,
    synth_generate,
    write_split_cache,
)
from cdstraj.training import (
    CheckpointError,
    load_checkpoint,
    restore_model,
    save_checkpoint,
    train_two_stage,
)

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_IO = 2


def _dataset(settings: Settings, data: str | None) -> DatasetSplit:
    """Cached splits from ``data`` (or ``train.data_dir``), else a fresh synthetic set."""
    directory = data or settings.train.data_dir
    if directory is not None:
        return read_split_cache(directory)
    return synth_generate(
        Rng(settings.train.seed),
        settings.data.n_scenes,
        settings.data.agents_per_scene,
        settings.data,
    )


def _scene_window(path: Path, settings: Settings) -> ScenarioWindow:
    """First window of a JSON-lines window file or a track CSV."""
    if path.suffix == ".csv":
        windows = build_windows(
            group_tracks(load_tracks_csv(path, source_hz=settings.data.source_hz)),
            stride=settings.data.csv_stride,
            n_max=settings.data.n_max,
            radius_lat=settings.data.radius_lat,
            radius_lon=settings.data.radius_lon,
        )
    else:
        windows = read_windows_jsonl(path)
    if not windows:
        raise DataFormatError(f"{path}: no complete 41-frame window")
    return windows[0]


def cmd_synth(args: argparse.Namespace) -> int:
    settings = load_settings(args.config)
    split = synth_generate(
        Rng(settings.train.seed),
        settings.data.n_scenes,
        settings.data.agents_per_scene,
        settings.data,
    )
    write_split_cache(split, args.out)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    settings = load_settings(args.config)
    split = _dataset(settings, args.data)
    resume = load_checkpoint(args.resume) if args.resume else None
    manifest = train_two_stage(settings, split, metrics_path=args.metrics, resume=resume)
    save_checkpoint(manifest, args.out)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = restore_model(load_checkpoint(args.ckpt))
    split = read_split_cache(args.data)
    windows = split.test or split.validation
    if not windows:
        raise ContractViolation(f"{args.data} holds no test or validation windows")
    data_hash = dataset_hash(windows)
    reports = [
        evaluate_model(model, windows, "cdstraj", split.provenance, data_hash),
        *baseline_reports(windows, split.provenance, data_hash),
    ]
    write_report(reports, args.report)
    for report in reports:
        logger.info("Horizon RMSE", model=report.model, rmse=[round(v, 3) for v in report.rmse])
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    manifest = load_checkpoint(args.ckpt)
    model = restore_model(manifest)
    window = _scene_window(Path(args.scene), manifest.to_settings())
    emit_plot(window, model.predict_full(window), args.svg)
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    settings = load_settings(args.config)
    split = _dataset(settings, args.data)
    rows = ablation_run(settings, split, seeds=args.seeds)
    write_report([row.report for row in rows], args.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdstraj", description="Vehicle trajectory prediction pipeline"
    )
    parser.add_argument("--log-level", default="INFO", help="Logging level (default INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="Generate and cache a synthetic dataset")
    synth.add_argument("--config", required=True, help="JSON config file")
    synth.add_argument("--out", required=True, help="Output dataset directory")
    synth.set_defaults(handler=cmd_synth)

    train = commands.add_parser("train", help="Run two-stage training")
    train.add_argument("--config", required=True, help="JSON config file")
    train.add_argument("--out", required=True, help="Checkpoint path")
    train.add_argument("--data", help="Dataset directory (default: train.data_dir or synthetic)")
    train.add_argument("--metrics", help="Per-epoch metrics CSV")
    train.add_argument("--resume", help="Checkpoint to continue from")
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("evaluate", help="Write an RMSE-by-horizon report")
    evaluate.add_argument("--ckpt", required=True, help="Checkpoint path")
    evaluate.add_argument("--data", required=True, help="Dataset directory")
    evaluate.add_argument("--report", required=True, help="Report CSV path")
    evaluate.set_defaults(handler=cmd_evaluate)

    predict = commands.add_parser("predict", help="Plot the prediction for one scene")
    predict.add_argument("--ckpt", required=True, help="Checkpoint path")
    predict.add_argument("--scene", required=True, help="Track CSV or window JSON-lines file")
    predict.add_argument("--svg", required=True, help="Output SVG path")
    predict.set_defaults(handler=cmd_predict)

    ablate = commands.add_parser("ablate", help="Run the six-configuration ablation")
    ablate.add_argument("--config", required=True, help="JSON config file")
    ablate.add_argument("--report", required=True, help="Report CSV path")
    ablate.add_argument("--data", help="Dataset directory (default: train.data_dir or synthetic)")
    ablate.add_argument("--seeds", type=int, nargs="+", help="Seeds to average over")
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def cli_main(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_IO
    try:
        configure_logging(args.log_level)
    except ValueError as e:
        parser.print_usage(sys.stderr)
        print(f"cdstraj: error: {e}", file=sys.stderr)
        return EXIT_IO

    try:
        return int(args.handler(args))
    except ContractViolation as e:
        logger.error("Contract violation", command=args.command, error=str(e))
        return EXIT_CONTRACT
    except (ConfigurationError, DataFormatError, CheckpointError, OSError) as e:
        logger.error("Command failed", command=args.command, error=str(e))
        return EXIT_IO


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
