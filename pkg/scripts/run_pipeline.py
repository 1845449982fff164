#!/usr/bin/env python3
"""Run the synth -> train -> evaluate pipeline end to end at a small scale."""

import argparse
import tempfile
import time
from pathlib import Path

import structlog

from cdstraj.config import load_settings
from cdstraj.evaluation import baseline_reports, evaluate_model, maneuver_accuracy, write_report
from cdstraj.logging_setup import configure_logging
from cdstraj.numerics import Rng
from cdstraj.scenario_data import dataset_hash, synth_generate, write_split_cache
from cdstraj.training import restore_model, save_checkpoint, train_two_stage

logger = structlog.get_logger(__name__)


def main() -> None:
    """Run the smoke pipeline from command line."""
    parser = argparse.ArgumentParser(description="Synthetic smoke run of the full pipeline")
    parser.add_argument("--config", help="JSON config file (defaults when omitted)")
    parser.add_argument("--scenes", type=int, default=200, help="Synthetic scenes to generate")
    parser.add_argument("--epochs", type=int, default=1, help="Epochs per training stage")
    parser.add_argument("--out", help="Output directory (temporary when omitted)")
    args = parser.parse_args()

    configure_logging("INFO")
    settings = load_settings(args.config)
    settings = settings.model_copy(
        update={
            "data": settings.data.model_copy(update={"n_scenes": args.scenes}),
            "train": settings.train.model_copy(
                update={"stage1_epochs": args.epochs, "stage2_epochs": args.epochs}
            ),
        }
    )
    out = Path(args.out or tempfile.mkdtemp(prefix="cdstraj-"))
    started = time.monotonic()

    split = synth_generate(
        Rng(settings.train.seed),
        settings.data.n_scenes,
        settings.data.agents_per_scene,
        settings.data,
    )
    write_split_cache(split, out / "data")

    manifest = train_two_stage(settings, split, metrics_path=out / "metrics.csv")
    save_checkpoint(manifest, out / "model.ckpt")

    model = restore_model(manifest)
    windows = split.test or split.validation
    data_hash = dataset_hash(windows)
    reports = [
        evaluate_model(model, windows, "cdstraj", split.provenance, data_hash),
        *baseline_reports(windows, split.provenance, data_hash),
    ]
    write_report(reports, out / "report.csv")
    accuracy = maneuver_accuracy(model, windows) if settings.decoder.conditioned else {}

    print("\n" + "=" * 50)
    print("PIPELINE RESULTS")
    print("=" * 50)
    print(f"Output:          {out}")
    print(f"Windows:         {len(split.train)}/{len(split.validation)}/{len(split.test)}")
    print(f"Parameters:      {model.params.count()}")
    for report in reports:
        print(f"{report.model + ':':<17}" + "  ".join(f"{v:6.2f}" for v in report.rmse))
    for name, value in accuracy.items():
        print(f"{'Accuracy ' + name + ':':<17}{value:.3f}")
    print(f"Elapsed:         {time.monotonic() - started:.1f}s")
    print("=" * 50)


if __name__ == "__main__":
    main()
