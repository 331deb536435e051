# -*- coding: utf-8 -*-
"""Command line entry point: synthesize phantoms, train, evaluate and predict."""

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from cases.phantoms import synthesize_phantom, write_phantoms
from cases.preprocessing import NormalizationStats, compute_normalization_stats, prepare_case, split
from cases.records import MODALITIES, CaseRecord, load_cases, read_manifest
from cases.volumes import load_volume, save_volume
from evaluation.evaluate import evaluate, write_predictions
from evaluation.metrics import survival_class
from evaluation.slices import export_slices
from helpers import ConfigError, DataError, canonical_json, exit_code_for, setup_logging
from network.checkpoint import load_checkpoint, save_checkpoint
from network.model import explain, forward_regression, init
from run_config import load_run_config
from training.optimizer import OptimizerState
from training.trainer import fit, write_history


logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.phos"
LAST_CHECKPOINT_NAME = "last.phos"
HISTORY_NAME = "history.jsonl"
REPORT_NAME = "report.json"
PREDICTIONS_NAME = "predictions.csv"
PHANTOM_DIR = "phantoms"


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage errors as ConfigError (exit code 1)."""

    def error(self, message):
        raise ConfigError(message)


def prepare_cases(cases, stats, factor, input_size):
    """Normalize and downsample cases, checking they match the network input."""
    prepared = [prepare_case(case, stats, factor) for case in cases]
    for case in prepared:
        if case.volumes.shape[1:] != (input_size,) * 3:
            raise ConfigError(
                f"network.input_size is {input_size} but case {case.case_id} has edge "
                f"{case.volumes.shape[1:]} after data.downsample = {factor}"
            )
    return prepared


def load_training_cases(config):
    """
    Read the manifest, split it, and prepare both splits with statistics
    computed on the training split only.

    Returns:
        tuple: (train cases, validation cases, NormalizationStats)
    """
    if not config.data.manifest:
        raise ConfigError("data.manifest is required")
    manifest = read_manifest(config.data.manifest, max_days=config.network.max_days)
    unlabeled = manifest.loc[manifest["survival_days"].isna(), "id"].tolist()
    if unlabeled:
        raise DataError(f"Training needs survival labels; missing for {unlabeled}")

    train_df, val_df = split(manifest, config.data.val_fraction, config.data.split_seed)
    train_raw = load_cases(train_df)
    stats = compute_normalization_stats(train_raw)
    train_cases = prepare_cases(train_raw, stats, config.data.downsample, config.network.input_size)
    val_cases = prepare_cases(load_cases(val_df), stats, config.data.downsample, config.network.input_size)
    return train_cases, val_cases, stats


def cmd_synth(config):
    out_dir = Path(config.output_dir) / PHANTOM_DIR
    cases = synthesize_phantom(config.phantom, max_days=config.network.max_days)
    print(f"1. {len(cases)} phantoms synthesized")

    manifest_path = write_phantoms(cases, out_dir)
    print(f"2. Volumes and manifest written to {manifest_path}")
    return 0


def cmd_train(config, resume=None):
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_cases, val_cases, stats = load_training_cases(config)
    print(f"1. Cases loaded: {len(train_cases)} train, {len(val_cases)} validation")

    rng = np.random.default_rng(config.train.seed)
    optimizer_state = OptimizerState()
    start_epoch = 1
    if resume is not None:
        model, optimizer_state, meta = load_checkpoint(resume)
        check_network_match(model.config, config.network)
        if "rng_state" not in meta or optimizer_state is None:
            raise ConfigError(f"{resume} holds no training state to resume from")
        rng.bit_generator.state = meta["rng_state"]
        start_epoch = int(meta["epoch"]) + 1
        print(f"Resuming from epoch {start_epoch - 1} of {resume}")
    else:
        model = init(config.network)

    result = fit(
        model,
        train_cases,
        val_cases,
        config.train,
        config.thresholds,
        rng=rng,
        optimizer_state=optimizer_state,
        start_epoch=start_epoch,
    )
    print(f"2. Trained {config.train.epochs} epochs ({config.network.head} head), best epoch {result.best_epoch}")

    metadata = {
        "normalization": stats.to_dict(),
        "downsample": config.data.downsample,
        "train": asdict(config.train),
    }
    save_checkpoint(out_dir / CHECKPOINT_NAME, result.model, result.optimizer_state,
                    metadata={**metadata, "epoch": result.best_epoch})
    last_epoch = start_epoch + config.train.epochs - 1
    save_checkpoint(out_dir / LAST_CHECKPOINT_NAME, model, optimizer_state,
                    metadata={**metadata, "epoch": last_epoch, "rng_state": rng.bit_generator.state})
    write_history(result.history, out_dir / HISTORY_NAME, append=resume is not None)
    print(f"3. Checkpoints and history written to {out_dir}")

    best = result.history.loc[result.history["epoch"] == result.best_epoch].iloc[0]
    accuracy = "n/a" if pd.isna(best["val_accuracy"]) else f"{best['val_accuracy']:.3f}"
    print(f"Validation MAE {best['val_mae']:.2f} days, accuracy {accuracy}")
    return 0


def check_network_match(checkpoint_config, run_network):
    """Reject a checkpoint whose architecture differs from the run config."""
    mismatched = [
        f.name
        for f in fields(run_network)
        if f.name != "seed" and getattr(run_network, f.name) != getattr(checkpoint_config, f.name)
    ]
    if mismatched:
        details = ", ".join(
            f"network.{name}: checkpoint {getattr(checkpoint_config, name)!r} vs config {getattr(run_network, name)!r}"
            for name in mismatched
        )
        raise ConfigError(f"Checkpoint does not match config ({details})")


def cmd_eval(config, checkpoint, manifest=None):
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model, _, meta = load_checkpoint(checkpoint)
    check_network_match(model.config, config.network)
    stats = NormalizationStats.from_dict(meta["normalization"])

    manifest_path = manifest or config.data.manifest
    if not manifest_path:
        raise ConfigError("A manifest is required (--manifest or data.manifest)")
    manifest_df = read_manifest(manifest_path, max_days=model.config.max_days)
    if manifest_df["survival_days"].isna().all():
        raise DataError(f"Manifest {manifest_path} has no survival labels")

    cases = prepare_cases(load_cases(manifest_df), stats, meta["downsample"], model.config.input_size)
    report, predictions = evaluate(model, cases, config.thresholds)

    report_text = canonical_json(report)
    (out_dir / REPORT_NAME).write_text(report_text, encoding="utf-8")
    write_predictions(predictions, out_dir / PREDICTIONS_NAME)
    sys.stdout.write(report_text)
    return 0


def cmd_predict(config, checkpoint, modality_paths, age, slices=False):
    out_dir = Path(config.output_dir)
    missing = [m for m in MODALITIES if not modality_paths.get(m)]
    missing += [m for m in MODALITIES if modality_paths.get(m) and not Path(modality_paths[m]).exists()]
    if missing:
        raise DataError(f"Missing modality volume(s): {', '.join(missing)}")

    model, _, meta = load_checkpoint(checkpoint)
    stats = NormalizationStats.from_dict(meta["normalization"])
    volumes = [load_volume(modality_paths[m]) for m in MODALITIES]
    if len({v.shape for v in volumes}) != 1:
        raise DataError(f"Modality shapes differ: {[v.shape for v in volumes]}")
    case = CaseRecord(case_id="input", volumes=np.stack(volumes), age_years=float(age))
    case = prepare_cases([case], stats, meta["downsample"], model.config.input_size)[0]

    image = case.volumes[None]
    ages = np.array([case.age_years])
    out_dir.mkdir(parents=True, exist_ok=True)

    if model.config.head != "posthoc":
        days = float(forward_regression(model, image, ages, mode="eval").data[0])
        record = {"pred_days": days, "pred_class": survival_class(days, config.thresholds)}
        sys.stdout.write(json.dumps(record, indent=2) + "\n")
        return 0

    explanation = explain(model, image, ages)
    record = {
        "pred_days": explanation.y_hat,
        "pred_class": survival_class(explanation.y_hat, config.thresholds),
        "n_star": explanation.n_star,
        "bin_probabilities": explanation.p.tolist(),
    }
    save_volume(out_dir / "saliency.svol", explanation.saliency_map)
    save_volume(out_dir / "mask.svol", explanation.mask.astype(np.float32))
    if slices:
        export_slices(case.volumes[0], explanation.saliency_map, out_dir)
    sys.stdout.write(json.dumps(record, indent=2) + "\n")
    return 0


def build_parser():
    parser = ArgumentParser(description="Post-hoc overall survival prediction from brain MRI")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="Run config (JSON)")
    common.add_argument("--seed", type=int, default=None, help="Override every seed")
    common.add_argument("--out", type=str, default=None, help="Override output_dir")

    subparsers.add_parser("synth", parents=[common], help="Write phantom volumes and a manifest")

    train = subparsers.add_parser("train", parents=[common], help="Train and keep the best epoch")
    train.add_argument("--head", choices=["posthoc", "regression"], default=None, help="Override network.head")
    train.add_argument("--no-age", action="store_true", help="Train without age fusion")
    train.add_argument("--resume", type=str, default=None, help="Continue from a last.phos training state")

    evaluate_parser = subparsers.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    evaluate_parser.add_argument("--checkpoint", required=True, type=str)
    evaluate_parser.add_argument("--manifest", type=str, default=None)

    predict = subparsers.add_parser("predict", parents=[common], help="Predict one case and export saliency")
    predict.add_argument("--checkpoint", required=True, type=str)
    for modality in MODALITIES:
        predict.add_argument(f"--{modality}", type=str, default=None, help=f"{modality} volume (SVOL)")
    predict.add_argument("--age", type=float, required=True, help="Age in years")
    predict.add_argument("--slices", action="store_true", help="Also write mid-slice overlay images")
    return parser


def main(argv=None):
    """Run one command; returns the exit code (0 ok, 1 config, 2 data, 3 internal)."""
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.verbose)
        config = load_run_config(args.config, seed=args.seed, out=args.out)

        if args.command == "synth":
            return cmd_synth(config)
        if args.command == "train":
            network = config.network
            if args.head is not None:
                network = replace(network, head=args.head)
            if args.no_age:
                network = replace(network, use_age=False)
            return cmd_train(replace(config, network=network), args.resume)
        if args.command == "eval":
            return cmd_eval(config, args.checkpoint, args.manifest)
        modality_paths = {m: getattr(args, m) for m in MODALITIES}
        return cmd_predict(config, args.checkpoint, modality_paths, args.age, args.slices)
    except OSError as error:
        print(f"Error: {error}", file=sys.stderr)
        return exit_code_for(DataError(str(error)))
    except Exception as error:  # pylint: disable=broad-except
        print(f"Error: {error}", file=sys.stderr)
        return exit_code_for(error)


if __name__ == "__main__":
    sys.exit(main())
