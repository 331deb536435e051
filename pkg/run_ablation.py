# -*- coding: utf-8 -*-
"""
Ablation over the survival head and age fusion.

Trains Regression, Regression + Age, Post-hoc and Post-hoc + Age on one
phantom set for every seed, evaluates the selected model on the training
and the validation split, and writes one CSV row per variant and seed plus
a median row per variant.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import pandas as pd

from cases.phantoms import synthesize_phantom
from cases.preprocessing import compute_normalization_stats, split
from evaluation.evaluate import evaluate
from helpers import exit_code_for, setup_logging
from network.model import init
from posthoc_survival import ArgumentParser, prepare_cases
from run_config import load_run_config
from training.trainer import fit


logger = logging.getLogger(__name__)

VARIANTS = (
    ("Regression", "regression", False),
    ("Regression + Age", "regression", True),
    ("Post-hoc", "posthoc", False),
    ("Post-hoc + Age", "posthoc", True),
)
ABLATION_COLUMNS = ["variant", "seed", "train_accuracy", "train_mse", "val_accuracy", "val_mse"]
ABLATION_NAME = "ablation.csv"


def phantom_splits(config):
    """Synthesize the phantom set once and return prepared (train, validation) cases."""
    cases = synthesize_phantom(config.phantom, max_days=config.network.max_days)
    ids = pd.DataFrame({"id": [case.case_id for case in cases]})
    train_ids, val_ids = split(ids, config.data.val_fraction, config.data.split_seed)

    by_id = {case.case_id: case for case in cases}
    train_raw = [by_id[case_id] for case_id in train_ids["id"]]
    val_raw = [by_id[case_id] for case_id in val_ids["id"]]
    stats = compute_normalization_stats(train_raw)
    factor = config.data.downsample
    size = config.network.input_size
    return prepare_cases(train_raw, stats, factor, size), prepare_cases(val_raw, stats, factor, size)


def run_variant(config, train_cases, val_cases, head, use_age, seed):
    """Train one variant for one seed; returns its train/validation accuracy and MSE."""
    network = replace(config.network, head=head, use_age=use_age, seed=seed)
    train = replace(config.train, seed=seed)
    result = fit(init(network), train_cases, val_cases, train, config.thresholds)

    train_report, _ = evaluate(result.model, train_cases, config.thresholds)
    val_report, _ = evaluate(result.model, val_cases, config.thresholds)
    return {
        "train_accuracy": train_report.accuracy,
        "train_mse": train_report.mse,
        "val_accuracy": val_report.accuracy,
        "val_mse": val_report.mse,
    }


def run_ablation(config, seeds):
    """
    Train every variant for every seed on the same phantom split.

    Args:
        config (RunConfig): Phantom, network, training and split settings.
        seeds (list[int]): Seeds for parameter initialization and training.

    Returns:
        pandas.DataFrame: ABLATION_COLUMNS, per-seed rows followed by one
        "median" row per variant.
    """
    train_cases, val_cases = phantom_splits(config)
    print(f"1. Phantoms prepared: {len(train_cases)} train, {len(val_cases)} validation")

    rows = []
    for name, head, use_age in VARIANTS:
        for seed in seeds:
            scores = run_variant(config, train_cases, val_cases, head, use_age, seed)
            rows.append({"variant": name, "seed": str(seed), **scores})
            logger.info("%s seed %d: val accuracy %.3f val MSE %.1f", name, seed,
                        scores["val_accuracy"], scores["val_mse"])
    print(f"2. Trained {len(VARIANTS)} variants over {len(seeds)} seed(s)")

    results = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
    medians = (
        results.groupby("variant", sort=False)[ABLATION_COLUMNS[2:]]
        .median()
        .reset_index()
        .assign(seed="median")
    )
    return pd.concat([results, medians[ABLATION_COLUMNS]], ignore_index=True)


def main(argv=None):
    parser = ArgumentParser(description="Regression vs post-hoc head, with and without age")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--config", type=str, default=None, help="Run config (JSON)")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="Training seeds")
    parser.add_argument("--out", type=str, default=None, help="Override output_dir")

    try:
        args = parser.parse_args(argv)
        setup_logging(args.verbose)
        config = load_run_config(args.config, out=args.out)

        results = run_ablation(config, args.seeds)
        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        results.to_csv(out_dir / ABLATION_NAME, index=False, lineterminator="\n")
        print(f"3. Results written to {out_dir / ABLATION_NAME}")
        print(results.loc[results["seed"] == "median"].to_string(index=False))
        return 0
    except Exception as error:  # pylint: disable=broad-except
        print(f"Error: {error}", file=sys.stderr)
        return exit_code_for(error)


if __name__ == "__main__":
    sys.exit(main())
