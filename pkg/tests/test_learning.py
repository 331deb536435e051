# -*- coding: utf-8 -*-
"""Full-size phantom training runs; deselected unless pytest is run with -m slow."""
import contextlib
import io
import json
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from cases.phantoms import PhantomConfig, synthesize_phantom
from cases.preprocessing import compute_normalization_stats, split
from cases.records import MODALITIES
from cases.volumes import save_volume
from evaluation.evaluate import evaluate
from network.checkpoint import save_checkpoint
from network.model import NetworkConfig, forward, init
from posthoc_survival import main
from run_ablation import run_ablation, phantom_splits
from run_config import DataConfig, RunConfig
from survival.head import monotonic_penalty
from training.optimizer import TrainConfig
from training.trainer import fit

# 200 phantoms fed at their native edge 64, leaving a 4^3 latent grid for the saliency Dice
PHANTOM_RUN = RunConfig(
    network=NetworkConfig(input_size=64, n_bins=15),
    train=TrainConfig(batch_size=8, alpha=10000.0, epochs=30),
    phantom=PhantomConfig(edge=64, n_cases=200, radius_range=(6.0, 14.0), seed=0),
    data=DataConfig(downsample=1, val_fraction=0.2),
)


@pytest.mark.slow
class TestPhantomLearning(unittest.TestCase):
    """Test that the post-hoc network learns and localizes the phantom survival rule"""

    @classmethod
    def setUpClass(cls):
        cls.train_cases, cls.val_cases = phantom_splits(PHANTOM_RUN)
        result = fit(init(PHANTOM_RUN.network), cls.train_cases, cls.val_cases, PHANTOM_RUN.train)
        cls.model = result.model
        cls.report, cls.predictions = evaluate(cls.model, cls.val_cases)

    def test_held_out_error(self):
        """Test held-out MAE within 270 days and Spearman of at least 0.6"""
        mae = np.mean(np.abs(self.predictions["pred_days"] - self.predictions["truth_days"]))
        self.assertLessEqual(mae, 270.0)
        self.assertGreaterEqual(self.report.spearman_r, 0.6)

    def test_localization(self):
        """Test top-5% saliency Dice of at least 0.3 and four times the random baseline"""
        self.assertGreaterEqual(self.report.mean_dice, 0.3)
        self.assertGreaterEqual(self.report.mean_dice, 4.0 * self.report.mean_random_dice)

    def test_overfit_training_accuracy(self):
        """Test that the trained model classifies its own training cases well"""
        train_report, _ = evaluate(self.model, self.train_cases)
        self.assertGreaterEqual(train_report.accuracy, 0.8)


@pytest.mark.slow
class TestPredictDirection(unittest.TestCase):
    """Test that the predict command shortens survival for a large tumor"""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        raw = synthesize_phantom(PHANTOM_RUN.phantom)
        ids = pd.DataFrame({"id": [case.case_id for case in raw]})
        train_ids, val_ids = split(ids, PHANTOM_RUN.data.val_fraction, PHANTOM_RUN.data.split_seed)
        by_id = {case.case_id: case for case in raw}
        stats = compute_normalization_stats([by_id[case_id] for case_id in train_ids["id"]])

        train_cases, val_cases = phantom_splits(PHANTOM_RUN)
        model = fit(init(PHANTOM_RUN.network), train_cases, val_cases, PHANTOM_RUN.train).model
        cls.checkpoint = cls.root / "best.phos"
        metadata = {"normalization": stats.to_dict(), "downsample": PHANTOM_RUN.data.downsample}
        save_checkpoint(cls.checkpoint, model, metadata=metadata)

        cls.val_raw = [by_id[case_id] for case_id in val_ids["id"]]

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def predict(self, name, volumes, age):
        argv = ["predict", "--checkpoint", str(self.checkpoint), "--age", str(age), "--out", str(self.root / name)]
        for m, modality in enumerate(MODALITIES):
            path = self.root / f"{name}_{modality}.svol"
            save_volume(path, volumes[m])
            argv += [f"--{modality}", str(path)]
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            code = main(argv)
        self.assertEqual(code, 0)
        return json.loads(stdout.getvalue())["pred_days"]

    def test_large_tumor_predicts_fewer_days(self):
        """Test the largest held-out tumor against the same phantom with the tumor removed"""
        case = max(self.val_raw, key=lambda c: int(c.tumor_mask.sum()))
        healthy = case.volumes.copy()
        healthy[:, case.tumor_mask] -= PHANTOM_RUN.phantom.tumor_intensity_offset

        with_tumor = self.predict("tumor", case.volumes, case.age_years)
        without_tumor = self.predict("healthy", healthy, case.age_years)
        self.assertLess(with_tumor, without_tumor)


@pytest.mark.slow
class TestLargePenaltyWeight(unittest.TestCase):
    """Test that a dominant penalty weight makes the bins descend"""

    def test_validation_penalty(self):
        """Test mean validation penalty below 1e-3 when alpha is 1e6"""
        train_cases, val_cases = phantom_splits(PHANTOM_RUN)
        config = replace(PHANTOM_RUN.train, alpha=1e6)
        model = fit(init(PHANTOM_RUN.network), train_cases, val_cases, config).model

        images = np.stack([case.volumes for case in val_cases])
        ages = np.array([case.age_years for case in val_cases])
        output = forward(model, images, ages, mode="eval")
        self.assertLess(monotonic_penalty(output.p).item(), 1e-3)


@pytest.mark.slow
class TestAblationDirection(unittest.TestCase):
    """Test the ordering of the head and age ablation"""

    def test_posthoc_with_age_beats_plain_regression(self):
        """Test median validation MSE over 3 seeds: post-hoc with age below regression without age"""
        table = run_ablation(PHANTOM_RUN, [0, 1, 2])
        medians = table.loc[table["seed"] == "median"].set_index("variant")["val_mse"]
        self.assertLess(medians["Post-hoc + Age"], medians["Regression"])


if __name__ == "__main__":
    unittest.main()
