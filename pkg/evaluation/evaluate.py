"""Model evaluation over a set of labelled cases and per-case export."""
import logging

import numpy as np
import pandas as pd

from cases.volumes import downsample_mask
from evaluation.metrics import (
    ClassThresholds,
    MetricsReport,
    classification_accuracy,
    dice,
    random_dice_baseline,
    spearman_r,
    squared_error_stats,
    survival_class,
)
from helpers import DataError
from network.model import explain, forward, forward_regression


logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ["id", "pred_days", "truth_days", "pred_class", "truth_class", "dice"]


def predict_days(model, cases, batch_size=8):
    """Eval-mode survival predictions for prepared cases, in case order."""
    predictions = []
    for start in range(0, len(cases), batch_size):
        batch = cases[start : start + batch_size]
        images = np.stack([case.volumes for case in batch])
        ages = np.array([case.age_years for case in batch], dtype=np.float64)
        if model.config.head == "posthoc":
            days = forward(model, images, ages, mode="eval").y_hat
        else:
            days = forward_regression(model, images, ages, mode="eval")
        predictions.append(days.data.copy())
    return np.concatenate(predictions) if predictions else np.zeros(0)


def evaluate(model, cases, thresholds=None):
    """
    Predict every labelled case and aggregate the evaluation metrics.

    Dice compares the top-5% mask of the transition-bin saliency map with
    the whole-tumor mask resampled to the saliency resolution (a saliency
    voxel counts as tumor when any voxel of its block is). Cases without a
    mask are left out of the Dice mean; regression models get no Dice.

    Args:
        model (PosthocModel): Trained model.
        cases (list[CaseRecord]): Prepared cases.
        thresholds (ClassThresholds | None): Survival class boundaries.

    Returns:
        tuple: (MetricsReport, per-case pandas.DataFrame with PREDICTION_COLUMNS)
    """
    thresholds = thresholds or ClassThresholds()
    labelled = [case for case in cases if case.survival_days is not None]
    if not labelled:
        raise DataError("No labelled cases to evaluate")
    if len(labelled) < len(cases):
        logger.warning("Skipping %d cases without survival labels", len(cases) - len(labelled))

    config = model.config
    factor = config.input_size // config.latent_size
    rows, dice_scores, random_scores = [], [], []

    for case in labelled:
        image = case.volumes[None]
        age = np.array([case.age_years])
        case_dice = None
        if config.head == "posthoc":
            explanation = explain(model, image, age)
            pred = explanation.y_hat
            if case.tumor_mask is not None:
                truth_mask = downsample_mask(case.tumor_mask, factor)
                case_dice = dice(explanation.mask, truth_mask)
                dice_scores.append(case_dice)
                random_scores.append(
                    random_dice_baseline(int(explanation.mask.sum()), int(truth_mask.sum()), truth_mask.size)
                )
        else:
            pred = float(forward_regression(model, image, age, mode="eval").data[0])

        rows.append(
            {
                "id": case.case_id,
                "pred_days": pred,
                "truth_days": case.survival_days,
                "pred_class": survival_class(pred, thresholds),
                "truth_class": survival_class(case.survival_days, thresholds),
                "dice": case_dice,
            }
        )

    predictions = pd.DataFrame(rows, columns=PREDICTION_COLUMNS)
    mse, median_se, std_se = squared_error_stats(predictions["pred_days"], predictions["truth_days"])
    report = MetricsReport(
        accuracy=classification_accuracy(predictions["pred_days"], predictions["truth_days"], thresholds),
        mse=mse,
        median_se=median_se,
        std_se=std_se,
        spearman_r=spearman_r(predictions["pred_days"], predictions["truth_days"]) if len(rows) >= 2 else None,
        mean_dice=float(np.mean(dice_scores)) if dice_scores else None,
        mean_random_dice=float(np.mean(random_scores)) if random_scores else None,
        n_cases=len(rows),
    )
    return report, predictions


def write_predictions(predictions, path):
    """Per-case export: id,pred_days,truth_days,pred_class,truth_class,dice."""
    predictions.to_csv(path, index=False, columns=PREDICTION_COLUMNS, lineterminator="\n")
