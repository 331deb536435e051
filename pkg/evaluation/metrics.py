"""
Evaluation quantities: squared-error statistics, Spearman rank correlation,
three-class survival accuracy and Dice overlap of saliency masks.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import pearsonr, rankdata

from helpers import ConfigError, ShapeError


logger = logging.getLogger(__name__)

# 365.25 / 12
DAYS_PER_MONTH = 30.4375
SHORT_SURVIVOR_MONTHS = 10
LONG_SURVIVOR_MONTHS = 15

SURVIVAL_CLASSES = ("short", "mid", "long")


@dataclass(frozen=True)
class ClassThresholds:
    """
    Boundaries of the short/mid/long survivor classes in days.

    Defaults are 10 and 15 months at 30.4375 days per month.
    """

    short_upper: float = SHORT_SURVIVOR_MONTHS * DAYS_PER_MONTH
    long_lower: float = LONG_SURVIVOR_MONTHS * DAYS_PER_MONTH

    def __post_init__(self):
        if not 0 < self.short_upper < self.long_lower:
            raise ConfigError(
                f"Need 0 < short_upper < long_lower, got {self.short_upper} and {self.long_lower}"
            )


@dataclass
class MetricsReport:
    """
    Aggregated evaluation results. Field order is the serialization order.

    spearman_r is None when either side has no rank variance; mean_dice and
    mean_random_dice are None when no case has a tumor mask.
    """

    accuracy: float
    mse: float
    median_se: float
    std_se: float
    spearman_r: Optional[float]
    mean_dice: Optional[float]
    mean_random_dice: Optional[float]
    n_cases: int


def _paired(pred, truth):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"Predictions ({pred.size}) and labels ({truth.size}) differ in length")
    return pred, truth


def squared_error_stats(pred, truth):
    """
    Mean, median and population standard deviation of squared errors.

    Args:
        pred (array-like): Predicted days.
        truth (array-like): True days, same length, non-empty.

    Returns:
        tuple: (mse, median_se, std_se)
    """
    pred, truth = _paired(pred, truth)
    if pred.size == 0:
        raise ShapeError("Squared-error statistics need at least one case")
    squared = (pred - truth) ** 2
    return float(squared.mean()), float(np.median(squared)), float(squared.std())


def spearman_r(pred, truth):
    """
    Pearson correlation of average-tie ranks.

    Returns:
        float | None: None, with a warning, when either side has constant ranks.
    """
    pred, truth = _paired(pred, truth)
    if pred.size < 2:
        raise ShapeError(f"Spearman correlation needs at least 2 cases, got {pred.size}")
    pred_ranks = rankdata(pred, method="average")
    truth_ranks = rankdata(truth, method="average")
    if np.ptp(pred_ranks) == 0 or np.ptp(truth_ranks) == 0:
        logger.warning("Spearman correlation undefined: %s ranks have zero variance",
                       "predicted" if np.ptp(pred_ranks) == 0 else "true")
        return None
    return float(pearsonr(pred_ranks, truth_ranks)[0])


def survival_class(days, thresholds=None):
    """short below short_upper, long above long_lower, mid in between (inclusive)."""
    thresholds = thresholds or ClassThresholds()
    if days < thresholds.short_upper:
        return "short"
    if days > thresholds.long_lower:
        return "long"
    return "mid"


def classification_accuracy(pred_days, truth_days, thresholds=None):
    """Share of cases whose predicted survival class equals the true class."""
    pred, truth = _paired(pred_days, truth_days)
    if pred.size == 0:
        raise ShapeError("Accuracy needs at least one case")
    matches = [survival_class(p, thresholds) == survival_class(t, thresholds) for p, t in zip(pred, truth)]
    return float(np.mean(matches))


def dice(pred_mask, truth_mask):
    """2|A and B| / (|A| + |B|); 1.0 when both masks are empty."""
    pred_mask = np.asarray(pred_mask, dtype=bool)
    truth_mask = np.asarray(truth_mask, dtype=bool)
    if pred_mask.shape != truth_mask.shape:
        raise ShapeError(f"Dice needs equal mask shapes, got {pred_mask.shape} and {truth_mask.shape}")
    total = int(pred_mask.sum()) + int(truth_mask.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred_mask, truth_mask).sum()) / total


def random_dice_baseline(selected, tumor, total):
    """
    Expected Dice of a uniformly random mask of `selected` voxels against a
    fixed mask of `tumor` voxels among `total`: 2 * selected * tumor / (total * (selected + tumor)).
    """
    if selected + tumor == 0:
        return 1.0
    return 2.0 * selected * tumor / (total * (selected + tumor))
