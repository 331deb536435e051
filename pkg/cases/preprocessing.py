"""
Preparation of loaded cases for the network: training-split z-score
statistics, normalization, downsampling, intensity augmentation and the
train/validation split.
"""
import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from cases.records import MODALITIES
from cases.volumes import downsample, downsample_mask
from helpers import ConfigError, DataError


logger = logging.getLogger(__name__)

STD_GUARD = 1e-8
SCALE_RANGE = (1.0, 1.1)


@dataclass(frozen=True)
class NormalizationStats:
    """Training-split mean and standard deviation per modality and for age."""

    modality_mean: tuple
    modality_std: tuple
    age_mean: float
    age_std: float

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        return cls(
            modality_mean=tuple(values["modality_mean"]),
            modality_std=tuple(values["modality_std"]),
            age_mean=float(values["age_mean"]),
            age_std=float(values["age_std"]),
        )


def _guard(std):
    return 1.0 if std < STD_GUARD else float(std)


def compute_normalization_stats(cases):
    """
    Pooled mean/std of every modality over all voxels of the given cases,
    and mean/std of their ages. Standard deviations below 1e-8 become 1.

    Two passes (mean, then squared deviations) keep the statistics exact
    enough that the normalized split has mean 0 and std 1 to ~1e-12.

    Args:
        cases (list[CaseRecord]): Training cases only.

    Returns:
        NormalizationStats
    """
    if not cases:
        raise DataError("Cannot compute normalization statistics from zero cases")

    means, stds = [], []
    for m in range(len(MODALITIES)):
        count = sum(case.volumes[m].size for case in cases)
        mean = sum(case.volumes[m].sum() for case in cases) / count
        var = sum(((case.volumes[m] - mean) ** 2).sum() for case in cases) / count
        means.append(float(mean))
        stds.append(_guard(math.sqrt(var)))

    ages = np.array([case.age_years for case in cases], dtype=np.float64)
    return NormalizationStats(
        modality_mean=tuple(means),
        modality_std=tuple(stds),
        age_mean=float(ages.mean()),
        age_std=_guard(float(ages.std())),
    )


def normalize(case, stats):
    """Z-score every modality and the age of one case with training statistics."""
    mean = np.asarray(stats.modality_mean).reshape(-1, 1, 1, 1)
    std = np.asarray(stats.modality_std).reshape(-1, 1, 1, 1)
    return replace(
        case,
        volumes=(case.volumes - mean) / std,
        age_years=(case.age_years - stats.age_mean) / stats.age_std,
    )


def prepare_case(case, stats, factor=1):
    """Normalize, then downsample volumes (block mean) and mask (block max)."""
    normalized = normalize(case, stats)
    mask = case.tumor_mask
    return replace(
        normalized,
        volumes=downsample(normalized.volumes, factor),
        tumor_mask=downsample_mask(mask, factor) if mask is not None else None,
    )


def augment_scale(case, rng, factor=None):
    """
    Multiply all four modalities by one factor drawn uniformly from [1, 1.1].

    Mask, age and label are untouched.

    Args:
        case (CaseRecord): Case to augment.
        rng (numpy.random.Generator): Source of the factor.
        factor (float | None): Use this factor instead of drawing one.
    """
    if factor is None:
        factor = rng.uniform(*SCALE_RANGE)
    return replace(case, volumes=case.volumes * factor)


def split(manifest, val_fraction=0.2, seed=0):
    """
    Seeded shuffle, then floor(val_fraction * n) cases to validation.

    Args:
        manifest (pandas.DataFrame): Cases to split.
        val_fraction (float): Share of validation cases, 0 < val_fraction < 1.
        seed (int): Shuffle seed.

    Returns:
        tuple: (train manifest, validation manifest), disjoint and exhaustive.
    """
    if not 0 < val_fraction < 1:
        raise ConfigError(f"val_fraction must lie in (0, 1), got {val_fraction}")

    n_cases = len(manifest)
    n_val = math.floor(val_fraction * n_cases)
    if n_val == 0 or n_val == n_cases:
        raise DataError(f"Splitting {n_cases} cases with val_fraction {val_fraction} leaves an empty split")

    order = np.random.default_rng(seed).permutation(n_cases)
    shuffled = manifest.iloc[order]
    val_df = shuffled.iloc[:n_val].reset_index(drop=True)
    train_df = shuffled.iloc[n_val:].reset_index(drop=True)
    logger.info("Split %d cases into %d train / %d validation", n_cases, len(train_df), len(val_df))
    return train_df, val_df
