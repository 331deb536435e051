from dataclasses import dataclass

import numpy as np

from helpers import ConfigError


# Upper limit on survival days: the largest survival time in the data set
MAX_SURVIVAL_DAYS = 1800.0


@dataclass(frozen=True)
class BinConfig:
    """
    Equidistant survival bins between 0 and the upper limit.

    Attributes:
        n_bins (int): Number of bins N.
        max_days (float): Upper limit U in days.
        widths (numpy.ndarray): Days per bin, all equal to U / N.
    """

    n_bins: int
    max_days: float
    widths: np.ndarray


def make_bins(n_bins, max_days=MAX_SURVIVAL_DAYS):
    """
    Split [0, max_days] into n_bins bins of max_days / n_bins days each.

    Args:
        n_bins (int): Number of bins, at least 2 so neighbouring bins exist.
        max_days (float): Upper survival limit in days, > 0.

    Returns:
        BinConfig: The bin scheme; widths sum to max_days.

    >>> make_bins(4, 1800.0).widths.tolist()
    [450.0, 450.0, 450.0, 450.0]
    """
    if int(n_bins) != n_bins or n_bins < 2:
        raise ConfigError(f"Need at least 2 survival bins, got {n_bins}")
    if not max_days > 0:
        raise ConfigError(f"Upper survival limit must be positive, got {max_days}")

    widths = np.full(int(n_bins), float(max_days) / int(n_bins))
    return BinConfig(n_bins=int(n_bins), max_days=float(max_days), widths=widths)
