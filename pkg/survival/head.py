"""
Binned survival head: turns N saliency maps into per-bin survival
probabilities, an overall survival prediction in days, the training loss and
the bin whose map explains the prediction.

A bin that is active (probability near 1) deducts its days from the upper
limit, so the prediction is U minus the weighted sum of bin probabilities.
"""
import math
from dataclasses import dataclass

import numpy as np

from autodiff.layers import lse_pool, sigmoid
from autodiff.tensor import Tensor, as_tensor


SALIENCY_TOP_FRACTION = 0.05


@dataclass
class HeadOutput:
    """
    Attributes:
        saliency (Tensor): Per-bin maps, shape (B, N, V, V, V).
        p (Tensor): Per-bin probabilities in (0, 1), shape (B, N).
        p_weighted (Tensor): p scaled by the bin widths in days, shape (B, N).
        y_hat (Tensor): Predicted survival days, shape (B,).
    """

    saliency: Tensor
    p: Tensor
    p_weighted: Tensor
    y_hat: Tensor


def bin_probabilities(saliency):
    """sigmoid(LSE(S_n)) for every case and bin."""
    return sigmoid(lse_pool(saliency))


def weighted_bin_predictions(p, bins):
    """Scale each bin probability by that bin's width in days."""
    return as_tensor(p) * bins.widths


def os_prediction(p_weighted, max_days):
    """Upper limit minus the days deducted by all bins."""
    return -as_tensor(p_weighted).sum(axis=1) + float(max_days)


def survival_head(saliency, bins):
    """Run the full head on saliency maps of shape (B, N, V, V, V)."""
    p = bin_probabilities(saliency)
    p_weighted = weighted_bin_predictions(p, bins)
    y_hat = os_prediction(p_weighted, bins.max_days)
    return HeadOutput(saliency=saliency, p=p, p_weighted=p_weighted, y_hat=y_hat)


def monotonic_penalty(p):
    """
    Penalize bins whose probability rises above the previous bin's.

    Per case: (1 / (N - 1)) * sum_n max(0, p[n+1] - p[n]); the batch value is
    the mean over cases. Zero exactly when every case is non-increasing.

    Args:
        p (Tensor | array-like): Shape (B, N), or (N,) for a single case.

    Returns:
        Tensor: Scalar penalty.
    """
    p = as_tensor(p)
    if p.ndim == 1:
        p = p.reshape(1, -1)
    rises = (p[:, 1:] - p[:, :-1]).relu()
    return rises.mean()


def mae_loss(y_hat, y):
    """Mean absolute error over the batch, in days."""
    return (as_tensor(y_hat) - as_tensor(y)).abs().mean()


def total_loss(y_hat, y, p, alpha):
    """MAE between prediction and label plus alpha times the monotonic penalty."""
    return mae_loss(y_hat, y) + monotonic_penalty(p) * float(alpha)


def transition_bin(p):
    """
    The last bin responsible for the prediction: argmax of min(p, |1 - p|).

    Ties go to the smallest index.

    Args:
        p (array-like): Probabilities of one case, length N.

    Returns:
        int: Bin number n* in 1..N.

    >>> transition_bin([0.9, 0.7, 0.2, 0.1])
    2
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    scores = np.minimum(p, np.abs(1.0 - p))
    return int(np.argmax(scores)) + 1


def saliency_mask(saliency_map, fraction=SALIENCY_TOP_FRACTION):
    """
    Binary mask of the top `fraction` voxels of a saliency map.

    Exactly k = max(1, floor(fraction * voxels)) voxels are selected; equal
    values at the threshold are taken in ascending row-major order.

    Args:
        saliency_map (numpy.ndarray | Tensor): Map of any shape.
        fraction (float): Share of voxels to keep, 0 < fraction < 1.

    Returns:
        numpy.ndarray: Boolean mask with the shape of the map.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    values = saliency_map.data if isinstance(saliency_map, Tensor) else np.asarray(saliency_map)
    flat = values.reshape(-1)
    k = max(1, math.floor(fraction * flat.size))

    order = np.argsort(-flat, kind="stable")
    mask = np.zeros(flat.size, dtype=bool)
    mask[order[:k]] = True
    return mask.reshape(values.shape)
