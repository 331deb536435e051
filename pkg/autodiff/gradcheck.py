import numpy as np


def numerical_gradient(loss_fn, array, step=1e-5, indices=None):
    """
    Central finite-difference gradient of a scalar function.

    Args:
        loss_fn (callable): Zero-argument function returning a float; it must
            read `array` so that in-place perturbations change its value.
        array (numpy.ndarray): The array to perturb in place (restored afterwards).
        step (float): Finite-difference step h.
        indices (iterable | None): Flat indices to evaluate; all entries when None.

    Returns:
        numpy.ndarray: Gradient estimates, zero where not evaluated.
    """
    flat = array.reshape(-1)
    estimate = np.zeros(flat.shape)
    if indices is None:
        indices = range(flat.size)

    for idx in indices:
        original = flat[idx]
        flat[idx] = original + step
        upper = loss_fn()
        flat[idx] = original - step
        lower = loss_fn()
        flat[idx] = original
        estimate[idx] = (upper - lower) / (2 * step)

    return estimate.reshape(array.shape)


def max_relative_error(analytic, numeric, floor=1e-8):
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))
