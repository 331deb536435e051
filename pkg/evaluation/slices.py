import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


AXIS_NAMES = ("axial", "coronal", "sagittal")


def upsample_nearest(volume, shape):
    """Repeat voxels so a coarse map covers a finer grid of the given shape."""
    factors = [target // size for target, size in zip(shape, volume.shape)]
    for axis, factor in enumerate(factors):
        volume = np.repeat(volume, factor, axis=axis)
    return volume


def export_slices(flair, saliency_map, out_dir, prefix="saliency"):
    """
    Write one PNG per axis: the middle Flair slice in grayscale with the
    saliency map (upsampled to the Flair grid) overlaid.

    Returns:
        list[pathlib.Path]: Written image files.
    """
    overlay = upsample_nearest(saliency_map, flair.shape)
    paths = []
    for axis, name in enumerate(AXIS_NAMES):
        middle = flair.shape[axis] // 2
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(np.take(flair, middle, axis=axis), cmap="gray")
        ax.imshow(np.take(overlay, middle, axis=axis), cmap="jet", alpha=0.4)
        ax.set_title(f"{name} slice {middle}")
        ax.axis("off")
        path = out_dir / f"{prefix}_{name}.png"
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths
