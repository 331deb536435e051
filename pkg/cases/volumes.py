"""
SVOL volume files and volume resampling.

SVOL layout: b"SVOL" | u32 version (1) | u32 rank | u32 dims[rank] | float32
little-endian payload in row-major order. Volumes are stored as float32 and
promoted to float64 when loaded.
"""
import struct
from pathlib import Path

import numpy as np

from helpers import DataError, VolumeFormatError


MAGIC = b"SVOL"
VERSION = 1
MAX_RANK = 8
MAX_VOXELS = 2**31 - 1


def save_volume(path, volume):
    """Write a volume as SVOL (float32 payload)."""
    volume = np.asarray(volume)
    header = MAGIC + struct.pack(f"<II{volume.ndim}I", VERSION, volume.ndim, *volume.shape)
    payload = np.ascontiguousarray(volume, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_volume(path):
    """
    Read an SVOL file.

    Args:
        path (str | Path): Volume file.

    Returns:
        numpy.ndarray: float64 volume.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r} (\"SVOL\")")
    if len(raw) < 12:
        raise VolumeFormatError(f"{path}: truncated header ({len(raw)} bytes)")

    version, rank = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise VolumeFormatError(f"{path}: unsupported SVOL version {version}, expected {VERSION}")
    if rank < 1 or rank > MAX_RANK:
        raise VolumeFormatError(f"{path}: shape overflow, rank {rank} outside 1..{MAX_RANK}")
    header_size = 12 + 4 * rank
    if len(raw) < header_size:
        raise VolumeFormatError(f"{path}: truncated header, {rank} dims announced but only {len(raw)} bytes")

    dims = struct.unpack_from(f"<{rank}I", raw, 12)
    voxels = 1
    for dim in dims:
        voxels *= dim
    if voxels > MAX_VOXELS:
        raise VolumeFormatError(f"{path}: shape overflow, dims {dims} hold {voxels} voxels (limit {MAX_VOXELS})")

    expected = header_size + 4 * voxels
    if len(raw) < expected:
        raise VolumeFormatError(
            f"{path}: truncated payload, dims {dims} need {4 * voxels} bytes, found {len(raw) - header_size}"
        )
    if len(raw) > expected:
        raise VolumeFormatError(f"{path}: {len(raw) - expected} unexpected bytes after the payload")

    values = np.frombuffer(raw, dtype="<f4", count=voxels, offset=header_size)
    return values.astype(np.float64).reshape(dims)


def downsample(volume, factor):
    """
    Mean-pool the last three axes over factor^3 blocks.

    Args:
        volume (numpy.ndarray): Shape (..., D, H, W).
        factor (int): Block edge; every spatial edge must be divisible by it.

    Returns:
        numpy.ndarray: Shape (..., D/factor, H/factor, W/factor).
    """
    volume = np.asarray(volume, dtype=np.float64)
    if factor < 1:
        raise DataError(f"Downsampling factor must be >= 1, got {factor}")
    spatial = volume.shape[-3:]
    if any(edge % factor for edge in spatial):
        raise DataError(f"Volume edges {spatial} are not divisible by downsampling factor {factor}")
    if factor == 1:
        return volume.copy()

    lead = volume.shape[:-3]
    d, h, w = (edge // factor for edge in spatial)
    blocks = volume.reshape(lead + (d, factor, h, factor, w, factor))
    n = len(lead)
    return blocks.mean(axis=(n + 1, n + 3, n + 5))


def downsample_mask(mask, factor):
    """Block-max pooling of a binary mask: a block is tumor if any voxel in it is."""
    mask = np.asarray(mask, dtype=bool)
    spatial = mask.shape[-3:]
    if factor < 1 or any(edge % factor for edge in spatial):
        raise DataError(f"Mask edges {spatial} are not divisible by factor {factor}")
    if factor == 1:
        return mask.copy()
    d, h, w = (edge // factor for edge in spatial)
    return mask.reshape(d, factor, h, factor, w, factor).any(axis=(1, 3, 5))
