"""
Synthetic phantom cases with a known tumor and a known survival rule.

Each phantom is Gaussian background noise in four modalities with one
ellipsoidal blob brightened by a fixed offset. Survival shortens with the
blob's share of the volume and with age above the middle of the age range:

    days = clamp(U - c_vol * (blob_voxels / total_voxels) * U
                 - c_age * (age - mid_age), 0, U)
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from cases.records import MODALITIES, CaseRecord, write_manifest
from cases.volumes import save_volume
from helpers import ConfigError
from survival.bins import MAX_SURVIVAL_DAYS


logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"


@dataclass(frozen=True)
class PhantomConfig:
    """
    Attributes:
        edge (int): Cube edge in voxels.
        n_cases (int): Number of phantoms.
        radius_range (tuple): Min/max ellipsoid semi-axis in voxels.
        tumor_intensity_offset (float): Added to every modality inside the blob.
        age_range (tuple): Min/max age in years.
        noise_std (float): Standard deviation of the background noise.
        c_vol (float): Survival cost of the blob's volume share, in units of U.
        c_age (float): Survival cost in days per year above the middle age.
        seed (int): Seed of the single generator behind every draw.
    """

    edge: int = 32
    n_cases: int = 200
    radius_range: tuple = (3.0, 7.0)
    tumor_intensity_offset: float = 2.0
    age_range: tuple = (20.0, 80.0)
    noise_std: float = 1.0
    c_vol: float = 12.0
    c_age: float = 10.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "radius_range", tuple(float(r) for r in self.radius_range))
        object.__setattr__(self, "age_range", tuple(float(a) for a in self.age_range))
        low, high = self.radius_range
        if self.n_cases < 1:
            raise ConfigError(f"n_cases must be at least 1, got {self.n_cases}")
        if self.edge < 1:
            raise ConfigError(f"edge must be positive, got {self.edge}")
        if not 0 <= low <= high <= self.edge / 2:
            raise ConfigError(f"radius_range {self.radius_range} must fit inside half the edge ({self.edge / 2})")
        if self.age_range[0] > self.age_range[1]:
            raise ConfigError(f"age_range {self.age_range} is not increasing")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must not be negative, got {self.noise_std}")


def phantom_survival(blob_voxels, total_voxels, age, config, max_days=MAX_SURVIVAL_DAYS):
    """The survival rule of the phantoms, in days, clamped to [0, max_days]."""
    mid_age = (config.age_range[0] + config.age_range[1]) / 2.0
    days = max_days - config.c_vol * (blob_voxels / total_voxels) * max_days - config.c_age * (age - mid_age)
    return float(np.clip(days, 0.0, max_days))


def ellipsoid_mask(edge, center, radii):
    """Voxels whose centers lie inside the axis-aligned ellipsoid."""
    if min(radii) <= 0:
        return np.zeros((edge, edge, edge), dtype=bool)
    z, y, x = np.ogrid[:edge, :edge, :edge]
    distance = (
        ((z - center[0]) / radii[0]) ** 2 + ((y - center[1]) / radii[1]) ** 2 + ((x - center[2]) / radii[2]) ** 2
    )
    return distance <= 1.0


def synthesize_phantom(config, max_days=MAX_SURVIVAL_DAYS):
    """
    Generate phantom cases from one seeded generator.

    Per case the draws are, in order: age, three semi-axes, the center,
    the resection status and the background noise.

    Args:
        config (PhantomConfig): Generator settings.
        max_days (float): Upper survival limit U.

    Returns:
        list[CaseRecord]: Cases with survival labels and tumor masks.
    """
    rng = np.random.default_rng(config.seed)
    edge = config.edge
    total_voxels = edge**3
    cases = []

    for i in range(config.n_cases):
        age = rng.uniform(*config.age_range)
        radii = rng.uniform(*config.radius_range, size=3)
        center = [rng.uniform(r, edge - 1 - r) if edge - 1 - r > r else (edge - 1) / 2 for r in radii]
        resection = ("GTR", "STR")[rng.integers(2)]
        volumes = rng.normal(0.0, config.noise_std, size=(len(MODALITIES), edge, edge, edge))

        mask = ellipsoid_mask(edge, center, radii)
        volumes[:, mask] += config.tumor_intensity_offset

        cases.append(
            CaseRecord(
                case_id=f"phantom_{i:04d}",
                volumes=volumes,
                age_years=float(age),
                survival_days=phantom_survival(int(mask.sum()), total_voxels, age, config, max_days),
                resection=resection,
                tumor_mask=mask,
            )
        )

    logger.info("Synthesized %d phantoms of edge %d", len(cases), edge)
    return cases


def write_phantoms(cases, out_dir):
    """
    Write phantom volumes and masks as SVOL files plus a manifest.

    File names depend only on case ids, so re-running with the same seed
    overwrites every file with identical bytes.

    Returns:
        Path: The manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for case in cases:
        row = {
            "id": case.case_id,
            "age": case.age_years,
            "resection": case.resection,
            "survival_days": case.survival_days,
        }
        for m, modality in enumerate(MODALITIES):
            file_path = out_dir / f"{case.case_id}_{modality}.svol"
            save_volume(file_path, case.volumes[m])
            row[modality] = str(file_path)
        mask_path = out_dir / f"{case.case_id}_mask.svol"
        save_volume(mask_path, case.tumor_mask.astype(np.float32))
        row["mask"] = str(mask_path)
        rows.append(row)

    manifest_path = out_dir / MANIFEST_NAME
    write_manifest(pd.DataFrame(rows), manifest_path)
    return manifest_path
