"""Patient case records and the comma-separated manifest that lists them."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from cases.volumes import load_volume
from helpers import DataError
from survival.bins import MAX_SURVIVAL_DAYS


logger = logging.getLogger(__name__)

MODALITIES = ("flair", "t1", "t1ce", "t2")
RESECTION_STATUSES = ("GTR", "STR", "unknown")
MANIFEST_COLUMNS = ["id", "age", "resection", "survival_days", *MODALITIES, "mask"]


@dataclass
class CaseRecord:
    """
    One patient.

    Attributes:
        case_id (str): Unique identifier.
        volumes (numpy.ndarray): Shape (4, D, H, W) in Flair, T1, T1ce, T2 order.
        age_years (float): Age, raw or normalized depending on the pipeline stage.
        survival_days (float | None): Overall survival label.
        resection (str): GTR, STR or unknown; stored but never used by the model.
        tumor_mask (numpy.ndarray | None): Whole-tumor mask, shape (D, H, W).
    """

    case_id: str
    volumes: np.ndarray
    age_years: float
    survival_days: Optional[float] = None
    resection: str = "unknown"
    tumor_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.volumes.ndim != 4 or self.volumes.shape[0] != len(MODALITIES):
            raise DataError(f"Case {self.case_id}: expected 4 modality volumes, got shape {self.volumes.shape}")
        if self.tumor_mask is not None and self.tumor_mask.shape != self.volumes.shape[1:]:
            raise DataError(
                f"Case {self.case_id}: mask shape {self.tumor_mask.shape} differs from volumes {self.volumes.shape[1:]}"
            )
        if self.survival_days is not None and self.survival_days < 0:
            raise DataError(f"Case {self.case_id}: negative survival {self.survival_days}")
        if self.resection not in RESECTION_STATUSES:
            raise DataError(f"Case {self.case_id}: unknown resection status '{self.resection}'")


def read_manifest(path, max_days=MAX_SURVIVAL_DAYS, check_files=True):
    """
    Read and validate a case manifest.

    Relative volume paths are resolved against the manifest's directory.

    Args:
        path (str | Path): Manifest CSV with header
            id,age,resection,survival_days,flair,t1,t1ce,t2,mask.
        max_days (float): Upper survival limit labels must respect.
        check_files (bool): Require every referenced file to exist.

    Returns:
        pandas.DataFrame: One row per case in file order; survival_days is NaN
        and mask is None where absent.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Manifest {path} does not exist")

    df = pd.read_csv(path, float_precision="round_trip", dtype={"id": str, "resection": str, "mask": str, **{m: str for m in MODALITIES}})
    if list(df.columns) != MANIFEST_COLUMNS:
        raise DataError(f"Manifest {path} has columns {list(df.columns)}, expected {MANIFEST_COLUMNS}")

    base_dir = path.parent
    for column in [*MODALITIES, "mask"]:
        df[column] = df[column].apply(lambda p: str(base_dir / p) if isinstance(p, str) and p else None)
    df["resection"] = df["resection"].fillna("unknown")
    df["survival_days"] = df["survival_days"].astype(float)

    validate_manifest(df, max_days=max_days, check_files=check_files)
    return df.reset_index(drop=True)


def validate_manifest(df, max_days=MAX_SURVIVAL_DAYS, check_files=True):
    """Check id uniqueness, label range, resection values and file presence."""
    duplicated = df["id"][df["id"].duplicated()].tolist()
    if duplicated:
        raise DataError(f"Duplicate case ids in manifest: {duplicated}")

    labels = df["survival_days"].dropna()
    out_of_range = labels[(labels < 0) | (labels > max_days)]
    if len(out_of_range):
        raise DataError(f"Survival labels outside [0, {max_days}] for cases {df.loc[out_of_range.index, 'id'].tolist()}")

    bad_status = sorted(set(df["resection"]) - set(RESECTION_STATUSES))
    if bad_status:
        raise DataError(f"Unknown resection status(es) {bad_status}")

    if check_files:
        missing = []
        for _, row in df.iterrows():
            for column in [*MODALITIES, "mask"]:
                file_path = row[column]
                if column == "mask" and file_path is None:
                    continue
                if file_path is None or not Path(file_path).exists():
                    missing.append(f"{row['id']}:{column}")
        if missing:
            raise DataError(f"Manifest references missing files: {', '.join(missing)}")


def write_manifest(df, path):
    """Write a manifest with paths relative to the manifest's directory."""
    path = Path(path)
    out = df[MANIFEST_COLUMNS].copy()
    for column in [*MODALITIES, "mask"]:
        out[column] = out[column].apply(lambda p: _relative(p, path.parent))
    out.to_csv(path, index=False, lineterminator="\n")


def _relative(file_path, base_dir):
    if file_path is None or (isinstance(file_path, float) and np.isnan(file_path)):
        return ""
    file_path = Path(file_path)
    try:
        return str(file_path.relative_to(base_dir))
    except ValueError:
        return str(file_path)


def load_case(row):
    """Load the volumes (and mask, when listed) of one manifest row."""
    loaded = [load_volume(row[m]) for m in MODALITIES]
    shapes = {m: v.shape for m, v in zip(MODALITIES, loaded)}
    if len(set(shapes.values())) != 1:
        raise DataError(f"Case {row['id']}: modality shapes differ {shapes}")
    volumes = np.stack(loaded)
    mask = load_volume(row["mask"]) > 0.5 if row["mask"] is not None else None
    survival = None if pd.isna(row["survival_days"]) else float(row["survival_days"])
    return CaseRecord(
        case_id=str(row["id"]),
        volumes=volumes,
        age_years=float(row["age"]),
        survival_days=survival,
        resection=row["resection"],
        tumor_mask=mask,
    )


def load_cases(df):
    """Load every case of a manifest in manifest order."""
    cases = [load_case(row) for _, row in df.iterrows()]
    logger.info("Loaded %d cases", len(cases))
    return cases
