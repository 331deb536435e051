"""
Run configuration: one JSON file with the sections network, train, phantom,
thresholds and data plus output_dir. Every field has a default except the
data manifest path; unknown keys anywhere are rejected.

Example:
    {
      "network": {"input_size": 32, "n_bins": 15, "use_age": true},
      "train": {"epochs": 30, "alpha": 10000},
      "phantom": {"n_cases": 200},
      "data": {"manifest": "runs/phantoms/manifest.csv"},
      "output_dir": "runs/default"
    }
"""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from cases.phantoms import PhantomConfig
from evaluation.metrics import ClassThresholds
from helpers import ConfigError, dataclass_from_dict
from network.model import NetworkConfig
from training.optimizer import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    """
    Attributes:
        manifest (str | None): Case manifest; no default.
        val_fraction (float): Share of cases held out for model selection.
        downsample (int): Block-mean factor applied after normalization.
        split_seed (int): Seed of the train/validation shuffle.
    """

    manifest: Optional[str] = None
    val_fraction: float = 0.2
    downsample: int = 1
    split_seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    thresholds: ClassThresholds = field(default_factory=ClassThresholds)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "runs/default"


SECTIONS = {
    "network": NetworkConfig,
    "train": TrainConfig,
    "phantom": PhantomConfig,
    "thresholds": ClassThresholds,
    "data": DataConfig,
}


def parse_run_config(values):
    """Build a RunConfig from a parsed JSON object."""
    if not isinstance(values, dict):
        raise ConfigError("Run config must be a JSON object")
    unknown = sorted(set(values) - set(SECTIONS) - {"output_dir"})
    if unknown:
        raise ConfigError(f"Unknown top-level key(s) in run config: {', '.join(unknown)}")

    sections = {name: dataclass_from_dict(cls, values.get(name), name) for name, cls in SECTIONS.items()}
    output_dir = values.get("output_dir", RunConfig.output_dir)
    if not isinstance(output_dir, str):
        raise ConfigError("output_dir must be a string")
    return RunConfig(output_dir=output_dir, **sections)


def load_run_config(path=None, seed=None, out=None):
    """
    Read the run config file (defaults when path is None) and apply flag
    overrides: seed sets every seed, out replaces output_dir.
    """
    values = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as error:
            raise ConfigError(f"Config file {path} does not exist") from error
        except json.JSONDecodeError as error:
            raise ConfigError(f"Config file {path} is not valid JSON: {error}") from error

    config = parse_run_config(values)
    if seed is not None:
        config = replace(
            config,
            network=replace(config.network, seed=seed),
            train=replace(config.train, seed=seed),
            phantom=replace(config.phantom, seed=seed),
            data=replace(config.data, split_seed=seed),
        )
    if out is not None:
        config = replace(config, output_dir=str(out))
    return config
