import json
import logging
from dataclasses import asdict, fields, is_dataclass


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_INVARIANT = 3


class ConfigError(ValueError):
    """Invalid run configuration, usage error or checkpoint/config mismatch."""


class DataError(ValueError):
    """Unreadable or inconsistent input data."""


class VolumeFormatError(DataError):
    """Malformed SVOL volume file."""


class CheckpointError(DataError):
    """Malformed, corrupted or incompatible PHOS checkpoint."""


class ShapeError(ValueError):
    """Tensor shapes that an operation cannot combine."""


class InvariantError(ValueError):
    """An internal invariant was violated."""


def exit_code_for(error):
    """
    Map an exception to the CLI exit code contract.

    Args:
        error (BaseException): The raised exception.

    Returns:
        int: 1 for config errors, 2 for data errors, 3 for anything else.
    """
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, DataError):
        return EXIT_DATA
    return EXIT_INVARIANT


def setup_logging(verbose=False):
    """Configure the root logger once for command line runs."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
    )


def canonical_json(obj):
    """
    Serialize a dict or dataclass to canonical JSON text.

    Dataclasses keep their field order, plain dicts are written with sorted
    keys, so equal objects always give byte-identical text.
    """
    if is_dataclass(obj):
        payload = {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
        return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
    return json.dumps(_plain(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _plain(value):
    if is_dataclass(value):
        return _plain(asdict(value))
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if hasattr(value, "tolist"):
        return value.tolist()
    return value


def dataclass_from_dict(cls, values, section):
    """
    Build a config dataclass from a dict, rejecting unknown keys.

    Args:
        cls: Dataclass type to build.
        values (dict): Parsed values; missing keys fall back to defaults.
        section (str): Section name used in error messages.

    Returns:
        An instance of cls.
    """
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"Section '{section}' must be an object, got {type(values).__name__}")

    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in section '{section}': {', '.join(unknown)}")

    converted = {}
    for f in fields(cls):
        if f.name in values:
            value = values[f.name]
            # JSON has no tuples
            if isinstance(value, list):
                value = tuple(value)
            converted[f.name] = value
    try:
        return cls(**converted)
    except TypeError as error:
        raise ConfigError(f"Section '{section}': {error}") from error
