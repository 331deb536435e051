"""
PHOS checkpoint container.

Layout (all integers unsigned 32-bit little-endian):

    b"PHOS" | version | metadata length | metadata (canonical JSON, UTF-8)
    | blob count | blobs | SHA-256 digest of everything before it

Each blob is: name length | name (UTF-8) | rank | dims[rank] | float64
little-endian payload in row-major order. Blobs hold the model parameters,
the batch-norm running statistics ("block<i>.bn.running_mean/var") and the
Adam moments ("adam.m.<name>", "adam.v.<name>").

The metadata carries the network config, the Adam step counter and any
caller-provided fields (normalization statistics, epoch, RNG state).
"""
import hashlib
import json
import logging
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from helpers import CheckpointError
from network.model import NetworkConfig, init
from training.optimizer import OptimizerState


logger = logging.getLogger(__name__)

MAGIC = b"PHOS"
VERSION = 1
DIGEST_SIZE = hashlib.sha256().digest_size


def save_checkpoint(path, model, optimizer_state=None, metadata=None):
    """
    Write a model (and optionally its optimizer state) to a PHOS file.

    Args:
        path (str | Path): Destination file.
        model (PosthocModel): Model to store.
        optimizer_state (OptimizerState | None): Adam state to store.
        metadata (dict | None): Extra JSON-serializable fields.
    """
    meta = dict(metadata or {})
    meta["network"] = asdict(model.config)
    meta["optimizer_step"] = optimizer_state.step if optimizer_state is not None else None

    blobs = dict(model.state_dict())
    if optimizer_state is not None:
        for name in sorted(optimizer_state.m):
            blobs[f"adam.m.{name}"] = optimizer_state.m[name]
            blobs[f"adam.v.{name}"] = optimizer_state.v[name]

    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(blobs))]
    for name, values in blobs.items():
        values = np.asarray(values, dtype="<f8")
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack(f"<I{values.ndim}I", values.ndim, *values.shape))
        parts.append(np.ascontiguousarray(values).tobytes())

    body = b"".join(parts)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())
    logger.info("Saved checkpoint with %d blobs to %s", len(blobs), path)


def load_checkpoint(path):
    """
    Read a PHOS file.

    The digest is verified before anything is parsed, so a corrupted file
    never yields a partially loaded model.

    Args:
        path (str | Path): Checkpoint file.

    Returns:
        tuple: (model, optimizer_state or None, metadata dict)
    """
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint, expected magic {MAGIC!r}, found {raw[:4]!r}")
    if len(raw) < 12 + DIGEST_SIZE:
        raise CheckpointError(f"{path}: truncated checkpoint ({len(raw)} bytes)")

    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} is not supported (this reader handles version {VERSION})")

    body, digest = raw[:-DIGEST_SIZE], raw[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checkpoint payload is corrupted (digest mismatch)")

    try:
        meta, blobs = _parse_body(body)
    except (struct.error, ValueError, UnicodeDecodeError) as error:
        raise CheckpointError(f"{path}: malformed checkpoint: {error}") from error

    try:
        config = NetworkConfig(**meta["network"])
    except (KeyError, TypeError, ValueError) as error:
        raise CheckpointError(f"{path}: checkpoint holds no usable network config: {error!r}") from error
    model = init(config)
    state = {name: blobs[name] for name in model.state_dict() if name in blobs}
    try:
        model.load_state_dict(state)
    except ValueError as error:
        raise CheckpointError(f"{path}: {error}") from error

    optimizer_state = None
    if meta.get("optimizer_step") is not None:
        optimizer_state = OptimizerState(step=int(meta["optimizer_step"]))
        for name, values in blobs.items():
            if name.startswith("adam.m."):
                optimizer_state.m[name[len("adam.m."):]] = values
            elif name.startswith("adam.v."):
                optimizer_state.v[name[len("adam.v."):]] = values

    return model, optimizer_state, meta


def _parse_body(body):
    offset = 8
    (meta_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    meta = json.loads(body[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len

    (count,) = struct.unpack_from("<I", body, offset)
    offset += 4
    blobs = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", body, offset)
        offset += 4
        name = body[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", body, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", body, offset)
        offset += 4 * rank
        size = int(np.prod(dims, dtype=np.int64)) * 8
        if offset + size > len(body):
            raise ValueError(f"blob '{name}' runs past the end of the file")
        blobs[name] = np.frombuffer(body, dtype="<f8", count=size // 8, offset=offset).astype(np.float64).reshape(dims)
        offset += size

    if offset != len(body):
        raise ValueError(f"{len(body) - offset} trailing bytes after the last blob")
    return meta, blobs
