"""
MSUP checkpoint container.

Byte layout (all integers little-endian):
- magic b"MSUP"
- u16 format version
- u32 header length, then UTF-8 JSON header
  {"iteration": int, "model_config": {...}, "seed": int} (sorted keys)
- u32 tensor count, then per tensor:
  u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims, float64 values (<f8)

Tensor names: parameters use their model names ("enc0.a.conv.weight"),
batch-norm running statistics live under "stats/<layer>/mean|var" and
optimizer state under "opt/...". No timestamps are stored, so identical
runs produce identical files.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Optional

import numpy as np
from pydantic import ValidationError

from src.errors import CheckpointError
from src.network.config import ModelConfig
from src.network.model import Model, build_model


MAGIC = b"MSUP"
FORMAT_VERSION = 1
STATS_PREFIX = "stats/"
OPT_PREFIX = "opt/"
CHECKPOINT_PATTERN = re.compile(r"^ckpt_(\d+)\.msup$")


@dataclass
class Checkpoint:
    """Decoded checkpoint: rebuilt model plus any optimizer tensors."""
    model: Model
    iteration: int
    seed: int
    optimizer_tensors: dict[str, np.ndarray] = field(default_factory=dict)


def checkpoint_name(iteration: int) -> str:
    return f"ckpt_{iteration:06d}.msup"


def model_tensors(model: Model) -> dict[str, np.ndarray]:
    """Parameters followed by running statistics, in model order."""
    tensors = {name: p.data for name, p in model.parameters().items()}
    for name, stats in model.running_stats().items():
        tensors[f"{STATS_PREFIX}{name}/mean"] = stats.mean
        tensors[f"{STATS_PREFIX}{name}/var"] = stats.var
    return tensors


def _write_tensor(fh: BinaryIO, name: str, values: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    arr = np.ascontiguousarray(values, dtype="<f8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh: BinaryIO, size: int, what: str) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise CheckpointError(f"Truncated checkpoint while reading {what}")
    return data


def _read_tensor(fh: BinaryIO) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
    name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1, f"ndim of {name}"))
    dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"dims of {name}"))
    count = int(np.prod(dims)) if ndim else 1
    raw = _read_exact(fh, 8 * count, f"values of {name}")
    return name, np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)


def save_checkpoint(
    path: Path | str,
    model: Model,
    *,
    iteration: int = 0,
    optimizer_tensors: Optional[dict[str, np.ndarray]] = None,
) -> Path:
    """
    Write model parameters, running statistics and optimizer state.

    Args:
        path: Destination file (parent directories are created)
        model: Model to serialise
        iteration: Training iteration recorded in the header
        optimizer_tensors: Extra tensors; names must start with "opt/"

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = model_tensors(model)
    for name, values in (optimizer_tensors or {}).items():
        if not name.startswith(OPT_PREFIX):
            raise CheckpointError(f"Optimizer tensor '{name}' must live under '{OPT_PREFIX}'")
        tensors[name] = values

    header = json.dumps(
        {
            "iteration": int(iteration),
            "model_config": model.config.model_dump(mode="json"),
            "seed": int(model.seed),
        },
        sort_keys=True,
    ).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(tensors)))
        for name, values in tensors.items():
            _write_tensor(fh, name, values)
    return path


def read_checkpoint_tensors(path: Path | str) -> tuple[dict, dict[str, np.ndarray]]:
    """Decode the raw header and named tensors without building a model."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path} is not an MSUP checkpoint (magic {magic!r})")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        except json.JSONDecodeError as e:
            raise CheckpointError(f"Corrupt checkpoint header: {e}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors = dict(_read_tensor(fh) for _ in range(count))
        if fh.read(1):
            raise CheckpointError(f"Trailing bytes after {count} tensors in {path}")
    return header, tensors


def load_checkpoint(path: Path | str) -> Checkpoint:
    """
    Rebuild a model from an MSUP file.

    Raises:
        CheckpointError: If the file is missing, malformed, or does not match
            the architecture declared in its own header
    """
    header, tensors = read_checkpoint_tensors(path)
    try:
        config = ModelConfig.model_validate(header["model_config"])
    except (KeyError, ValidationError) as e:
        raise CheckpointError(f"Invalid model config in checkpoint: {e}")

    model = build_model(config, int(header.get("seed", 0)))
    expected = model_tensors(model)
    missing = [name for name in expected if name not in tensors]
    if missing:
        raise CheckpointError(f"Checkpoint is missing tensors: {missing[:5]}")

    params = model.parameters()
    stats = model.running_stats()
    for name in expected:
        values = tensors[name]
        if name.startswith(STATS_PREFIX):
            layer, field_name = name[len(STATS_PREFIX):].rsplit("/", 1)
            target = getattr(stats[layer], field_name)
            if target.shape != values.shape:
                raise CheckpointError(f"Shape mismatch for {name}: {values.shape} vs {target.shape}")
            target[...] = values
        else:
            if params[name].shape != values.shape:
                raise CheckpointError(
                    f"Shape mismatch for {name}: {values.shape} vs {params[name].shape}"
                )
            params[name].assign(values)

    optimizer_tensors = {k: v for k, v in tensors.items() if k.startswith(OPT_PREFIX)}
    return Checkpoint(
        model=model,
        iteration=int(header.get("iteration", 0)),
        seed=int(header.get("seed", 0)),
        optimizer_tensors=optimizer_tensors,
    )


def list_checkpoints(directory: Path | str) -> list[Path]:
    """Checkpoint files in a directory, oldest iteration first."""
    directory = Path(directory)
    if not directory.is_dir():
        return []
    found = []
    for child in directory.iterdir():
        match = CHECKPOINT_PATTERN.match(child.name)
        if match:
            found.append((int(match.group(1)), child))
    return [p for _, p in sorted(found)]


def prune_checkpoints(directory: Path | str, keep: int = 3) -> list[Path]:
    """Delete all but the newest `keep` checkpoints; returns the removed paths."""
    if keep < 1:
        raise CheckpointError(f"keep must be >= 1, got {keep}")
    existing = list_checkpoints(directory)
    removed = existing[:-keep] if len(existing) > keep else []
    for path in removed:
        path.unlink()
    return removed
