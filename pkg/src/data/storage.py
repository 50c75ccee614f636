"""
MSVD volume/slice blobs and the slice stores the sampler reads from.

Blob layout (little-endian):
- magic b"MSVD"
- u16 format version
- u8 ndim, then ndim x u32 dims
- u8 dtype tag (1 = float32, 2 = float64)
- u8 has_mask
- raw value payload in C order
- when has_mask: uint8 labels over dims[1:] (the non-channel axes)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from src.errors import DataError


MAGIC = b"MSVD"
FORMAT_VERSION = 1
DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
TAG_FOR_DTYPE = {"float32": 1, "float64": 2}


def encode_blob(values: np.ndarray, mask: Optional[np.ndarray] = None, dtype: str = "float32") -> bytes:
    """Serialise channel-first values (and an optional label mask) to MSVD bytes."""
    if dtype not in TAG_FOR_DTYPE:
        raise DataError(f"Unsupported blob dtype {dtype!r}")
    tag = TAG_FOR_DTYPE[dtype]
    arr = np.ascontiguousarray(values, dtype=DTYPE_TAGS[tag])
    if arr.ndim < 2:
        raise DataError(f"Blob values need a channel axis plus spatial axes, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError("Blob values must be finite")
    parts = [
        MAGIC,
        struct.pack("<H", FORMAT_VERSION),
        struct.pack("<B", arr.ndim),
        struct.pack(f"<{arr.ndim}I", *arr.shape),
        struct.pack("<BB", tag, 0 if mask is None else 1),
        arr.tobytes(),
    ]
    if mask is not None:
        labels = np.asarray(mask)
        if labels.shape != arr.shape[1:]:
            raise DataError(f"Mask shape {labels.shape} does not match spatial dims {arr.shape[1:]}")
        if labels.min() < 0 or labels.max() > 255:
            raise DataError("Mask labels must fit in uint8")
        parts.append(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
    return b"".join(parts)


def decode_blob(data: bytes) -> tuple[np.ndarray, Optional[np.ndarray]]:
    if data[:4] != MAGIC:
        raise DataError(f"Not an MSVD blob (magic {data[:4]!r})")
    offset = 4
    try:
        (version,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if version != FORMAT_VERSION:
            raise DataError(f"Unsupported MSVD version {version}")
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        tag, has_mask = struct.unpack_from("<BB", data, offset)
        offset += 2
    except struct.error as e:
        raise DataError(f"Truncated MSVD header: {e}")
    if tag not in DTYPE_TAGS:
        raise DataError(f"Unknown MSVD dtype tag {tag}")
    dtype = DTYPE_TAGS[tag]
    count = int(np.prod(dims))
    end = offset + count * dtype.itemsize
    if len(data) < end:
        raise DataError("Truncated MSVD payload")
    values = np.frombuffer(data[offset:end], dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    mask = None
    if has_mask:
        mask_count = int(np.prod(dims[1:]))
        if len(data) < end + mask_count:
            raise DataError("Truncated MSVD mask payload")
        mask = np.frombuffer(data[end:end + mask_count], dtype=np.uint8).reshape(dims[1:]).copy()
        end += mask_count
    if len(data) != end:
        raise DataError("Trailing bytes after MSVD payload")
    return values, mask


def write_blob(
    path: Path | str,
    values: np.ndarray,
    mask: Optional[np.ndarray] = None,
    dtype: str = "float32",
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_blob(values, mask, dtype))
    return path


def read_blob(path: Path | str) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Read an MSVD blob.

    Returns:
        (values, mask or None)

    Raises:
        DataError: If the file is missing or malformed
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Slice blob not found: {path}")
    return decode_blob(path.read_bytes())


class SliceStore(Protocol):
    """Anything that can hand back (image [C, H, W], mask [H, W] or None) for a data path."""

    def read(self, data_path: str) -> tuple[np.ndarray, Optional[np.ndarray]]:
        ...

    def write(self, data_path: str, image: np.ndarray, mask: Optional[np.ndarray]) -> None:
        ...


class DirectorySliceStore:
    """Slices stored as MSVD files under a dataset root."""

    def __init__(self, root: Path | str, dtype: str = "float32"):
        self.root = Path(root)
        self.dtype = dtype

    def read(self, data_path: str) -> tuple[np.ndarray, Optional[np.ndarray]]:
        return read_blob(self.root / data_path)

    def write(self, data_path: str, image: np.ndarray, mask: Optional[np.ndarray]) -> None:
        write_blob(self.root / data_path, image, mask, self.dtype)


class MemorySliceStore:
    """In-process slice store; values are kept at full precision."""

    def __init__(self):
        self._slices: dict[str, tuple[np.ndarray, Optional[np.ndarray]]] = {}

    def read(self, data_path: str) -> tuple[np.ndarray, Optional[np.ndarray]]:
        if data_path not in self._slices:
            raise DataError(f"Slice not in store: {data_path}")
        image, mask = self._slices[data_path]
        return image, mask

    def write(self, data_path: str, image: np.ndarray, mask: Optional[np.ndarray]) -> None:
        self._slices[data_path] = (
            np.array(image, copy=True),
            None if mask is None else np.array(mask, copy=True),
        )

    def __len__(self) -> int:
        return len(self._slices)

    def __contains__(self, data_path: str) -> bool:
        return data_path in self._slices
