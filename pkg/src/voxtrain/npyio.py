"""Reader/writer for 3D volumes stored in the npy array file format.

Handles the version 1.0 layout: 6 magic bytes, version, a little-endian
header length, then an ASCII dict literal with ``descr``, ``fortran_order``
and ``shape``, padded so the data payload starts on a 64-byte boundary.
Only integer and floating element types are accepted; volumes are returned
as row-major float32 regardless of on-disk dtype.
"""

from __future__ import annotations

import ast
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, NotThreeDimensional, UnsupportedDtype, VolumeIOError

MAGIC = b"\x93NUMPY"


@dataclass(frozen=True)
class Volume:
    data: np.ndarray  # (H, W, D) float32, C-contiguous
    modality: str

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)


def _parse_header(path, fh) -> tuple[np.dtype, bool, tuple[int, ...]]:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise BadMagic(path)
    version = fh.read(2)
    if len(version) < 2 or version[0] != 1:
        raise VolumeIOError(f"{path}: unsupported npy format version {tuple(version)}")
    (header_len,) = struct.unpack("<H", fh.read(2))
    header = fh.read(int(header_len)).decode("latin1")
    try:
        meta = ast.literal_eval(header)
        descr = meta["descr"]
        fortran_order = bool(meta["fortran_order"])
        shape = tuple(int(s) for s in meta["shape"])
    except (ValueError, SyntaxError, KeyError, TypeError) as exc:
        raise VolumeIOError(f"{path}: malformed npy header: {exc}") from exc
    try:
        dtype = np.dtype(descr)
    except TypeError as exc:
        raise UnsupportedDtype(path, descr) from exc
    if dtype.kind not in "iuf":
        raise UnsupportedDtype(path, descr)
    return dtype, fortran_order, shape


def read_volume(path, modality: str | None = None) -> Volume:
    """Read one npy file as a 3D float32 Volume.

    Raises BadMagic, UnsupportedDtype or NotThreeDimensional on contract
    violations; a short payload raises VolumeIOError.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        dtype, fortran_order, shape = _parse_header(path, fh)
        if len(shape) != 3:
            raise NotThreeDimensional(path, shape)
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise VolumeIOError(f"{path}: truncated payload ({len(payload)} bytes)")
    flat = np.frombuffer(payload, dtype=dtype)
    data = flat.reshape(shape, order="F" if fortran_order else "C")
    data = np.ascontiguousarray(data, dtype=np.float32)
    return Volume(data=data, modality=modality if modality is not None else path.stem)


def peek_shape(path) -> tuple[int, ...]:
    """Array shape from the file header alone, without loading the payload."""
    path = Path(path)
    with open(path, "rb") as fh:
        _, _, shape = _parse_header(path, fh)
    return shape


def write_volume(path, data: np.ndarray) -> None:
    """Write an integer or floating array as a version 1.0 npy file."""
    data = np.asarray(data)
    if data.dtype.kind not in "iuf":
        raise UnsupportedDtype(path, data.dtype.str)
    data = np.ascontiguousarray(data)
    descr = data.dtype.newbyteorder("<").str if data.dtype.itemsize > 1 else data.dtype.str
    header = f"{{'descr': {descr!r}, 'fortran_order': False, 'shape': {tuple(data.shape)!r}, }}"
    # pad so magic+version+len+header is a multiple of 64, ending in newline
    unpadded = len(MAGIC) + 2 + 2 + len(header) + 1
    header = header + " " * (-unpadded % 64) + "\n"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([1, 0]))
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("latin1"))
        fh.write(data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes())
