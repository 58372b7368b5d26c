"""Binary tensor container used for features, style exports and checkpoints.

Layout (all little-endian):

====== ======================= =====================================
bytes  field                   value
====== ======================= =====================================
4      magic                   ``MSST``
4      version                 uint32, currently 1
1      dtype code              1 = float32, 2 = float64
1      ndim                    uint8, at most 8
8*ndim dims                    uint64 each
rest   payload                 row-major values
====== ======================= =====================================

Round-trips are bit-exact: reading returns exactly the stored values in the
stored dtype.  Features are written as float32; model checkpoints use the
float64 code so that training can resume without precision loss.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MSST"
VERSION = 1
MAX_NDIM = 8

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}


class TensorFileError(ValueError):
    """Malformed tensor file or un-storable array."""


def write_tensor(path: str | Path, array: np.ndarray, dtype: str = "float32") -> None:
    """Write an array; rejects non-finite values, reporting the first location."""
    array = np.asarray(array)
    if array.ndim > MAX_NDIM:
        raise TensorFileError(f"array has {array.ndim} dims, limit is {MAX_NDIM}")
    if not np.all(np.isfinite(array)):
        where = np.argwhere(~np.isfinite(array))[0]
        raise TensorFileError(
            f"non-finite value at index {tuple(int(i) for i in where)}")
    target = np.dtype("<f8") if dtype == "float64" else np.dtype("<f4")
    payload = np.ascontiguousarray(array, dtype=target)
    header = MAGIC + struct.pack("<I", VERSION)
    header += struct.pack("<BB", _CODE_FOR_KIND[target], array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise TensorFileError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise TensorFileError(f"{path}: unsupported version {version}")
    code, ndim = struct.unpack_from("<BB", blob, 8)
    if code not in _DTYPE_CODES:
        raise TensorFileError(f"{path}: unknown dtype code {code}")
    if ndim > MAX_NDIM:
        raise TensorFileError(f"{path}: ndim {ndim} exceeds limit")
    dims = struct.unpack_from(f"<{ndim}Q", blob, 10)
    dtype = _DTYPE_CODES[code]
    offset = 10 + 8 * ndim
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
    payload = blob[offset:]
    if len(payload) != expected:
        raise TensorFileError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
