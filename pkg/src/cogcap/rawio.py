"""Little-endian binary formats for single tensors and named-array bundles.

Single tensor (``.cten``)::

    magic   4 bytes  b"CTEN"
    version u8       1
    dtype   u8       code from DTYPES
    ndim    u8
    pad     u8       0
    shape   ndim x u64
    data    prod(shape) elements, little-endian, C order

Named-array bundle (``.cnpk``, used for checkpoints)::

    magic   4 bytes  b"CNPK"
    version u8       1
    pad     3 bytes
    count   u32
    then per array:
        name_len u16, name utf-8 bytes
        dtype u8, ndim u8, shape ndim x u64
        nbytes u64, data
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

DTYPES = {
    1: np.dtype("<u1"),
    2: np.dtype("<i4"),
    3: np.dtype("<i8"),
    4: np.dtype("<f4"),
    5: np.dtype("<f8"),
    6: np.dtype("<f2"),
}

TENSOR_MAGIC = b"CTEN"
BUNDLE_MAGIC = b"CNPK"


class RawFormatError(ValueError):
    pass


_KIND = {("u", 1): 1, ("i", 4): 2, ("i", 8): 3, ("f", 4): 4, ("f", 8): 5, ("f", 2): 6}


def _code(arr: np.ndarray) -> int:
    try:
        return _KIND[(arr.dtype.kind, arr.dtype.itemsize)]
    except KeyError:
        raise RawFormatError(f"unsupported dtype {arr.dtype}") from None


def _write_array(fh: BinaryIO, arr: np.ndarray) -> None:
    code = _code(arr)
    fh.write(struct.pack("<BB", code, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    data = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
    fh.write(struct.pack("<Q", len(data)))
    fh.write(data)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise RawFormatError("truncated file")
    return buf


def _read_array(fh: BinaryIO) -> np.ndarray:
    code, ndim = struct.unpack("<BB", _read_exact(fh, 2))
    if code not in DTYPES:
        raise RawFormatError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
    (nbytes,) = struct.unpack("<Q", _read_exact(fh, 8))
    dt = DTYPES[code]
    if nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
        raise RawFormatError("payload size does not match shape")
    return np.frombuffer(_read_exact(fh, nbytes), dtype=dt).reshape(shape).copy()


def save_tensor(path: str | os.PathLike, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    code = _code(arr)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC + struct.pack("<BBBB", 1, code, arr.ndim, 0))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        head = _read_exact(fh, 8)
        if head[:4] != TENSOR_MAGIC:
            raise RawFormatError(f"{path}: bad magic")
        version, code, ndim, _ = struct.unpack("<BBBB", head[4:])
        if version != 1 or code not in DTYPES:
            raise RawFormatError(f"{path}: unsupported header")
        shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
        dt = DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        data = _read_exact(fh, n)
        if fh.read(1):
            raise RawFormatError(f"{path}: trailing bytes")
    return np.frombuffer(data, dtype=dt).reshape(shape).copy()


def dumps_bundle(arrays: Mapping[str, np.ndarray]) -> bytes:
    fh = io.BytesIO()
    fh.write(BUNDLE_MAGIC + struct.pack("<B3x", 1))
    fh.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)) + raw)
        _write_array(fh, np.asarray(arr))
    return fh.getvalue()


def loads_bundle(blob: bytes) -> dict[str, np.ndarray]:
    fh = io.BytesIO(blob)
    head = _read_exact(fh, 8)
    if head[:4] != BUNDLE_MAGIC or head[4] != 1:
        raise RawFormatError("not a named-array bundle")
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode("utf-8")
        out[name] = _read_array(fh)
    if fh.read(1):
        raise RawFormatError("trailing bytes")
    return out


def save_bundle(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps_bundle(arrays))
    os.replace(tmp, path)


def load_bundle(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return loads_bundle(Path(path).read_bytes())
