"""Named-tensor binary container used by all checkpoint files.

Layout (all integers little-endian):
  magic  b"ZSTN"
  u32    format version (1)
  u32    tensor count
  per tensor:
    u16   name length, then utf-8 name
    u8    dtype code (0=float32, 1=float64, 2=int64, 3=uint8)
    u8    ndim
    u32*  dims
    raw   little-endian payload
"""

import struct

import numpy as np

from ..errors import DataFormatError

MAGIC = b"ZSTN"
_DTYPES = {0: np.float32, 1: np.float64, 2: np.int64, 3: np.uint8}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1,
          np.dtype(np.int64): 2, np.dtype(np.uint8): 3}


def save_tensors(path, named):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", 1, len(named)))
        for name in sorted(named):
            arr = np.ascontiguousarray(named[name])
            if arr.dtype not in _CODES:
                raise DataFormatError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
            enc = name.encode()
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_tensors(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataFormatError(f"{path}: bad magic, not a tensor container")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != 1:
        raise DataFormatError(f"{path}: unsupported container version {version}")
    out = {}
    off = 12
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode()
        off += nlen
        code, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        dims = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        dtype = np.dtype(_DTYPES[code]).newbyteorder("<")
        n_elem = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        if off + n_elem * dtype.itemsize > len(blob):
            raise DataFormatError(f"{path}: truncated payload for tensor {name!r}")
        arr = np.frombuffer(blob, dtype=dtype, count=n_elem, offset=off)
        off += n_elem * dtype.itemsize
        out[name] = arr.astype(_DTYPES[code]).reshape(dims)
    if off != len(blob):
        raise DataFormatError(f"{path}: trailing bytes after last tensor")
    return out
