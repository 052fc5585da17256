"""NTAT binary tensor files and named bundles of them.

A tensor record is ``b"NTAT"``, u32 ndim, ndim x u32 dims, then the
row-major float32 payload, all little-endian. A bundle is ``b"NTAB"``, u32
count, then per entry a u32 name length, the UTF-8 name and one record.
"""

import struct

import numpy as np

from ..exceptions import ContractError

MAGIC = b"NTAT"
BUNDLE_MAGIC = b"NTAB"


def encode(array):
    array = np.asarray(array, dtype="<f4")
    head = MAGIC + struct.pack("<I", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    return head + np.ascontiguousarray(array).tobytes()


def decode(buf, offset=0):
    """Parse one record; returns (float64 array, next offset)."""
    if buf[offset:offset + 4] != MAGIC:
        raise ContractError("not an NTAT record (bad magic)")
    (ndim,) = struct.unpack_from("<I", buf, offset + 4)
    dims = struct.unpack_from(f"<{ndim}I", buf, offset + 8)
    start = offset + 8 + 4 * ndim
    count = int(np.prod(dims, dtype=np.int64))
    end = start + 4 * count
    if end > len(buf):
        raise ContractError("truncated NTAT payload")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=start)
    return data.astype(np.float64).reshape(dims), end


def save(path, array):
    with open(path, "wb") as fh:
        fh.write(encode(array))


def load(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    array, end = decode(buf)
    if end != len(buf):
        raise ContractError(f"{path}: trailing bytes after NTAT record")
    return array


def save_bundle(path, arrays):
    parts = [BUNDLE_MAGIC, struct.pack("<I", len(arrays))]
    for name, array in arrays.items():
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, encode(array)]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_bundle(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != BUNDLE_MAGIC:
        raise ContractError(f"{path}: not an NTAB bundle")
    (count,) = struct.unpack_from("<I", buf, 4)
    offset, out = 8, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, offset)
        name = buf[offset + 4:offset + 4 + n].decode("utf-8")
        out[name], offset = decode(buf, offset + 4 + n)
    return out
