"""Named-tensor checkpoint files.

Layout (little-endian):

    4s   magic "DSCW"
    u16  schema version
    u32  tensor count
    per tensor:
        u16 name length, utf-8 name
        u8  dtype code (0 = float32, 1 = float64, 2 = int64)
        u8  ndim, then ndim x u32 extents
        u64 payload byte count, payload (C order)
    u32  metadata length, utf-8 JSON metadata
"""

import json
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"DSCW"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def save_checkpoint(path, tensors, metadata=None):
    """tensors: mapping name -> ndarray (insertion order is kept)."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHI", MAGIC, VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            if arr.dtype not in CODES:
                raise TypeError(f"unsupported dtype {arr.dtype} for {name}")
            code = CODES[arr.dtype]
            raw_name = name.encode()
            fh.write(struct.pack("<H", len(raw_name)) + raw_name)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
            fh.write(struct.pack("<Q", len(payload)) + payload)
        meta = json.dumps(metadata or {}).encode()
        fh.write(struct.pack("<I", len(meta)) + meta)


def load_checkpoint(path):
    """Returns (dict name -> ndarray, metadata dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        magic, version, count = struct.unpack_from("<4sHI", raw, 0)
    except struct.error as exc:
        raise FormatError("checkpoint shorter than header") from exc
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"checkpoint version {version} != {VERSION}")
    pos = struct.calcsize("<4sHI")
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + n].decode()
            pos += n
            code, ndim = struct.unpack_from("<BB", raw, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            (nbytes,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
            if code not in DTYPES or pos + nbytes > len(raw):
                raise FormatError(f"corrupt tensor entry {name!r}")
            dt = DTYPES[code]
            arr = np.frombuffer(raw, dt, nbytes // dt.itemsize, pos).reshape(shape)
            out[name] = arr.astype(dt.newbyteorder("="))
            pos += nbytes
        (mlen,) = struct.unpack_from("<I", raw, pos)
        meta = json.loads(raw[pos + 4:pos + 4 + mlen].decode())
        pos += 4 + mlen
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(raw):
        raise FormatError("trailing bytes in checkpoint")
    return out, meta
