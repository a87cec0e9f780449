"""``FCTW`` parameter checkpoints.

Layout (little-endian)::

    b"FCTW"  u32 version
    u32 header_len, header_len bytes of UTF-8 JSON (model config, variant)
    repeated to EOF:
        u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FCTW"
VERSION = 1


class FormatError(ValueError):
    """A binary file does not match its declared layout."""


def save_checkpoint(path, tensors: dict[str, np.ndarray], header: dict | None = None) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    hdr = json.dumps(header or {}, sort_keys=True).encode()
    chunks += [struct.pack("<I", len(hdr)), hdr]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4", order="C")
        raw = name.encode()
        chunks += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim),
                   struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    pos = 0

    def need(n: int, what: str) -> None:
        if pos + n > len(buf):
            raise FormatError(f"{path}: truncated reading {what} at byte {pos}: "
                              f"need {n} bytes, {len(buf) - pos} remain")

    need(8, "preamble")
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r} at byte 0, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    pos = 8
    need(4, "header length")
    (hlen,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    need(hlen, "header")
    header = json.loads(buf[pos:pos + hlen].decode())
    pos += hlen
    tensors: dict[str, np.ndarray] = {}
    while pos < len(buf):
        need(4, "name length")
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(nlen + 4, "name and rank")
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(4 * rank, f"dims of {name}")
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        need(4 * count, f"payload of {name}")
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * count
    return tensors, header
