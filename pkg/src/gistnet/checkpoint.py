"""Binary checkpoint format.

Layout (all integers little-endian)::

    "GSTN"            4 bytes magic
    version           u32
    config digest     32 bytes (sha256 of the canonical model config)
    tensor count      u32
    per tensor:
        name length   u16, then UTF-8 name ("<layer>.<weights|bias>")
        dtype code    u8 (1 = float32, 2 = float64)
        rank          u8
        dims          rank x u64
        data          row-major, little-endian
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .optim import ModelParams

MAGIC = b"GSTN"
VERSION = 1
_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def config_digest(model_config: dict) -> bytes:
    canonical = json.dumps(model_config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).digest()


def flatten_params(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    return [(f"{layer}.{key}", arr) for layer, p in params.items() for key, arr in p.items()]


def unflatten_params(items) -> ModelParams:
    params: ModelParams = {}
    for name, arr in items:
        layer, _, key = name.rpartition(".")
        params.setdefault(layer, {})[key] = arr
    return params


def encode_checkpoint(params: ModelParams, digest: bytes = b"\0" * 32) -> bytes:
    if len(digest) != 32:
        raise ValueError("config digest must be 32 bytes")
    items = flatten_params(params)
    out = [MAGIC, struct.pack("<I", VERSION), digest, struct.pack("<I", len(items))]
    for name, arr in items:
        raw = name.encode("utf-8")
        dt = np.dtype(arr.dtype).newbyteorder("<")
        if dt not in _CODES:
            raise FormatError(f"{name}: unsupported dtype {arr.dtype}")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", _CODES[dt], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes, source="<checkpoint>") -> tuple[ModelParams, bytes]:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{source}: truncated while reading {what} at offset {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError(f"{source}: bad magic at offset 0")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version} at offset 4")
    digest = take(32, "config digest")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    items = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        start = pos
        try:
            name = take(nlen, "tensor name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{source}: tensor name is not UTF-8 at offset {start}") from exc
        code, rank = struct.unpack("<BB", take(2, f"{name} header"))
        if code not in _DTYPES:
            raise FormatError(f"{source}: unknown dtype code {code} at offset {pos - 2}")
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, f"{name} dims"))
        dt = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.uint64)) * dt.itemsize
        arr = np.frombuffer(take(nbytes, f"{name} data"), dtype=dt).reshape(dims)
        items.append((name, arr.astype(dt.newbyteorder("="))))
    if pos != len(buf):
        raise FormatError(f"{source}: {len(buf) - pos} trailing bytes at offset {pos}")
    return unflatten_params(items), digest


def save_checkpoint(params: ModelParams, path, digest: bytes = b"\0" * 32) -> None:
    Path(path).write_bytes(encode_checkpoint(params, digest))


def load_checkpoint(path, expected_digest: bytes | None = None, force: bool = False):
    """Read a checkpoint; a digest mismatch is refused unless ``force``."""
    path = Path(path)
    params, digest = decode_checkpoint(path.read_bytes(), str(path))
    if expected_digest is not None and digest != expected_digest and not force:
        raise ValidationError(f"{path}: config digest mismatch (use --force to override)")
    return params, digest
