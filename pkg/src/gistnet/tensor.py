"""Dense tensors, deterministic randomness and primitive numeric ops.

Tensors are plain ``numpy.ndarray`` values (float32 or float64, C order).
The helpers here add the strict contracts the rest of the package relies on:
no implicit broadcasting, explicit shape errors, fixed summation order and a
platform-independent random generator.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError, BoundsError, ShapeError

DTYPES = {"float32": np.float32, "float64": np.float64}

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_STREAM_SALT = np.uint64(0xD1B54A32D192ED03)
_MASK64 = (1 << 64) - 1


def check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in shape)
    if len(dims) < 1:
        raise ShapeError("rank must be >= 1")
    if any(d < 1 for d in dims):
        raise ShapeError(f"every dimension must be >= 1, got {dims}")
    if math.prod(dims) > _MASK64:
        raise ShapeError(f"element count of {dims} overflows 64 bits")
    return dims


def as_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ArgumentError(f"unsupported dtype {dtype!r}")
        return np.dtype(DTYPES[dtype])
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ArgumentError(f"unsupported dtype {dt}")
    return dt


def tensor_create(shape: Sequence[int], values, dtype="float32") -> np.ndarray:
    """Copy ``values`` (row-major) into a new tensor of ``shape``."""
    dims = check_shape(shape)
    flat = np.array(values, dtype=as_dtype(dtype)).ravel()
    if flat.size != math.prod(dims):
        raise ShapeError(f"{flat.size} values cannot fill shape {dims}")
    return flat.reshape(dims)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an ascending-k accumulation order.

    Deliberately not BLAS: the loop over k fixes the summation order so the
    result is bitwise reproducible. Layers use BLAS directly for speed.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dims disagree: {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"dtypes disagree: {a.dtype} vs {b.dtype}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    for k in range(a.shape[1]):
        out += np.multiply.outer(a[:, k], b[k, :])
    return out


def elementwise(op: str, a: np.ndarray, b=None, fn: Callable | None = None) -> np.ndarray:
    """Apply ``add``, ``sub``, ``mul``, ``scale`` or ``map`` elementwise.

    Binary ops demand identical shapes; ``scale`` takes a scalar ``b`` and
    ``map`` takes a unary ``fn``.
    """
    if op in ("add", "sub", "mul"):
        b = np.asarray(b)
        if b.shape != a.shape:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
        return {"add": np.add, "sub": np.subtract, "mul": np.multiply}[op](a, b)
    if op == "scale":
        if np.ndim(b) != 0:
            raise ShapeError("scale expects a scalar factor")
        return a * a.dtype.type(b)
    if op == "map":
        if fn is None:
            raise ArgumentError("map requires fn")
        out = np.asarray(fn(a), dtype=a.dtype)
        if out.shape != a.shape:
            raise ShapeError("map must preserve shape")
        return out
    raise ArgumentError(f"unknown elementwise op {op!r}")


def region_fill(t: np.ndarray, rect: tuple[int, int, int, int], value: float) -> np.ndarray:
    """Return a copy of ``t`` [C,H,W] with ``rect`` = (x, y, w, h) set to ``value``."""
    if t.ndim != 3:
        raise ShapeError(f"region_fill expects [C,H,W], got {t.shape}")
    x, y, w, h = (int(v) for v in rect)
    _, H, W = t.shape
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise BoundsError(f"rect {rect} not inside {W}x{H} image")
    out = t.copy()
    out[:, y:y + h, x:x + w] = value
    return out


def topk_indices(v: np.ndarray, k: int) -> list[int]:
    """Indices of the ``k`` largest entries, descending; ties go to the lower index."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ShapeError("topk_indices expects a rank-1 tensor")
    if k < 1 or k > v.shape[0]:
        raise ArgumentError(f"k={k} outside [1, {v.shape[0]}]")
    # stable sort on the negated values keeps ascending index order within ties
    order = np.argsort(-v, kind="stable")
    return [int(i) for i in order[:k]]


def topk_matrix(logits: np.ndarray, k: int) -> np.ndarray:
    """Row-wise :func:`topk_indices` for a [N,K] matrix, same tie rule."""
    if logits.ndim != 2:
        raise ShapeError("topk_matrix expects [N,K]")
    if k < 1 or k > logits.shape[1]:
        raise ArgumentError(f"k={k} outside [1, {logits.shape[1]}]")
    return np.argsort(-logits, axis=1, kind="stable")[:, :k]


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class SeededRng:
    """SplitMix64 counter generator with independent streams.

    The n-th output of a stream is ``mix64(state0 + n * GAMMA)`` where
    ``state0 = mix64(seed) ^ mix64(stream_id ^ SALT)``. Doubles take the top 53
    bits; normals use Box-Muller on consecutive uniform pairs.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        with np.errstate(over="ignore"):
            a = _mix64(np.array([self.seed], dtype=np.uint64))
            b = _mix64(np.array([self.stream_id], dtype=np.uint64) ^ _STREAM_SALT)
        self.state = int((a ^ b)[0])

    def spawn(self, stream_id: int) -> "SeededRng":
        """A generator sharing this seed on another stream."""
        return SeededRng(self.seed, stream_id)

    def next_u64(self, n: int) -> np.ndarray:
        n = int(n)
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * _GAMMA
            out = _mix64(np.uint64(self.state) + steps)
        self.state = (self.state + n * int(_GAMMA)) & _MASK64
        return out

    def uniform(self, size=None) -> np.ndarray | float:
        n = 1 if size is None else math.prod(np.atleast_1d(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return float(u[0]) if size is None else u.reshape(size)

    def integers(self, high: int, size=None) -> np.ndarray | int:
        """Uniform integers in ``[0, high)``."""
        u = self.uniform(1 if size is None else size)
        out = np.minimum(np.floor(np.asarray(u) * high), high - 1).astype(np.int64)
        return int(out.ravel()[0]) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.next_u64(n), kind="stable")

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        return z.ravel()[:n]


def random_normal(rng: SeededRng, shape: Sequence[int], mean: float = 0.0,
                  std: float = 1.0, dtype="float32") -> np.ndarray:
    if std < 0:
        raise ArgumentError(f"std must be >= 0, got {std}")
    dims = check_shape(shape)
    z = rng.normal(math.prod(dims))
    return (mean + std * z).astype(as_dtype(dtype)).reshape(dims)
