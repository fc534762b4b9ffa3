"""Layer forward/backward passes with explicit caches.

Every layer accepts either a single sample (``[C,H,W]`` images, ``[F]``
vectors) or a batch with a leading ``N`` axis; outputs keep the caller's rank.
Backward functions return ``(dx, grads)`` where ``grads`` maps ``"weights"`` /
``"bias"`` to arrays shaped like the parameters (empty for parameter-free
layers). A cache may be consumed by exactly one backward call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, ShapeError
from .tensor import SeededRng, as_dtype, random_normal


@dataclass(frozen=True)
class Conv2D:
    in_ch: int
    out_ch: int
    k: int
    stride: int = 1
    pad: int | None = None

    @property
    def padding(self) -> int:
        return (self.k - 1) // 2 if self.pad is None else self.pad

    def out_side(self, side: int) -> int:
        return (side + 2 * self.padding - self.k) // self.stride + 1

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {"weights": (self.out_ch, self.in_ch, self.k, self.k), "bias": (self.out_ch,)}

    @property
    def fan_in(self) -> int:
        return self.in_ch * self.k * self.k


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {"weights": (self.in_features, self.out_features), "bias": (self.out_features,)}

    @property
    def fan_in(self) -> int:
        return self.in_features


@dataclass(frozen=True)
class ReLU:
    def param_shapes(self):
        return {}


@dataclass(frozen=True)
class MaxPool2:
    def param_shapes(self):
        return {}


@dataclass(frozen=True)
class Flatten:
    def param_shapes(self):
        return {}


@dataclass(frozen=True)
class Concat2:
    def param_shapes(self):
        return {}


@dataclass(frozen=True)
class SoftmaxCrossEntropy:
    num_classes: int

    def param_shapes(self):
        return {}


LayerSpec = Conv2D | Dense | ReLU | MaxPool2 | Flatten | Concat2 | SoftmaxCrossEntropy


class Cache(dict):
    """Per-call record for a backward pass; refuses a second consumption."""

    def consume(self) -> "Cache":
        if self.get("_spent"):
            raise ArgumentError("forward cache already consumed by a backward pass")
        self["_spent"] = True
        return self


def init_params(spec: LayerSpec, rng: SeededRng, dtype="float32") -> dict[str, np.ndarray]:
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases."""
    shapes = spec.param_shapes()
    if not shapes:
        return {}
    std = math.sqrt(2.0 / spec.fan_in)
    return {
        "weights": random_normal(rng, shapes["weights"], 0.0, std, dtype),
        "bias": np.zeros(shapes["bias"], dtype=as_dtype(dtype)),
    }


def _batched(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected rank {rank} or {rank + 1}, got shape {x.shape}")


# --- convolution -------------------------------------------------------------

def conv2d_forward(spec: Conv2D, params, x: np.ndarray):
    xb, single = _batched(x, 3)
    N, C, H, W = xb.shape
    if C != spec.in_ch:
        raise ShapeError(f"conv expects {spec.in_ch} input channels, got {C}")
    k, s, p = spec.k, spec.stride, spec.padding
    if H + 2 * p < k or W + 2 * p < k:
        raise ShapeError(f"input {H}x{W} smaller than kernel {k}")
    xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p))) if p else xb
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    Ho, Wo = win.shape[2], win.shape[3]
    # rows ordered (n, i, j); columns ordered (c, ki, kj) to match weight layout
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * k * k)
    w = params["weights"].reshape(spec.out_ch, -1)
    y = cols @ w.T + params["bias"]
    y = np.ascontiguousarray(y.reshape(N, Ho, Wo, spec.out_ch).transpose(0, 3, 1, 2))
    cache = Cache(cols=cols, x_shape=xb.shape, out_hw=(Ho, Wo), single=single)
    return (y[0] if single else y), cache


def conv2d_backward(spec: Conv2D, params, cache: Cache, dy: np.ndarray, need_dx: bool = True):
    cache.consume()
    N, C, H, W = cache["x_shape"]
    Ho, Wo = cache["out_hw"]
    dyb = dy[None] if cache["single"] else dy
    if dyb.shape != (N, spec.out_ch, Ho, Wo):
        raise ShapeError(f"dy shape {dy.shape} does not match conv output")
    k, s, p = spec.k, spec.stride, spec.padding
    dyr = dyb.transpose(0, 2, 3, 1).reshape(-1, spec.out_ch)
    grads = {
        "weights": (dyr.T @ cache["cols"]).reshape(params["weights"].shape),
        "bias": dyr.sum(axis=0),
    }
    if not need_dx:
        return None, grads
    dcols = (dyr @ params["weights"].reshape(spec.out_ch, -1)).reshape(N, Ho, Wo, C, k, k)
    dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # N C ki kj Ho Wo
    dxp = np.zeros((N, C, H + 2 * p, W + 2 * p), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += dcols[:, :, i, j]
    dx = dxp[:, :, p:p + H, p:p + W]
    return (dx[0] if cache["single"] else np.ascontiguousarray(dx)), grads


# --- dense -------------------------------------------------------------------

def dense_forward(spec: Dense, params, x: np.ndarray):
    xb, single = _batched(x, 1)
    if xb.shape[1] != spec.in_features:
        raise ShapeError(f"dense expects {spec.in_features} features, got {xb.shape[1]}")
    y = xb @ params["weights"] + params["bias"]
    return (y[0] if single else y), Cache(x=xb, single=single)


def dense_backward(spec: Dense, params, cache: Cache, dy: np.ndarray, need_dx: bool = True):
    cache.consume()
    xb = cache["x"]
    dyb = dy[None] if cache["single"] else dy
    if dyb.shape != (xb.shape[0], spec.out_features):
        raise ShapeError(f"dy shape {dy.shape} does not match dense output")
    grads = {"weights": xb.T @ dyb, "bias": dyb.sum(axis=0)}
    if not need_dx:
        return None, grads
    dx = dyb @ params["weights"].T
    return (dx[0] if cache["single"] else dx), grads


# --- parameter-free layers ---------------------------------------------------

def relu(x: np.ndarray):
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), Cache(mask=mask)


def relu_backward(cache: Cache, dy: np.ndarray) -> np.ndarray:
    cache.consume()
    return np.where(cache["mask"], dy, 0).astype(dy.dtype, copy=False)


def maxpool2(x: np.ndarray):
    xb, single = _batched(x, 3)
    N, C, H, W = xb.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {H}x{W}")
    win = xb.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(N, C, H // 2, W // 2, 4)
    arg = win.argmax(axis=-1)  # first maximum in row-major window order
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return (y[0] if single else y), Cache(arg=arg, x_shape=xb.shape, single=single)


def maxpool2_backward(cache: Cache, dy: np.ndarray) -> np.ndarray:
    cache.consume()
    N, C, H, W = cache["x_shape"]
    dyb = dy[None] if cache["single"] else dy
    if dyb.shape != (N, C, H // 2, W // 2):
        raise ShapeError(f"dy shape {dy.shape} does not match pool output")
    onehot = cache["arg"][..., None] == np.arange(4)
    dwin = np.where(onehot, dyb[..., None], 0).astype(dy.dtype)
    dx = dwin.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
    return dx[0] if cache["single"] else dx


def flatten(x: np.ndarray, batched: bool):
    y = x.reshape(x.shape[0], -1) if batched else x.reshape(-1)
    return y, Cache(x_shape=x.shape)


def flatten_backward(cache: Cache, dy: np.ndarray) -> np.ndarray:
    cache.consume()
    return dy.reshape(cache["x_shape"])


def concat2(a: np.ndarray, b: np.ndarray):
    if a.ndim != b.ndim or a.ndim not in (1, 2):
        raise ShapeError(f"concat2 needs two rank-1 (or batched rank-2) inputs, got {a.shape}, {b.shape}")
    if a.shape[-1] < 1 or b.shape[-1] < 1:
        raise ShapeError("concat2 operands must be non-empty")
    if a.ndim == 2 and a.shape[0] != b.shape[0]:
        raise ShapeError("concat2 batch sizes differ")
    return np.concatenate([a, b], axis=-1), Cache(m=a.shape[-1])


def concat2_backward(cache: Cache, dy: np.ndarray):
    cache.consume()
    m = cache["m"]
    return dy[..., :m], dy[..., m:]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, label):
    """Mean cross-entropy of softmax(logits) against integer labels.

    ``logits`` [K] with an int label, or [N,K] with N labels.
    """
    lb, single = _batched(logits, 1)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    K = lb.shape[1]
    if labels.shape[0] != lb.shape[0]:
        raise ShapeError("one label per logit row required")
    if labels.min() < 0 or labels.max() >= K:
        raise ArgumentError(f"label outside [0, {K})")
    z = lb - lb.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(lb.shape[0])
    loss = float(np.mean(logsum - z[rows, labels]))
    return loss, Cache(probs=softmax(lb), labels=labels, single=single)


def softmax_xent_backward(cache: Cache) -> np.ndarray:
    cache.consume()
    probs, labels = cache["probs"], cache["labels"]
    d = probs.copy()
    d[np.arange(len(labels)), labels] -= 1
    d /= len(labels)
    return d[0] if cache["single"] else d


# --- generic dispatch --------------------------------------------------------

def forward(spec: LayerSpec, params, x: np.ndarray, batched: bool = True):
    if isinstance(spec, Conv2D):
        return conv2d_forward(spec, params, x)
    if isinstance(spec, Dense):
        return dense_forward(spec, params, x)
    if isinstance(spec, ReLU):
        return relu(x)
    if isinstance(spec, MaxPool2):
        return maxpool2(x)
    if isinstance(spec, Flatten):
        return flatten(x, batched)
    raise ArgumentError(f"{type(spec).__name__} is not a sequential layer")


def backward(spec: LayerSpec, params, cache: Cache, dy: np.ndarray, need_dx: bool = True):
    if isinstance(spec, Conv2D):
        return conv2d_backward(spec, params, cache, dy, need_dx)
    if isinstance(spec, Dense):
        return dense_backward(spec, params, cache, dy, need_dx)
    if isinstance(spec, ReLU):
        return relu_backward(cache, dy), {}
    if isinstance(spec, MaxPool2):
        return maxpool2_backward(cache, dy), {}
    if isinstance(spec, Flatten):
        return flatten_backward(cache, dy), {}
    raise ArgumentError(f"{type(spec).__name__} is not a sequential layer")


def stack_forward(stack, params, x: np.ndarray, batched: bool = True):
    """Run ``[(name, spec), ...]`` in order; returns output and cache list."""
    caches = []
    for name, spec in stack:
        x, cache = forward(spec, params.get(name, {}), x, batched)
        caches.append(cache)
    return x, caches


def stack_backward(stack, params, caches, dy: np.ndarray, need_dx: bool = True):
    """Reverse pass over a stack; returns (dx, {name: grads})."""
    grads = {}
    last = len(stack) - 1
    for idx in range(last, -1, -1):
        name, spec = stack[idx]
        want = need_dx or idx > 0
        dy, g = backward(spec, params.get(name, {}), caches[idx], dy, want)
        if g:
            grads[name] = g
    return dy, grads
