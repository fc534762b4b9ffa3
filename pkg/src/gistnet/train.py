"""Mini-batch training and batched inference for fovea-only and GistNet models."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import SceneSet, context_batch, fovea_batch, shuffled_batches
from .errors import NumericError
from .layers import softmax_xent, softmax_xent_backward
from .models import FoveaNet, GistNet
from .optim import DESK_LEARNING_RATE, ModelParams, adam_init, adam_step
from .tensor import SeededRng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = DESK_LEARNING_RATE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 3
    max_iterations: int | None = None
    seed: int = 0
    dtype: str = "float32"
    margin: float = 0.0
    checkpoint_every: int = 0


def input_sides(model) -> tuple[int, int | None]:
    if isinstance(model, GistNet):
        return model.resolved.fovea.side, model.resolved.periphery.side
    return model.cfg.side, None


def make_inputs(model, data: SceneSet, idx, margin: float = 0.0, dtype=np.float32):
    """Fovea crops and (for GistNet) masked context inputs for the given indices."""
    fside, cside = input_sides(model)
    fx = fovea_batch(data, idx, fside, margin).astype(dtype, copy=False)
    cx = None if cside is None else context_batch(data, idx, cside).astype(dtype, copy=False)
    return fx, cx


def train_model(model: FoveaNet | GistNet, params: ModelParams, data: SceneSet, cfg: TrainConfig,
                on_checkpoint: Callable[[int, ModelParams], None] | None = None):
    """Adam on mean softmax cross-entropy; returns final params and the log rows.

    Log rows are ``(iteration, epoch, loss, batch_accuracy)``. Stops after
    ``epochs`` passes or ``max_iterations`` updates, whichever comes first.
    """
    dtype = np.dtype(cfg.dtype)
    params = {n: {k: a.astype(dtype) for k, a in p.items()} for n, p in params.items()}
    state = adam_init(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    order_rng = SeededRng(cfg.seed, 0xBA7C)
    rows = []
    it = 0
    for epoch in range(cfg.epochs):
        if cfg.max_iterations is not None and it >= cfg.max_iterations:
            break
        for idx in shuffled_batches(len(data), cfg.batch_size, order_rng):
            if cfg.max_iterations is not None and it >= cfg.max_iterations:
                break
            fx, cx = make_inputs(model, data, idx, cfg.margin, dtype)
            labels = data.categories[idx]
            logits, _, fstate = model.forward(params, fx, cx)
            loss, xcache = softmax_xent(logits, labels)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss {loss} at iteration {it + 1}")
            grads, _ = model.backward(params, fstate, softmax_xent_backward(xcache))
            params, state = adam_step(state, params, grads)
            it += 1
            acc = float(np.mean(logits.argmax(axis=1) == labels))
            rows.append((it, epoch, loss, acc))
            if it % 50 == 0:
                log.info("iter %d epoch %d loss %.4f acc %.3f", it, epoch, loss, acc)
            if on_checkpoint and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                on_checkpoint(it, params)
    return params, rows


def predict_logits(model, params: ModelParams, data: SceneSet, margin: float = 0.0,
                   batch_size: int = 64, context_fn: Callable | None = None) -> np.ndarray:
    """Logits for every sample in order; ``context_fn(cx, idx)`` may rewrite context inputs."""
    out = []
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        fx, cx = make_inputs(model, data, idx, margin)
        if context_fn is not None and cx is not None:
            cx = context_fn(cx, idx)
        logits, _, _ = model.forward(params, fx, cx)
        out.append(logits)
    return np.concatenate(out) if out else np.zeros((0, model.num_classes), np.float32)


def embeddings(model, params: ModelParams, data: SceneSet, stream: str, margin: float = 0.0,
               batch_size: int = 64, mask_context: bool = True) -> np.ndarray:
    """Stream embeddings: ``"fovea"`` = fc2 activations, ``"periphery"`` = flatten output."""
    fside, cside = input_sides(model)
    out = []
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        fx = fovea_batch(data, idx, fside, margin)
        if isinstance(model, GistNet):
            cx = context_batch(data, idx, cside, mask=mask_context)
            _, extras, _ = model.forward(params, fx, cx)
        else:
            _, extras, _ = model.forward(params, fx)
        out.append(extras[stream])
    return np.concatenate(out)
