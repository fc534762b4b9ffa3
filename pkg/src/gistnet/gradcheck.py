"""Finite-difference checks for every layer type and the fused desk-scale model."""

from __future__ import annotations

import numpy as np

from .layers import (Concat2, Conv2D, Dense, Flatten, MaxPool2, ReLU, backward, concat2, concat2_backward,
                     forward, init_params, softmax_xent, softmax_xent_backward)
from .models import activation_signature, build_gistnet, desk_config
from .optim import GradCheckReport, grad_check
from .tensor import SeededRng, random_normal


def _linear_readout(y: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum(y * w))


def _layer_closure(spec, x_shape, rng: SeededRng):
    """Closure over ``{"layer": params, "input": {"x": x}}`` with a fixed random readout."""
    params = init_params(spec, rng.spawn(0), "float64")
    x = random_normal(rng.spawn(1), x_shape, 0.0, 1.0, "float64")
    if isinstance(spec, MaxPool2):
        # well separated values keep +/-eps away from argmax ties
        x = x + np.arange(x.size, dtype=np.float64).reshape(x_shape) * 0.05
    probe, _ = forward(spec, params, x)
    w = random_normal(rng.spawn(2), probe.shape, 0.0, 1.0, "float64")
    bundle = {"layer": params, "input": {"x": x}} if params else {"input": {"x": x}}

    def closure(p):
        y, cache = forward(spec, p.get("layer", {}), p["input"]["x"])
        dx, grads = backward(spec, p.get("layer", {}), cache, w)
        out = {"input": {"x": dx}}
        if grads:
            out["layer"] = grads
        sig = None
        if isinstance(spec, (ReLU, MaxPool2)):
            sig = activation_signature(cache)
        return _linear_readout(y, w), out, sig

    return closure, bundle


def _concat_closure(rng: SeededRng):
    a = random_normal(rng.spawn(0), (2, 5), 0.0, 1.0, "float64")
    b = random_normal(rng.spawn(1), (2, 3), 0.0, 1.0, "float64")
    w = random_normal(rng.spawn(2), (2, 8), 0.0, 1.0, "float64")

    def closure(p):
        y, cache = concat2(p["a"]["x"], p["b"]["x"])
        da, db = concat2_backward(cache, w)
        return _linear_readout(y, w), {"a": {"x": da}, "b": {"x": db}}

    return closure, {"a": {"x": a}, "b": {"x": b}}


def _xent_closure(rng: SeededRng):
    logits = random_normal(rng.spawn(0), (3, 5), 0.0, 1.0, "float64")
    labels = np.array([0, 3, 4])

    def closure(p):
        loss, cache = softmax_xent(p["logits"]["x"], labels)
        return loss, {"logits": {"x": softmax_xent_backward(cache)}}

    return closure, {"logits": {"x": logits}}


def layer_suite(seed: int = 0) -> dict[str, tuple]:
    """Closure and parameter bundle for each layer type, keyed by type name."""
    rng = SeededRng(seed, 0x6C)
    return {
        "Conv2D": _layer_closure(Conv2D(2, 3, 3), (2, 2, 6, 6), rng.spawn(0)),
        "Conv2D_stride2": _layer_closure(Conv2D(2, 3, 5, stride=2), (2, 2, 8, 8), rng.spawn(1)),
        "Dense": _layer_closure(Dense(7, 4), (3, 7), rng.spawn(2)),
        "ReLU": _layer_closure(ReLU(), (2, 3, 4, 4), rng.spawn(3)),
        "MaxPool2": _layer_closure(MaxPool2(), (2, 2, 4, 4), rng.spawn(4)),
        "Flatten": _layer_closure(Flatten(), (2, 2, 3, 3), rng.spawn(5)),
        "Concat2": _concat_closure(rng.spawn(6)),
        "SoftmaxCrossEntropy": _xent_closure(rng.spawn(7)),
    }


def model_closure(seed: int = 0, batch: int = 2, num_classes: int = 8):
    """Closure and float64 params for the desk-scale fused GistNet on random inputs."""
    cfg = desk_config(num_classes)
    rng = SeededRng(seed, 0x6D)
    model, params = build_gistnet(cfg, rng.spawn(0), "float64")
    fx = random_normal(rng.spawn(1), (batch, 3, cfg.fovea.side, cfg.fovea.side), 0.5, 0.25, "float64")
    cx = random_normal(rng.spawn(2), (batch, 3, cfg.periphery.side, cfg.periphery.side), 0.5, 0.25, "float64")
    labels = np.arange(batch) % num_classes

    def closure(p):
        logits, _, state = model.forward(p, fx, cx)
        loss, xcache = softmax_xent(logits, labels)
        grads, _ = model.backward(p, state, softmax_xent_backward(xcache))
        return loss, grads, activation_signature(state)

    return closure, params


def run_gradcheck(seed: int = 0, tolerance: float = 1e-4, model_entries: int | None = 8,
                  include_model: bool = True) -> dict[str, GradCheckReport]:
    """Reports keyed by layer type, plus ``"GistNet"`` for the fused model."""
    reports = {}
    for name, (closure, bundle) in layer_suite(seed).items():
        reports[name] = grad_check(closure, bundle, tolerance)
    if include_model:
        closure, params = model_closure(seed)
        reports["GistNet"] = grad_check(closure, params, tolerance, max_entries=model_entries,
                                        rng=SeededRng(seed, 0x5A))
    return reports


def reports_to_json(reports: dict[str, GradCheckReport]) -> dict:
    out = {"passed": all(r.passed for r in reports.values()), "suites": {}}
    for name, rep in reports.items():
        out["suites"][name] = {
            "passed": rep.passed, "max_rel_err": rep.max_rel_err, "kink_skips": rep.kink_skips,
            "tensors": [{"name": r.name, "checked": r.checked, "max_rel_err": r.max_rel_err}
                        for r in rep.rows],
        }
    return out
