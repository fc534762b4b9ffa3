"""Adam and a central-difference gradient checker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError
from .tensor import SeededRng

# name -> {"weights": array, "bias": array}
ModelParams = dict[str, dict[str, np.ndarray]]

PAPER_LEARNING_RATE = 1e-6
DESK_LEARNING_RATE = 1e-3


@dataclass(frozen=True)
class AdamState:
    m: ModelParams
    v: ModelParams
    t: int = 0
    lr: float = DESK_LEARNING_RATE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.t < 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ArgumentError("invalid Adam step count or betas")
        if self.eps <= 0 or self.lr < 0:
            raise ArgumentError("Adam needs eps > 0 and lr >= 0")


def adam_init(params: ModelParams, lr: float = DESK_LEARNING_RATE, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = {n: {k: np.zeros_like(a) for k, a in p.items()} for n, p in params.items()}
    zeros2 = {n: {k: np.zeros_like(a) for k, a in p.items()} for n, p in params.items()}
    return AdamState(zeros, zeros2, 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: ModelParams, grads: ModelParams):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    Parameters without a gradient entry are treated as having zero gradient.
    """
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, layer in params.items():
        new_params[name], new_m[name], new_v[name] = {}, {}, {}
        for key, theta in layer.items():
            g = grads.get(name, {}).get(key)
            if g is None:
                g = np.zeros_like(theta)
            elif g.shape != theta.shape:
                raise ShapeError(f"gradient {name}.{key} has shape {g.shape}, param {theta.shape}")
            g = g.astype(theta.dtype, copy=False)
            m = b1 * state.m[name][key] + (1 - b1) * g
            v = b2 * state.v[name][key] + (1 - b2) * g * g
            step = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
            new_params[name][key] = (theta - step).astype(theta.dtype, copy=False)
            new_m[name][key] = m.astype(theta.dtype, copy=False)
            new_v[name][key] = v.astype(theta.dtype, copy=False)
    return new_params, replace(state, m=new_m, v=new_v, t=t)


@dataclass
class GradCheckRow:
    name: str
    checked: int
    max_rel_err: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tolerance: float
    rows: list[GradCheckRow] = field(default_factory=list)
    kink_skips: int = 0

    @property
    def max_rel_err(self) -> float:
        return max((r.max_rel_err for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.failures()

    def failures(self) -> list[GradCheckRow]:
        """Rows over tolerance, plus rows where every probe straddled a kink."""
        return [r for r in self.rows if r.max_rel_err > self.tolerance or r.checked == 0]


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-12)


def _call(closure, params):
    out = closure(params)
    if len(out) == 3:
        return out
    return out[0], out[1], None


def grad_check(closure: Callable, params: ModelParams, tolerance: float = 1e-4,
               eps: float = 1e-5, max_entries: int | None = None,
               rng: SeededRng | None = None) -> GradCheckReport:
    """Compare analytic gradients with central differences, per parameter tensor.

    ``closure(params)`` returns ``(loss, grads)`` or ``(loss, grads, signature)``
    and must be deterministic. The optional signature identifies the active
    piece of a piecewise-linear model (ReLU masks, pool argmaxes); a coordinate
    whose +/-eps probes land on a different piece is not differentiable there,
    so it is skipped (and counted) and, when sampling, replaced by a fresh draw.
    With ``max_entries`` set, that many coordinates per tensor are drawn from
    ``rng`` instead of sweeping every element.
    """
    work = {n: {k: np.array(a, dtype=np.float64) for k, a in p.items()} for n, p in params.items()}
    loss, analytic, base_sig = _call(closure, work)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss {loss} at the base point")
    rng = rng or SeededRng(0, 0x6A5)
    report = GradCheckReport(tolerance)
    for name, layer in work.items():
        for key, theta in layer.items():
            g = analytic.get(name, {}).get(key)
            if g is None:
                g = np.zeros_like(theta)
            flat = theta.reshape(-1)
            gflat = g.reshape(-1)
            if max_entries is None or max_entries >= flat.size:
                order, want = np.arange(flat.size), flat.size
            else:
                order, want = rng.permutation(flat.size), max_entries
            worst = GradCheckRow(f"{name}.{key}", 0, 0.0, (), 0.0, 0.0)
            checked = 0
            for idx in order:
                if checked >= want:
                    break
                orig = flat[idx]
                flat[idx] = orig + eps
                lp, _, sig_p = _call(closure, work)
                flat[idx] = orig - eps
                lm, _, sig_m = _call(closure, work)
                flat[idx] = orig
                if not (math.isfinite(lp) and math.isfinite(lm)):
                    raise NumericError(f"non-finite loss while perturbing {name}.{key}")
                if base_sig is not None and (sig_p != base_sig or sig_m != base_sig):
                    report.kink_skips += 1
                    continue
                checked += 1
                num = (lp - lm) / (2 * eps)
                ana = float(gflat[idx])
                err = relative_error(ana, num)
                if err >= worst.max_rel_err:
                    where = tuple(int(i) for i in np.unravel_index(idx, theta.shape))
                    worst = GradCheckRow(worst.name, 0, err, where, ana, num)
            worst.checked = checked
            report.rows.append(worst)
    return report
