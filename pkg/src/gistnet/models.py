"""Fovea (VGG-style), periphery (strided, pool-free) and fused GistNet models.

Layer names are stable and double as checkpoint keys:

* ``fovea.conv{block}_{i}``, ``fovea.pool{block}``, ``fovea.flatten``,
  ``fovea.fc1``, ``fovea.fc2``, ``fovea.classifier`` (standalone fovea only)
* ``periphery.conv1`` ... ``periphery.conv8``, ``periphery.flatten``
* ``fusion.dense``
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import (Conv2D, Dense, Flatten, MaxPool2, ReLU, concat2, concat2_backward,
                     dense_backward, dense_forward, init_params, softmax_xent,
                     softmax_xent_backward, stack_backward, stack_forward)
from .optim import ModelParams
from .tensor import SeededRng

POOL = "P"
VGG16_PLAN = (64, 64, POOL, 128, 128, POOL, 256, 256, 256, POOL,
              512, 512, 512, POOL, 512, 512, 512, POOL)
PERIPHERY_KERNELS = (5, 5, 5, 5, 5, 3, 3, 3)
PERIPHERY_STRIDES = (2, 2, 2, 2, 2, 2, 1, 1)
PERIPHERY_DOWNSAMPLE = 2 ** PERIPHERY_STRIDES.count(2)


@dataclass(frozen=True)
class FoveaConfig:
    side: int = 224
    conv_plan: tuple = VGG16_PLAN
    fc1: int = 4096
    fc2: int = 1024
    num_classes: int = 80
    channels: int = 3

    @property
    def pools(self) -> int:
        return sum(1 for c in self.conv_plan if c == POOL)

    @property
    def grid(self) -> int:
        return self.side // 2 ** self.pools

    @property
    def flatten_len(self) -> int:
        last = [c for c in self.conv_plan if c != POOL][-1]
        return self.grid * self.grid * last

    def validate(self) -> None:
        if not any(c != POOL for c in self.conv_plan):
            raise ConfigError("fovea conv plan needs at least one conv layer")
        if self.side % 2 ** self.pools or self.side < 2 ** self.pools:
            raise ConfigError(f"fovea side {self.side} not divisible by 2^{self.pools}")
        if min(self.fc1, self.fc2, self.num_classes, self.channels) < 1:
            raise ConfigError("fovea sizes must be positive")


@dataclass(frozen=True)
class PeripheryConfig:
    side: int = 448
    conv_channels: tuple = (32, 128, 128, 256, 256, 256, 256, 256)
    kernels: tuple = PERIPHERY_KERNELS
    strides: tuple = PERIPHERY_STRIDES
    channels: int = 3

    @property
    def grid(self) -> int:
        return self.side // PERIPHERY_DOWNSAMPLE

    @property
    def flatten_len(self) -> int:
        return self.grid * self.grid * self.conv_channels[-1]

    def validate(self) -> None:
        if len(self.conv_channels) != 8:
            raise ConfigError("periphery has exactly 8 conv layers")
        if tuple(self.kernels) != PERIPHERY_KERNELS or tuple(self.strides) != PERIPHERY_STRIDES:
            raise ConfigError("periphery kernel/stride plan must be 5x5 x5, 3x3 x3; stride 2 x6, 1 x2")
        if self.side % PERIPHERY_DOWNSAMPLE or self.side < PERIPHERY_DOWNSAMPLE:
            raise ConfigError(f"periphery side {self.side} not divisible by {PERIPHERY_DOWNSAMPLE}")
        if min(self.conv_channels) < 1 or self.channels < 1:
            raise ConfigError("periphery widths must be positive")


def _scale_int(v: int, f: float) -> int:
    return max(1, int(round(v * f)))


def _scale_side(side: int, f: float, unit: int) -> int:
    return max(unit, int(round(side * f / unit)) * unit)


@dataclass(frozen=True)
class GistNetConfig:
    fovea: FoveaConfig = field(default_factory=FoveaConfig)
    periphery: PeripheryConfig = field(default_factory=PeripheryConfig)
    scale: float = 1.0

    def resolved(self) -> "GistNetConfig":
        """Apply ``scale`` to widths, fc sizes and input sides; topology is kept."""
        f = self.scale
        if f <= 0:
            raise ConfigError("scale must be positive")
        if f == 1.0:
            return self
        fov = self.fovea
        plan = tuple(c if c == POOL else _scale_int(c, f) for c in fov.conv_plan)
        fov = replace(fov, conv_plan=plan, fc1=_scale_int(fov.fc1, f), fc2=_scale_int(fov.fc2, f),
                      side=_scale_side(fov.side, f, 2 ** fov.pools))
        per = self.periphery
        per = replace(per, conv_channels=tuple(_scale_int(c, f) for c in per.conv_channels),
                      side=_scale_side(per.side, f, PERIPHERY_DOWNSAMPLE))
        return GistNetConfig(fov, per, 1.0)

    def validate(self) -> None:
        r = self.resolved()
        r.fovea.validate()
        r.periphery.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GistNetConfig":
        fov = dict(d.get("fovea", {}))
        if "conv_plan" in fov:
            fov["conv_plan"] = tuple(fov["conv_plan"])
        per = dict(d.get("periphery", {}))
        for key in ("conv_channels", "kernels", "strides"):
            if key in per:
                per[key] = tuple(per[key])
        return cls(FoveaConfig(**fov), PeripheryConfig(**per), float(d.get("scale", 1.0)))


def paper_config() -> GistNetConfig:
    """Full-scale 224/448 configuration (shape and parameter accounting only)."""
    return GistNetConfig(FoveaConfig(), PeripheryConfig(), 1.0)


def desk_config(num_classes: int = 8) -> GistNetConfig:
    """CPU-trainable variant with the same kernel, stride and fusion topology."""
    fovea = FoveaConfig(side=64, conv_plan=(16, 16, POOL, 32, 32, POOL, 64, 64, POOL),
                        fc1=256, fc2=64, num_classes=num_classes)
    periphery = PeripheryConfig(side=128, conv_channels=(8, 16, 16, 32, 32, 32, 32, 32))
    return GistNetConfig(fovea, periphery, 1.0)


# --- structures ---------------------------------------------------------------

def _fovea_trunk(cfg: FoveaConfig):
    layers = []
    ch, block, idx = cfg.channels, 1, 1
    for item in cfg.conv_plan:
        if item == POOL:
            layers.append((f"fovea.pool{block}", MaxPool2()))
            block, idx = block + 1, 1
            continue
        name = f"fovea.conv{block}_{idx}"
        layers += [(name, Conv2D(ch, int(item), 3, 1)), (name + ".relu", ReLU())]
        ch, idx = int(item), idx + 1
    layers += [
        ("fovea.flatten", Flatten()),
        ("fovea.fc1", Dense(cfg.flatten_len, cfg.fc1)), ("fovea.fc1.relu", ReLU()),
        ("fovea.fc2", Dense(cfg.fc1, cfg.fc2)), ("fovea.fc2.relu", ReLU()),
    ]
    return layers


def _periphery_stack(cfg: PeripheryConfig):
    layers, ch = [], cfg.channels
    for i, (out, k, s) in enumerate(zip(cfg.conv_channels, cfg.kernels, cfg.strides), start=1):
        layers += [(f"periphery.conv{i}", Conv2D(ch, int(out), int(k), int(s))),
                   (f"periphery.conv{i}.relu", ReLU())]
        ch = int(out)
    layers.append(("periphery.flatten", Flatten()))
    return layers


def _param_shapes(layers) -> dict[str, dict[str, tuple]]:
    return {name: spec.param_shapes() for name, spec in layers if spec.param_shapes()}


def _init(layers, rng: SeededRng, dtype) -> ModelParams:
    params = {}
    for idx, (name, spec) in enumerate(layers):
        if spec.param_shapes():
            params[name] = init_params(spec, rng.spawn(idx), dtype)
    return params


def _batch(x: np.ndarray, side: int, channels: int) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        x = x[None]
        single = True
    elif x.ndim == 4:
        single = False
    else:
        raise ShapeError(f"image must be [C,H,W] or [N,C,H,W], got {x.shape}")
    if x.shape[1:] != (channels, side, side):
        raise ShapeError(f"expected image {(channels, side, side)}, got {x.shape[1:]}")
    return x, single


@dataclass
class FoveaNet:
    """Standalone VGG-style baseline: trunk through fc2, then its own classifier."""

    cfg: FoveaConfig

    def __post_init__(self):
        self.cfg.validate()
        self.trunk = _fovea_trunk(self.cfg)
        self.classifier = ("fovea.classifier", Dense(self.cfg.fc2, self.cfg.num_classes))

    @property
    def layers(self):
        return self.trunk + [self.classifier]

    @property
    def num_classes(self) -> int:
        return self.cfg.num_classes

    def param_shapes(self):
        return _param_shapes(self.layers)

    def forward(self, params: ModelParams, fovea_x: np.ndarray, context_x=None):
        xb, single = _batch(fovea_x, self.cfg.side, self.cfg.channels)
        emb, caches = stack_forward(self.trunk, params, xb)
        name, spec = self.classifier
        logits, ccache = dense_forward(spec, params[name], emb)
        state = {"trunk": caches, "classifier": ccache}
        extras = {"fovea": emb, "periphery": None}
        if single:
            return logits[0], {k: (v[0] if v is not None else None) for k, v in extras.items()}, state
        return logits, extras, state

    def backward(self, params: ModelParams, state, dlogits: np.ndarray, need_input_grad=False):
        if dlogits.ndim == 1:
            dlogits = dlogits[None]
        name, spec = self.classifier
        demb, g = dense_backward(spec, params[name], state["classifier"], dlogits)
        dx, grads = stack_backward(self.trunk, params, state["trunk"], demb, need_input_grad)
        grads[name] = g
        return grads, {"fovea": dx, "context": None}


@dataclass
class GistNet:
    """Fovea trunk (through fc2+ReLU) and periphery flatten, concatenated, then one dense layer."""

    cfg: GistNetConfig

    def __post_init__(self):
        self.cfg.validate()
        self.resolved = self.cfg.resolved()
        fov, per = self.resolved.fovea, self.resolved.periphery
        self.trunk = _fovea_trunk(fov)
        self.periphery = _periphery_stack(per)
        self.fusion = ("fusion.dense", Dense(per.flatten_len + fov.fc2, fov.num_classes))

    @property
    def layers(self):
        return self.trunk + self.periphery + [self.fusion]

    @property
    def num_classes(self) -> int:
        return self.resolved.fovea.num_classes

    @property
    def fusion_input(self) -> int:
        return self.fusion[1].in_features

    def param_shapes(self):
        return _param_shapes(self.layers)

    def forward(self, params: ModelParams, fovea_x: np.ndarray, context_x: np.ndarray):
        fov, per = self.resolved.fovea, self.resolved.periphery
        fb, single = _batch(fovea_x, fov.side, fov.channels)
        cb, csingle = _batch(context_x, per.side, per.channels)
        if fb.shape[0] != cb.shape[0]:
            raise ShapeError("fovea and context batch sizes differ")
        f_emb, f_caches = stack_forward(self.trunk, params, fb)
        p_emb, p_caches = stack_forward(self.periphery, params, cb)
        # periphery first so the fused vector reads [context | object]
        fused, cat_cache = concat2(p_emb, f_emb)
        name, spec = self.fusion
        logits, d_cache = dense_forward(spec, params[name], fused)
        state = {"trunk": f_caches, "periphery": p_caches, "concat": cat_cache, "fusion": d_cache}
        extras = {"fovea": f_emb, "periphery": p_emb}
        if single:
            return logits[0], {k: v[0] for k, v in extras.items()}, state
        return logits, extras, state

    def backward(self, params: ModelParams, state, dlogits: np.ndarray, need_input_grad=False):
        if dlogits.ndim == 1:
            dlogits = dlogits[None]
        name, spec = self.fusion
        dfused, g = dense_backward(spec, params[name], state["fusion"], dlogits)
        dp, df = concat2_backward(state["concat"], dfused)
        dfx, grads = stack_backward(self.trunk, params, state["trunk"], df, need_input_grad)
        dcx, pgrads = stack_backward(self.periphery, params, state["periphery"], dp, need_input_grad)
        grads.update(pgrads)
        grads[name] = g
        return grads, {"fovea": dfx, "context": dcx}


def build_fovea(cfg: FoveaConfig, rng: SeededRng, dtype="float32"):
    model = FoveaNet(cfg)
    return model, _init(model.layers, rng, dtype)


def build_periphery(cfg: PeripheryConfig, rng: SeededRng, dtype="float32"):
    """Periphery stack alone: 8 conv+ReLU layers then flatten."""
    cfg.validate()
    layers = _periphery_stack(cfg)
    return layers, _init(layers, rng, dtype)


def build_gistnet(cfg: GistNetConfig, rng: SeededRng, dtype="float32"):
    model = GistNet(cfg)
    return model, _init(model.layers, rng, dtype)


def count_params(params) -> tuple[int, dict[str, int]]:
    """Total and per-layer element counts; accepts arrays or bare shapes."""
    table = {}
    for name, layer in params.items():
        table[name] = sum(math.prod(getattr(v, "shape", v)) for v in layer.values())
    return sum(table.values()), table


def forward_fovea(model: FoveaNet, params: ModelParams, image: np.ndarray):
    """Class logits and the post-ReLU fc2 embedding."""
    logits, extras, _ = model.forward(params, image)
    return logits, extras["fovea"]


def forward_gistnet(model: GistNet, params: ModelParams, fovea_image: np.ndarray,
                    context_image: np.ndarray):
    """Class logits and the periphery flatten embedding."""
    logits, extras, _ = model.forward(params, fovea_image, context_image)
    return logits, extras["periphery"]


def loss_and_grads(model, params: ModelParams, fovea_x, context_x, labels):
    logits, _, state = model.forward(params, fovea_x, context_x)
    loss, xcache = softmax_xent(logits, labels)
    grads, _ = model.backward(params, state, softmax_xent_backward(xcache))
    return loss, grads, logits


def predict(model, params: ModelParams, fovea_x, context_x=None) -> np.ndarray:
    logits, _, _ = model.forward(params, fovea_x, context_x)
    return logits


def activation_signature(state) -> str:
    """Digest of every ReLU mask and pool argmax recorded in a forward state."""
    h = hashlib.sha1()

    def walk(obj):
        if isinstance(obj, dict):
            if "mask" in obj:
                h.update(np.packbits(obj["mask"]).tobytes())
            if "arg" in obj:
                h.update(obj["arg"].astype(np.int8).tobytes())
            for key in sorted(k for k in obj if isinstance(obj[k], (dict, list))):
                walk(obj[key])
        elif isinstance(obj, list):
            for item in obj:
                walk(item)

    walk(state)
    return h.hexdigest()
