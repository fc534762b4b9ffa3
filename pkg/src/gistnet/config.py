"""Run configuration: one JSON document plus dotted-path overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .data import SyntheticConfig
from .errors import ConfigError, ParseError
from .models import FoveaConfig, GistNetConfig, desk_config, paper_config
from .optim import PAPER_LEARNING_RATE
from .train import TrainConfig


@dataclass
class ModelSection:
    arch: str = "gistnet"  # "gistnet" or "fovea"
    preset: str = "desk"  # "desk" or "paper"
    scale: float = 1.0


@dataclass
class DataSection:
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    train_manifest: str | None = None
    test_manifest: str | None = None


@dataclass
class EvalSection:
    ks: list[int] = field(default_factory=lambda: [1, 3, 5])
    k_per_category: int = 1
    blur_levels: int = 40
    blur_step: float = 0.25
    ratio_bins: int = 6
    tsne_perplexity: float = 30.0
    tsne_iters: int = 1000
    embed_samples: int = 1000
    probe_train_fraction: float = 0.7
    fovea_embedding_input: str = "crop"  # "crop" or "scene"
    periphery_embedding_input: str = "scene"  # "scene" or "context"
    saliency_samples: list[int] = field(default_factory=lambda: [0, 1, 2, 3])


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def num_classes(self) -> int:
        if self.model.preset == "paper":
            return 80
        if self.data.train_manifest:
            from .data import parse_manifest

            path = Path(self.data.train_manifest)
            if not path.is_file():
                raise ConfigError(f"train manifest {path} does not exist")
            return len(parse_manifest(path.read_text(encoding="utf-8"), str(path)).categories)
        return self.data.synthetic.num_classes

    def gistnet_config(self) -> GistNetConfig:
        k = self.num_classes()
        base = paper_config() if self.model.preset == "paper" else desk_config(k)
        base = replace(base, fovea=replace(base.fovea, num_classes=k), scale=self.model.scale)
        return base.resolved()

    def fovea_config(self) -> FoveaConfig:
        return self.gistnet_config().fovea

    def model_digest_doc(self, arch: str | None = None) -> dict:
        arch = arch or self.model.arch
        cfg = self.gistnet_config()
        body = cfg.to_dict() if arch == "gistnet" else asdict(cfg.fovea)
        return {"arch": arch, "config": body}

    def validate(self) -> None:
        if self.model.arch not in ("gistnet", "fovea"):
            raise ConfigError(f"model.arch must be 'gistnet' or 'fovea', got {self.model.arch!r}")
        if self.model.preset not in ("desk", "paper"):
            raise ConfigError(f"model.preset must be 'desk' or 'paper', got {self.model.preset!r}")
        if self.train.batch_size < 1 or self.train.epochs < 0 or self.train.lr < 0:
            raise ConfigError("train.batch_size >= 1, train.epochs >= 0 and train.lr >= 0 required")
        if self.train.dtype not in ("float32", "float64"):
            raise ConfigError("train.dtype must be float32 or float64")
        if self.eval.fovea_embedding_input not in ("crop", "scene"):
            raise ConfigError("eval.fovea_embedding_input must be 'crop' or 'scene'")
        if self.eval.periphery_embedding_input not in ("scene", "context"):
            raise ConfigError("eval.periphery_embedding_input must be 'scene' or 'context'")
        self.data.synthetic.validate()
        for p in (self.data.train_manifest, self.data.test_manifest):
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"manifest {p} does not exist")
        self.gistnet_config().validate()


def _build(cls, doc, where: str):
    if not is_dataclass(cls):
        return doc
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    nested = {"model": ModelSection, "train": TrainConfig, "data": DataSection,
              "eval": EvalSection, "synthetic": SyntheticConfig}
    for key, val in doc.items():
        sub = nested.get(key)
        kwargs[key] = _build(sub, val, f"{where}.{key}") if sub and isinstance(val, dict) else val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings; values parse as JSON when possible."""
    doc = json.loads(json.dumps(doc))
    for item in overrides:
        item = item[2:] if item.startswith("--") else item
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like path.to.key=value")
        path, value = item.split("=", 1)
        keys = path.split(".")
        node = doc
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {path!r} walks through a non-object")
        node[keys[-1]] = _coerce(value)
    return doc


def load_run_config(path: str | None, overrides: list[str] = (), preset: str | None = None) -> RunConfig:
    """Read the JSON config (if any), apply overrides, validate; train.seed is mandatory."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if preset == "paper":
        doc.setdefault("model", {})["preset"] = "paper"
        doc.setdefault("train", {}).setdefault("lr", PAPER_LEARNING_RATE)
    doc = apply_overrides(doc, list(overrides))
    if "seed" not in doc.get("train", {}):
        raise ConfigError("train.seed is mandatory (set it in the config or pass --train.seed=N)")
    cfg = _build(RunConfig, doc, "config")
    cfg.validate()
    return cfg


def default_config_doc(output_dir: str = "runs/desk", seed: int = 0) -> dict:
    cfg = RunConfig(output_dir=output_dir)
    cfg.train.seed = seed
    return cfg.to_dict()
