"""``gistnet`` command line: gen-data, train, eval, experiments, gradcheck.

Every command reads one JSON config (``--config``), applies overrides such as
``--train.seed=7`` or ``--output_dir=runs/x`` and writes only below ``output_dir``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .data import load_scene_set, write_synthetic
from .errors import ArgumentError, GistNetError, NumericError
from .experiments import build_model, model_digest, run_experiments
from .gradcheck import reports_to_json, run_gradcheck
from .train import predict_logits, train_model

log = logging.getLogger("gistnet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


def split_path(cfg: RunConfig, split: str) -> Path:
    explicit = cfg.data.train_manifest if split == "train" else cfg.data.test_manifest
    if explicit:
        return Path(explicit)
    return cfg.out / "data" / split / "manifest.json"


def load_split(cfg: RunConfig, split: str):
    path = split_path(cfg, split)
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found (run `gistnet gen-data` first or set data.{split}_manifest)")
    return load_scene_set(path)


def load_model(cfg: RunConfig, arch: str, path: Path, force: bool = False):
    if not path.is_file():
        raise ArgumentError(f"checkpoint {path} does not exist")
    model, _ = build_model(cfg, arch)
    params, _ = load_checkpoint(path, model_digest(cfg, arch), force)
    return model, params


def cmd_gen_data(cfg: RunConfig, args) -> int:
    out = cfg.out / "data"
    report = write_synthetic(cfg.data.synthetic, out)
    log.info("wrote %d train / %d test scenes to %s", report["counts"]["train"], report["counts"]["test"], out)
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    arch = cfg.model.arch
    if cfg.model.preset == "paper":
        warnings.warn("preset=paper is meant for shape and parameter checks; training it is not desk-feasible")
    data = load_split(cfg, "train")
    model, params = build_model(cfg, arch)
    digest = model_digest(cfg, arch)
    ckpt_dir = cfg.out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    def on_checkpoint(it, p):
        save_checkpoint(p, ckpt_dir / f"{arch}_iter{it:07d}.gstn", digest)

    params, rows = train_model(model, params, data, cfg.train, on_checkpoint)
    save_checkpoint(params, ckpt_dir / f"{arch}.gstn", digest)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "epoch", "loss", "batch_accuracy"])
    for it, epoch, loss, acc in rows:
        w.writerow([it, epoch, repr(float(loss)), repr(float(acc))])
    (cfg.out / f"{arch}_train_log.csv").write_text(buf.getvalue())
    if rows:
        log.info("final loss %.6f after %d iterations", rows[-1][2], rows[-1][0])
    return 0


def _default_ckpt(cfg: RunConfig, arch: str) -> Path:
    return cfg.out / "checkpoints" / f"{arch}.gstn"


def cmd_eval(cfg: RunConfig, args) -> int:
    from .analysis import evaluate

    arch = cfg.model.arch
    model, params = load_model(cfg, arch, Path(args.checkpoint or _default_ckpt(cfg, arch)), args.force)
    data = load_split(cfg, args.split)
    logits = predict_logits(model, params, data, cfg.train.margin)
    base_logits = None
    if args.baseline:
        base, bparams = load_model(cfg, "fovea", Path(args.baseline), args.force)
        base_logits = predict_logits(base, bparams, data, cfg.train.margin)
    report = evaluate(logits, data.categories, tuple(cfg.eval.ks), cfg.eval.k_per_category,
                      data.category_names, base_logits)
    out = cfg.out / "eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{arch}_report.json").write_text(report.to_json())
    (out / f"{arch}_per_category.csv").write_text(report.per_category_csv())
    log.info("top-k %s", report.topk)
    return 0


def cmd_experiments(cfg: RunConfig, args) -> int:
    gistnet, gparams = load_model(cfg, "gistnet", Path(args.gistnet or _default_ckpt(cfg, "gistnet")), args.force)
    fovea, fparams = load_model(cfg, "fovea", Path(args.fovea or _default_ckpt(cfg, "fovea")), args.force)
    test = load_split(cfg, "test")
    summary = run_experiments(gistnet, gparams, fovea, fparams, test, cfg.eval, cfg.out / "experiments",
                              cfg.train.seed, cfg.train.margin)
    log.info("probe %s", summary["probe"])
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    reports = run_gradcheck(cfg.train.seed, args.tolerance, args.max_entries or None)
    doc = reports_to_json(reports)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "gradcheck.json").write_text(json.dumps(doc, indent=1))
    for name, rep in reports.items():
        log.info("%-20s max rel err %.3e %s", name, rep.max_rel_err, "ok" if rep.passed else "FAIL")
    if not doc["passed"]:
        bad = [f"{name}:{row.name}" for name, rep in reports.items() for row in rep.failures()]
        raise NumericError("gradient check failed for " + ", ".join(bad))
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "experiments": cmd_experiments, "gradcheck": cmd_gradcheck}


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gistnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="run config JSON")
        s.add_argument("--preset", choices=["desk", "paper"], default=None)
        if name == "eval":
            s.add_argument("--checkpoint")
            s.add_argument("--baseline", help="fovea-only checkpoint for per-category deltas")
            s.add_argument("--split", choices=["train", "test"], default="test")
        if name == "experiments":
            s.add_argument("--gistnet")
            s.add_argument("--fovea")
        if name in ("eval", "experiments"):
            s.add_argument("--force", action="store_true", help="accept a config digest mismatch")
        if name == "gradcheck":
            s.add_argument("--tolerance", type=float, default=1e-4)
            s.add_argument("--max-entries", type=int, default=8,
                           help="sampled coordinates per tensor of the fused model (0 = all)")
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args, extra = make_parser().parse_known_args(argv)
        # --section.key=value and top-level --output_dir=path; unknown keys fail in config validation
        overrides = [e for e in extra if e.startswith("--") and "=" in e]
        rest = [e for e in extra if e not in overrides]
        if rest:
            raise ArgumentError(f"unrecognised arguments: {' '.join(rest)}")
        cfg = load_run_config(args.config, overrides, args.preset)
        return COMMANDS[args.command](cfg, args)
    except GistNetError as exc:
        print(f"gistnet: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"gistnet: I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
