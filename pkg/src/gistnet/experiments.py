"""End-to-end analysis runs on a trained GistNet / fovea-only pair."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

import numpy as np

from .analysis import (EmbeddingSet, blur_sweep, evaluate, linear_probe, nearest_centroid_accuracy,
                       ratio_curve, saliency_map, topk_accuracy, topk_hits, tsne_2d)
from .checkpoint import config_digest, load_checkpoint, save_checkpoint
from .data import BlurSchedule, SceneSet, context_batch, context_object_ratio, fovea_batch, generate_synthetic
from .layers import stack_forward
from .models import FoveaNet, GistNet, build_fovea, build_gistnet
from .svg import heatmap, line_plot, scatter_plot
from .tensor import SeededRng
from .train import predict_logits, train_model

log = logging.getLogger(__name__)

INIT_STREAM = 0x1417
# modules whose code determines trained weights
TRAINING_MODULES = ("tensor", "layers", "optim", "models", "data", "train", "config", "errors")


def build_model(cfg, arch: str | None = None, dtype: str | None = None):
    """Fresh model and He-initialised params for ``arch`` under a RunConfig."""
    arch = arch or cfg.model.arch
    dtype = dtype or cfg.train.dtype
    rng = SeededRng(cfg.train.seed, INIT_STREAM)
    if arch == "gistnet":
        return build_gistnet(cfg.gistnet_config(), rng, dtype)
    return build_fovea(cfg.fovea_config(), rng, dtype)


def model_digest(cfg, arch: str | None = None) -> bytes:
    return config_digest(cfg.model_digest_doc(arch))


def source_digest() -> str:
    """Hash of the training-path sources; cached training results are keyed on it."""
    h = hashlib.sha256()
    for name in TRAINING_MODULES:
        path = Path(__file__).parent / f"{name}.py"
        h.update(name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def context_run_config(fidelity: float, seed: int = 0, epochs: int = 2, n_train: int = 10000,
                       n_test: int = 2000, output_dir: str = "runs/context"):
    """Desk-scale run config for the context-effect experiment at a given fidelity."""
    from .config import RunConfig
    from .data import SyntheticConfig

    cfg = RunConfig(output_dir=output_dir)
    cfg.data.synthetic = SyntheticConfig(fidelity=fidelity, n_train=n_train, n_test=n_test, seed=seed)
    cfg.train.seed = seed
    cfg.train.epochs = epochs
    cfg.validate()
    return cfg


def train_pair(cfg, cache_dir: str | os.PathLike | None = None) -> dict:
    """Generate the synthetic splits and train GistNet and the fovea baseline on them.

    With ``cache_dir`` the final checkpoints and training logs are stored under
    a key derived from the run config (minus ``output_dir``) and the package
    sources, and reused on the next call with the same key.
    """
    train, test = generate_synthetic(cfg.data.synthetic)
    doc = {k: v for k, v in cfg.to_dict().items() if k != "output_dir"}
    key = hashlib.sha256((json.dumps(doc, sort_keys=True, default=str)
                          + source_digest()).encode()).hexdigest()[:16]
    slot = Path(cache_dir) / key if cache_dir is not None else None
    out = {"train": train, "test": test, "cache_key": key}
    for arch in ("gistnet", "fovea"):
        model, params = build_model(cfg, arch)
        digest = model_digest(cfg, arch)
        ckpt = slot / f"{arch}.gstn" if slot else None
        logf = slot / f"{arch}_log.json" if slot else None
        if ckpt is not None and ckpt.is_file() and logf.is_file():
            params, _ = load_checkpoint(ckpt, digest)
            rows = [tuple(r) for r in json.loads(logf.read_text())]
            log.info("%s: reusing cached run %s", arch, slot)
        else:
            params, rows = train_model(model, params, train, cfg.train)
            if slot is not None:
                slot.mkdir(parents=True, exist_ok=True)
                save_checkpoint(params, ckpt, digest)
                logf.write_text(json.dumps(rows))
        out[arch] = (model, params, rows)
    return out


def embedding_sets(gistnet: GistNet, gparams, fovea: FoveaNet, fparams, data: SceneSet,
                   fovea_input: str = "crop", periphery_input: str = "scene", margin: float = 0.0,
                   batch_size: int = 64) -> tuple[EmbeddingSet, EmbeddingSet]:
    """Fovea-baseline fc2 activations and GistNet periphery flatten outputs for ``data``.

    ``fovea_input="crop"`` feeds the baseline its usual object crop, ``"scene"``
    the whole image; ``periphery_input="scene"`` feeds the unmasked scene,
    ``"context"`` the masked context input.
    """
    fside = fovea.cfg.side
    pside = gistnet.resolved.periphery.side
    f_rows, p_rows = [], []
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        if fovea_input == "crop":
            fx = fovea_batch(data, idx, fside, margin)
        else:
            fx = context_batch(data, idx, fside, mask=False)
        _, extras, _ = fovea.forward(fparams, fx)
        f_rows.append(extras["fovea"])
        cx = context_batch(data, idx, pside, mask=(periphery_input == "context"))
        p_emb = _periphery_only(gistnet, gparams, cx)
        p_rows.append(p_emb)
    labels = {"scene_superclass": data.scene_superclasses, "category": data.categories}
    return (EmbeddingSet(np.concatenate(f_rows).astype(np.float64), labels, "fovea"),
            EmbeddingSet(np.concatenate(p_rows).astype(np.float64), labels, "periphery"))


def _periphery_only(model: GistNet, params, cx: np.ndarray) -> np.ndarray:
    emb, _ = stack_forward(model.periphery, params, cx)
    return emb


def run_experiments(gistnet: GistNet, gparams, fovea: FoveaNet, fparams, test: SceneSet, ev,
                    out_dir: Path | None = None, seed: int = 0, margin: float = 0.0) -> dict:
    """Accuracy tables, ratio curve, blur sweep, embeddings (t-SNE + probe) and saliency.

    ``ev`` is an :class:`gistnet.config.EvalSection`. Files are written to
    ``out_dir`` when given; the returned summary holds every headline number.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    names = test.category_names
    labels = test.categories

    g_logits = predict_logits(gistnet, gparams, test, margin)
    f_logits = predict_logits(fovea, fparams, test, margin)
    report = evaluate(g_logits, labels, tuple(ev.ks), ev.k_per_category, names, baseline_logits=f_logits)
    base_acc = topk_accuracy(f_logits, labels, 1)
    summary = {"n_test": len(test), "gistnet_topk": report.topk, "fovea_topk": report.baseline_topk,
               "improved_category_count": report.improved_category_count,
               "num_categories": len(report.per_category)}
    log.info("top-1 gistnet %.4f fovea %.4f", report.topk[1], base_acc)

    ratios = np.array([context_object_ratio(test.sample(i)) for i in range(len(test))])
    rc = ratio_curve(ratios, topk_hits(g_logits, labels, 1), topk_hits(f_logits, labels, 1), ev.ratio_bins)
    summary["ratio_curve"] = {"x": rc.x, "y": rc.y, "n": rc.n}

    schedule = BlurSchedule.linear(gistnet.resolved.periphery.side, ev.blur_levels, ev.blur_step)
    bs = blur_sweep(gistnet, gparams, test, schedule, base_acc, 1, margin)
    summary["blur_sweep"] = {"sigma": bs.x, "accuracy": bs.y, "baseline": base_acc,
                             "unblurred": float(topk_accuracy(g_logits, labels, 1))}
    log.info("blur sweep: sigma0 %.4f max-sigma %.4f", bs.y[0], bs.y[-1])

    probe, tsne = {}, {}
    embs = ()
    if ev.embed_samples > 0:
        sub = test.subset(np.arange(min(ev.embed_samples, len(test))))
        embs = embedding_sets(gistnet, gparams, fovea, fparams, sub, ev.fovea_embedding_input,
                              ev.periphery_embedding_input, margin)
    for emb in embs:
        tr, te = linear_probe(emb, "scene_superclass", ev.probe_train_fraction, SeededRng(seed, 0x9B0))
        probe[emb.source] = {"train": tr, "test": te}
        res = tsne_2d(emb.matrix, ev.tsne_perplexity, ev.tsne_iters, SeededRng(seed, 0x75E))
        nc = nearest_centroid_accuracy(res.embedding, emb.labels["scene_superclass"])
        tsne[emb.source] = {"nearest_centroid_accuracy": nc, "flagged": res.flagged,
                            "kl_increases": res.increases, "final_kl": res.kl[-1] if res.kl else None}
        if out is not None:
            sup = emb.labels["scene_superclass"]
            rows = "\n".join(f"{x!r},{y!r},{int(s)}" for (x, y), s in zip(res.embedding.tolist(), sup))
            (out / f"tsne_{emb.source}.csv").write_text("x,y,scene_superclass\n" + rows + "\n")
            (out / f"tsne_{emb.source}.svg").write_text(
                scatter_plot(res.embedding, sup, f"t-SNE of {emb.source} embeddings"))
    summary["probe"] = probe
    summary["tsne"] = tsne

    sal = {}
    for i in ev.saliency_samples:
        if i >= len(test):
            continue
        idx = np.array([i])
        fx = fovea_batch(test, idx, gistnet.resolved.fovea.side, margin)[0]
        cx = context_batch(test, idx, gistnet.resolved.periphery.side)[0]
        maps = saliency_map(gistnet, gparams, fx, cx, int(labels[i]))
        base = saliency_map(fovea, fparams, fx, None, int(labels[i]))
        sal[i] = {"gistnet_fovea": maps["fovea"], "gistnet_context": maps["context"],
                  "baseline_fovea": base["fovea"]}
    summary["saliency_samples"] = sorted(sal)

    if out is not None:
        (out / "report.json").write_text(report.to_json())
        (out / "per_category.csv").write_text(report.per_category_csv())
        (out / "ratio_curve.csv").write_text(rc.to_csv())
        (out / "ratio_curve.svg").write_text(line_plot({"gain": (rc.x, rc.y)}, "Context gain vs ratio",
                                                      "log10 context/object ratio", "top-1 gain"))
        (out / "blur_sweep.csv").write_text(bs.to_csv())
        (out / "blur_sweep.svg").write_text(line_plot(
            {"gistnet": (bs.x, bs.y), "fovea only": (bs.x, bs.extra["baseline"])},
            "Context blur robustness", "sigma (context pixels)", "top-1 accuracy"))
        (out / "probe.json").write_text(json.dumps(probe, indent=1))
        for i, maps in sal.items():
            for key, m in maps.items():
                (out / f"saliency_{i}_{key}.svg").write_text(heatmap(m, f"sample {i} {key}"))
        (out / "summary.json").write_text(json.dumps(summary, indent=1, default=float))
    return summary
