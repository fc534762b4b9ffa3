"""Evaluation metrics and the analysis suite run on trained models.

Top-k accuracy, Wilson intervals per category, context/object ratio curves,
the context-blur sweep, input-gradient saliency, exact t-SNE and a
logistic-regression probe on frozen embeddings.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import BlurSchedule, SceneSet, blur_context, context_batch, fovea_batch, scaled_boxes
from .errors import ArgumentError, ShapeError
from .layers import Dense, concat2, dense_backward, dense_forward, softmax_xent, softmax_xent_backward, stack_forward
from .models import GistNet
from .optim import adam_init, adam_step
from .tensor import SeededRng, topk_matrix
from .train import predict_logits

# --- accuracy -------------------------------------------------------------------


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ArgumentError(f"{logits.shape[0] if logits.ndim == 2 else '?'} logit rows vs {labels.shape[0]} labels")
    if len(labels) == 0:
        return np.zeros(0, dtype=bool)
    top = topk_matrix(logits, k)
    return (top == labels[:, None]).any(axis=1)


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose label is among the k largest logits (low index wins ties)."""
    hits = topk_hits(logits, labels, k)
    return float(hits.mean()) if hits.size else 0.0


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n < 1:
        raise ArgumentError("Wilson interval needs n >= 1")
    p = successes / n
    z2 = z * z
    denom = 1 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    # clamp rounding spill so the interval always brackets p-hat
    return max(0.0, min(centre - half, p)), min(1.0, max(centre + half, p))


@dataclass
class CategoryRow:
    category: int
    name: str
    n: int
    accuracy: float
    ci_low: float
    ci_high: float
    baseline_accuracy: float | None = None

    @property
    def delta(self) -> float | None:
        return None if self.baseline_accuracy is None else self.accuracy - self.baseline_accuracy


def per_category_ci(logits: np.ndarray, labels: np.ndarray, k: int = 1, z: float = 1.96,
                    names: list[str] | None = None, num_classes: int | None = None):
    """Per-category top-k accuracy with Wilson intervals.

    Returns ``(rows, empty)`` where ``empty`` lists categories with no samples
    (left out of the table).
    """
    hits = topk_hits(logits, labels, k)
    K = num_classes or logits.shape[1]
    rows, empty = [], []
    for c in range(K):
        sel = labels == c
        n = int(sel.sum())
        if n == 0:
            empty.append(c)
            continue
        correct = int(hits[sel].sum())
        lo, hi = wilson_interval(correct, n, z)
        rows.append(CategoryRow(c, names[c] if names else str(c), n, correct / n, lo, hi))
    return rows, empty


@dataclass
class EvalReport:
    n: int
    topk: dict[int, float]
    per_category: list[CategoryRow]
    empty_categories: list[int] = field(default_factory=list)
    k_per_category: int = 1
    improved_category_count: int | None = None
    baseline_topk: dict[int, float] | None = None

    def to_json(self) -> str:
        doc = {"n": self.n, "topk": {str(k): v for k, v in self.topk.items()},
               "k_per_category": self.k_per_category,
               "per_category": [asdict(r) | {"delta": r.delta} for r in self.per_category],
               "empty_categories": self.empty_categories,
               "improved_category_count": self.improved_category_count}
        if self.baseline_topk is not None:
            doc["baseline_topk"] = {str(k): v for k, v in self.baseline_topk.items()}
        return json.dumps(doc, indent=1)

    def per_category_csv(self) -> str:
        """Columns: category,name,n,accuracy,ci_low,ci_high[,baseline_accuracy,delta]."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        paired = self.baseline_topk is not None
        head = ["category", "name", "n", "accuracy", "ci_low", "ci_high"]
        w.writerow(head + (["baseline_accuracy", "delta"] if paired else []))
        for r in self.per_category:
            row = [r.category, r.name, r.n, f"{r.accuracy:.6f}", f"{r.ci_low:.6f}", f"{r.ci_high:.6f}"]
            if paired:
                row += [f"{r.baseline_accuracy:.6f}", f"{r.delta:.6f}"]
            w.writerow(row)
        return buf.getvalue()


def evaluate(logits: np.ndarray, labels: np.ndarray, ks=(1, 3, 5), k_per_category: int = 1,
             names=None, baseline_logits: np.ndarray | None = None, z: float = 1.96) -> EvalReport:
    K = logits.shape[1]
    topk = {k: topk_accuracy(logits, labels, k) for k in ks if k <= K}
    rows, empty = per_category_ci(logits, labels, k_per_category, z, names, K)
    report = EvalReport(len(labels), topk, rows, empty, k_per_category)
    if baseline_logits is not None:
        base_rows, _ = per_category_ci(baseline_logits, labels, k_per_category, z, names, K)
        base = {r.category: r.accuracy for r in base_rows}
        for r in rows:
            r.baseline_accuracy = base[r.category]
        report.improved_category_count = sum(1 for r in rows if r.delta > 0)
        report.baseline_topk = {k: topk_accuracy(baseline_logits, labels, k) for k in topk}
    return report


# --- curves ---------------------------------------------------------------------


@dataclass
class CurveSeries:
    x: list[float]
    y: list[float]
    n: list[int]
    x_label: str
    y_label: str
    extra: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.x, self.x[1:])):
            raise ArgumentError("curve x values must be strictly increasing")

    def __len__(self) -> int:
        return len(self.x)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "n"] + list(self.extra))
        for i in range(len(self.x)):
            w.writerow([repr(float(self.x[i])), repr(float(self.y[i])), int(self.n[i])]
                       + [repr(float(v[i])) for v in self.extra.values()])
        return buf.getvalue()


RATIO_FLOOR = 1e-3


def ratio_curve(ratios: np.ndarray, hits_context: np.ndarray, hits_minimal: np.ndarray,
                num_bins: int = 6, min_count: int = 10) -> CurveSeries:
    """Accuracy gain from context, binned by log10 of the context/object ratio.

    Equal-width bins span [min, max] of log10(r) (r floored at 1e-3). Bins
    holding fewer than ``min_count`` samples are merged into their smaller
    neighbour until none remain or a single bin is left.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    hc = np.asarray(hits_context, dtype=np.float64)
    hm = np.asarray(hits_minimal, dtype=np.float64)
    if not (len(ratios) == len(hc) == len(hm)) or len(ratios) == 0:
        raise ArgumentError("ratio_curve needs equal-length, non-empty inputs")
    logr = np.log10(np.maximum(ratios, RATIO_FLOOR))
    lo, hi = float(logr.min()), float(logr.max())
    if hi - lo <= 0:
        return CurveSeries([lo], [float(hc.mean() - hm.mean())], [len(logr)], "log10_ratio",
                           "accuracy_gain", {"lo": [lo], "hi": [hi]})
    edges = list(np.linspace(lo, hi, num_bins + 1))
    which = np.minimum(((logr - lo) / (hi - lo) * num_bins).astype(np.int64), num_bins - 1)
    groups = [[b] for b in range(num_bins)]
    counts = [int((which == b).sum()) for b in range(num_bins)]
    while len(groups) > 1:
        small = [i for i, c in enumerate(counts) if c < min_count]
        if not small:
            break
        i = small[0]
        if i == 0:
            j = 1
        elif i == len(groups) - 1:
            j = i - 1
        else:
            j = i - 1 if counts[i - 1] <= counts[i + 1] else i + 1
        a, b = min(i, j), max(i, j)
        groups[a:b + 1] = [groups[a] + groups[b]]
        counts[a:b + 1] = [counts[a] + counts[b]]
    xs, ys, ns, los, his = [], [], [], [], []
    for g in groups:
        sel = np.isin(which, g)
        e0, e1 = edges[min(g)], edges[max(g) + 1]
        xs.append((e0 + e1) / 2)
        los.append(e0)
        his.append(e1)
        ns.append(int(sel.sum()))
        ys.append(float(hc[sel].mean() - hm[sel].mean()) if sel.any() else 0.0)
    return CurveSeries(xs, ys, ns, "log10_ratio", "accuracy_gain", {"lo": los, "hi": his})


def _fusion_logits(model: GistNet, params, fovea_emb: np.ndarray, cx: np.ndarray) -> np.ndarray:
    p_emb, _ = stack_forward(model.periphery, params, cx)
    fused, _ = concat2(p_emb, fovea_emb)
    name, spec = model.fusion
    logits, _ = dense_forward(spec, params[name], fused)
    return logits


def blur_sweep(model: GistNet, params, data: SceneSet, schedule: BlurSchedule,
               baseline_accuracy: float, k: int = 1, margin: float = 0.0,
               batch_size: int = 64) -> CurveSeries:
    """GistNet top-k accuracy with every context input blurred at each sigma.

    Fovea inputs are untouched, so fovea embeddings are computed once per batch
    and only the periphery is re-run. Batching matches :func:`predict_logits`.
    """
    fside, cside = model.resolved.fovea.side, model.resolved.periphery.side
    batches = [np.arange(s, min(s + batch_size, len(data))) for s in range(0, len(data), batch_size)]
    fovea_embs = []
    for idx in batches:
        fx = fovea_batch(data, idx, fside, margin)
        emb, _ = stack_forward(model.trunk, params, fx)
        fovea_embs.append(emb)
    ys = []
    for sigma in schedule.levels:
        hits = []
        for idx, femb in zip(batches, fovea_embs):
            cx = context_batch(data, idx, cside)
            if sigma > 0:
                cx = blur_context(cx, scaled_boxes(data, idx, cside), sigma)
            logits = _fusion_logits(model, params, femb, cx)
            hits.append(topk_hits(logits, data.categories[idx], k))
        ys.append(float(np.concatenate(hits).mean()))
    n = [len(data)] * len(ys)
    return CurveSeries(list(schedule.levels), ys, n, "sigma", f"top{k}_accuracy",
                       {"baseline": [baseline_accuracy] * len(ys)})


# --- saliency -------------------------------------------------------------------


def normalize_saliency(grad: np.ndarray) -> np.ndarray:
    """max |grad| over channels, then min-max to [0, 1]; constant maps become zeros."""
    m = np.abs(grad).max(axis=0)
    lo, hi = m.min(), m.max()
    if hi - lo <= 0:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def saliency_map(model, params, fovea_x: np.ndarray, context_x: np.ndarray | None, target: int):
    """Input-gradient saliency of the target logit, one [H,W] map per input stream."""
    logits, _, state = model.forward(params, fovea_x[None],
                                     None if context_x is None else context_x[None])
    d = np.zeros_like(logits)
    d[0, target] = 1
    _, dx = model.backward(params, state, d, need_input_grad=True)
    return {stream: normalize_saliency(g[0]) for stream, g in dx.items() if g is not None}


# --- t-SNE ----------------------------------------------------------------------


def _sq_dists(X: np.ndarray) -> np.ndarray:
    s = (X * X).sum(axis=1)
    d = s[:, None] + s[None, :] - 2 * X @ X.T
    np.fill_diagonal(d, 0)
    return np.maximum(d, 0)


def conditional_probabilities(X: np.ndarray, perplexity: float, tol: float = 1e-3,
                              max_iter: int = 200):
    """Row-wise Gaussian affinities calibrated so 2^H(P_i) matches ``perplexity``.

    Bisection on the precision beta_i stops when |2^H - perplexity| <=
    tol * perplexity or after ``max_iter`` steps. Returns ``(P, achieved)``.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    D = _sq_dists(X)
    P = np.zeros((n, n))
    achieved = np.zeros(n)
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            w = np.exp(-d * beta)
            p = w / w.sum()
            nz = p > 0
            H = -np.sum(p[nz] * np.log2(p[nz]))
            perp = 2.0 ** H
            if abs(perp - perplexity) <= tol * perplexity:
                break
            if perp > perplexity:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = (beta + lo) / 2
        achieved[i] = perp
        P[i, np.arange(n) != i] = p
    return P, achieved


def joint_probabilities(X: np.ndarray, perplexity: float) -> np.ndarray:
    P, _ = conditional_probabilities(X, perplexity)
    P = (P + P.T) / (2 * P.shape[0])
    return np.maximum(P, 1e-12)


def kl_divergence(P: np.ndarray, Y: np.ndarray) -> float:
    num = 1.0 / (1.0 + _sq_dists(Y))
    np.fill_diagonal(num, 0)
    Q = np.maximum(num / num.sum(), 1e-12)
    mask = ~np.eye(P.shape[0], dtype=bool)
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl: list[float]  # per iteration after the exaggeration phase
    achieved_perplexity: np.ndarray
    increases: int
    flagged: bool


def tsne_2d(X: np.ndarray, perplexity: float = 30.0, iters: int = 1000, rng: SeededRng | None = None,
            learning_rate: float = 200.0, exaggeration: float = 12.0, exaggeration_iters: int = 250,
            momentum: tuple[float, float] = (0.5, 0.8), kl_tol: float = 1e-6) -> TsneResult:
    """Exact t-SNE to two dimensions with momentum gradient descent.

    KL(P||Q) is tracked every iteration after the exaggeration phase; the run is
    flagged when it rises by more than ``kl_tol`` on over 1% of those steps.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n > 5000:
        raise ArgumentError("exact t-SNE is limited to n <= 5000")
    if not 5 <= perplexity <= (n - 1) / 3:
        raise ArgumentError(f"perplexity {perplexity} outside [5, (n-1)/3] for n={n}")
    rng = rng or SeededRng(0, 0x75E)
    Pc, achieved = conditional_probabilities(X, perplexity)
    P = np.maximum((Pc + Pc.T) / (2 * n), 1e-12)
    Y = 1e-4 * rng.normal(n * 2).reshape(n, 2)
    update = np.zeros_like(Y)
    kl = []
    for it in range(iters):
        exag = exaggeration if it < exaggeration_iters else 1.0
        mom = momentum[0] if it < exaggeration_iters else momentum[1]
        num = 1.0 / (1.0 + _sq_dists(Y))
        np.fill_diagonal(num, 0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (exag * P - Q) * num
        grad = 4 * (W.sum(axis=1)[:, None] * Y - W @ Y)
        update = mom * update - learning_rate * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        if it >= exaggeration_iters:
            kl.append(kl_divergence(P, Y))
    increases = sum(1 for a, b in zip(kl, kl[1:]) if b > a + kl_tol)
    flagged = len(kl) > 1 and increases > 0.01 * (len(kl) - 1)
    return TsneResult(Y, kl, achieved, increases, flagged)


def nearest_centroid_accuracy(Y: np.ndarray, labels: np.ndarray) -> float:
    classes = np.unique(labels)
    cents = np.stack([Y[labels == c].mean(axis=0) for c in classes])
    d = ((Y[:, None, :] - cents[None]) ** 2).sum(axis=2)
    return float(np.mean(classes[d.argmin(axis=1)] == labels))


# --- linear probe ---------------------------------------------------------------


@dataclass
class EmbeddingSet:
    matrix: np.ndarray  # [n, d]
    labels: dict[str, np.ndarray]  # e.g. "scene_superclass", "category"
    source: str  # "fovea" | "periphery"

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ShapeError("embedding matrix must be [n, d]")
        if not np.all(np.isfinite(self.matrix)):
            raise ArgumentError("embeddings must be finite")
        for name, lab in self.labels.items():
            if len(lab) != self.matrix.shape[0]:
                raise ShapeError(f"label field {name!r} has {len(lab)} entries for {self.matrix.shape[0]} rows")


def linear_probe(emb: EmbeddingSet, label_field: str, train_fraction: float = 0.7,
                 rng: SeededRng | None = None, epochs: int = 500, lr: float = 0.01) -> tuple[float, float]:
    """Multinomial logistic regression on standardized embeddings; (train acc, test acc)."""
    X = np.asarray(emb.matrix, dtype=np.float64)
    raw = np.asarray(emb.labels[label_field])
    classes, y = np.unique(raw, return_inverse=True)
    n = X.shape[0]
    if len(classes) < 2:
        raise ArgumentError("linear probe needs at least two classes")
    if n < 20:
        raise ArgumentError("linear probe needs n >= 20")
    rng = rng or SeededRng(0, 0x9B0)
    order = rng.permutation(n)
    n_train = min(n - 1, max(1, int(round(train_fraction * n))))
    tr, te = order[:n_train], order[n_train:]
    mu = X[tr].mean(axis=0)
    sd = X[tr].std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    spec = Dense(X.shape[1], len(classes))
    params = {"probe": {"weights": np.zeros((X.shape[1], len(classes))), "bias": np.zeros(len(classes))}}
    state = adam_init(params, lr)
    for _ in range(epochs):
        logits, cache = dense_forward(spec, params["probe"], Z[tr])
        _, xc = softmax_xent(logits, y[tr])
        _, g = dense_backward(spec, params["probe"], cache, softmax_xent_backward(xc), need_dx=False)
        params, state = adam_step(state, params, {"probe": g})
    w, b = params["probe"]["weights"], params["probe"]["bias"]

    def acc(idx):
        return float(np.mean((Z[idx] @ w + b).argmax(axis=1) == y[idx]))

    return acc(tr), acc(te)

