"""Scene datasets: manifest I/O, context transforms and a synthetic generator.

Images live in memory as uint8 ``[3,H,W]`` arrays (exactly what the PPM files
hold) and are converted to float ``[0,1]`` tensors on demand.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ArgumentError, ConfigError, FormatError, ParseError, ValidationError
from .tensor import SeededRng, region_fill

Rect = tuple[int, int, int, int]


@dataclass
class SceneSample:
    image: np.ndarray  # [3,H,W] float in [0,1]
    bbox: Rect  # x, y, w, h in pixels
    category: int
    scene_class: int = -1
    scene_superclass: int = -1

    def __post_init__(self):
        _check_bbox(self.bbox, self.image.shape[2], self.image.shape[1], "sample")


def _check_bbox(bbox, width: int, height: int, where: str) -> None:
    x, y, w, h = bbox
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > width or y + h > height:
        raise ValidationError(f"{where}: bbox {tuple(bbox)} outside {width}x{height} image")


# --- image files ---------------------------------------------------------------

def _ppm_tokens(buf: bytes, count: int, pos: int, path) -> tuple[list[bytes], int]:
    tokens = []
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header at byte {pos}")
        tokens.append(buf[start:pos])
    return tokens, pos


def decode_ppm(buf: bytes, path="<bytes>") -> np.ndarray:
    """Decode binary PPM (P6, maxval <= 255) to uint8 ``[3,H,W]``."""
    tokens, pos = _ppm_tokens(buf, 4, 0, path)
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PPM header field") from exc
    if maxval != 255 or width < 1 or height < 1:
        raise FormatError(f"{path}: unsupported PPM geometry {width}x{height}/{maxval}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    if len(buf) - pos < need:
        raise FormatError(f"{path}: PPM pixel data truncated at byte {len(buf)}")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return pixels.reshape(height, width, 3).transpose(2, 0, 1).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[0] != 3:
        raise ArgumentError("encode_ppm expects uint8 [3,H,W]")
    _, h, w = img.shape
    return f"P6\n{w} {h}\n255\n".encode() + img.transpose(1, 2, 0).tobytes()


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc.strerror}") from exc
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image  # optional dependency for PNG inputs

        with Image.open(path) as im:
            return np.asarray(im.convert("RGB")).transpose(2, 0, 1).copy()
    return decode_ppm(buf, path)


def to_float(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) / np.float32(255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


# --- manifest -------------------------------------------------------------------

@dataclass
class DatasetManifest:
    categories: list[dict] = field(default_factory=list)  # {"id", "name"}
    images: list[dict] = field(default_factory=list)  # {"id", "file", "width", "height"}
    annotations: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def validate(self) -> None:
        cats = {c["id"] for c in self.categories}
        imgs = {im["id"]: im for im in self.images}
        for i, ann in enumerate(self.annotations):
            if ann["image_id"] not in imgs:
                raise ValidationError(f"annotation {i}: unknown image_id {ann['image_id']}")
            if ann["category_id"] not in cats:
                raise ValidationError(f"annotation {i}: unknown category_id {ann['category_id']}")
            im = imgs[ann["image_id"]]
            _check_bbox(ann["bbox"], im["width"], im["height"], f"annotation {i}")


def _field(obj: dict, key: str, kind, where: str, optional=False):
    if key not in obj:
        if optional:
            return None
        raise ParseError(f"{where}: missing field {key!r}")
    val = obj[key]
    ok = isinstance(val, kind) and not (kind is int and isinstance(val, bool))
    if not ok:
        raise ParseError(f"{where}: field {key!r} has wrong type {type(val).__name__}")
    return val


def parse_manifest(text: str, source="<manifest>") -> DatasetManifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{source}: top level must be an object")
    man = DatasetManifest()
    for i, c in enumerate(doc.get("categories", [])):
        where = f"{source}: categories[{i}]"
        man.categories.append({"id": _field(c, "id", int, where), "name": _field(c, "name", str, where)})
    for i, im in enumerate(doc.get("images", [])):
        where = f"{source}: images[{i}]"
        man.images.append({k: _field(im, k, t, where) for k, t in
                           (("id", int), ("file", str), ("width", int), ("height", int))})
    for i, ann in enumerate(doc.get("annotations", [])):
        where = f"{source}: annotations[{i}]"
        bbox = _field(ann, "bbox", list, where)
        if len(bbox) != 4 or not all(isinstance(v, int) and not isinstance(v, bool) for v in bbox):
            raise ParseError(f"{where}: bbox must be four integers")
        rec = {"image_id": _field(ann, "image_id", int, where), "bbox": bbox,
               "category_id": _field(ann, "category_id", int, where)}
        for opt in ("scene_class", "scene_superclass"):
            val = _field(ann, opt, int, where, optional=True)
            if val is not None:
                rec[opt] = val
        man.annotations.append(rec)
    man.validate()
    return man


def save_manifest(man: DatasetManifest, path) -> None:
    Path(path).write_text(man.to_json(), encoding="utf-8")


def load_manifest(path) -> tuple[DatasetManifest, Iterator[SceneSample]]:
    """Parse and validate a manifest; the iterator decodes images lazily."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc.strerror}") from exc
    man = parse_manifest(text, str(path))
    root = path.parent
    imgs = {im["id"]: im for im in man.images}
    for im in man.images:
        if not (root / im["file"]).is_file():
            raise FileNotFoundError(f"image file missing: {root / im['file']}")
    cat_index = {c["id"]: i for i, c in enumerate(man.categories)}

    def samples():
        for ann in man.annotations:
            meta = imgs[ann["image_id"]]
            img = read_image(root / meta["file"])
            if img.shape[1:] != (meta["height"], meta["width"]):
                raise ValidationError(f"{meta['file']}: size differs from manifest")
            yield SceneSample(to_float(img), tuple(ann["bbox"]), cat_index[ann["category_id"]],
                              ann.get("scene_class", -1), ann.get("scene_superclass", -1))

    return man, samples()


# --- in-memory dataset ----------------------------------------------------------

@dataclass
class SceneSet:
    images: list[np.ndarray]  # uint8 [3,H,W]
    bboxes: np.ndarray  # [N,4] int
    categories: np.ndarray
    scene_classes: np.ndarray
    scene_superclasses: np.ndarray
    category_names: list[str]

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.category_names)

    def sample(self, i: int) -> SceneSample:
        return SceneSample(to_float(self.images[i]), tuple(int(v) for v in self.bboxes[i]),
                           int(self.categories[i]), int(self.scene_classes[i]),
                           int(self.scene_superclasses[i]))

    def subset(self, idx) -> "SceneSet":
        idx = np.asarray(idx)
        return SceneSet([self.images[i] for i in idx], self.bboxes[idx], self.categories[idx],
                        self.scene_classes[idx], self.scene_superclasses[idx], self.category_names)

    def to_manifest(self, prefix="images") -> DatasetManifest:
        man = DatasetManifest(categories=[{"id": i, "name": n} for i, n in enumerate(self.category_names)])
        for i, img in enumerate(self.images):
            man.images.append({"id": i, "file": f"{prefix}/{i:06d}.ppm",
                               "width": int(img.shape[2]), "height": int(img.shape[1])})
            man.annotations.append({"image_id": i, "bbox": [int(v) for v in self.bboxes[i]],
                                    "category_id": int(self.categories[i]),
                                    "scene_class": int(self.scene_classes[i]),
                                    "scene_superclass": int(self.scene_superclasses[i])})
        return man

    def write(self, directory) -> Path:
        """Write ``images/*.ppm`` plus ``manifest.json``; returns the manifest path."""
        directory = Path(directory)
        (directory / "images").mkdir(parents=True, exist_ok=True)
        man = self.to_manifest()
        for meta, img in zip(man.images, self.images):
            (directory / meta["file"]).write_bytes(encode_ppm(img))
        save_manifest(man, directory / "manifest.json")
        return directory / "manifest.json"


def load_scene_set(path) -> SceneSet:
    """Load a manifest into memory, one entry per annotation."""
    man, _ = load_manifest(path)
    root = Path(path).parent
    imgs = {im["id"]: im for im in man.images}
    cat_index = {c["id"]: i for i, c in enumerate(man.categories)}
    decoded: dict[int, np.ndarray] = {}
    images, boxes, cats, scls, sup = [], [], [], [], []
    for ann in man.annotations:
        iid = ann["image_id"]
        if iid not in decoded:
            decoded[iid] = read_image(root / imgs[iid]["file"])
        images.append(decoded[iid])
        boxes.append(ann["bbox"])
        cats.append(cat_index[ann["category_id"]])
        scls.append(ann.get("scene_class", -1))
        sup.append(ann.get("scene_superclass", -1))
    return SceneSet(images, np.array(boxes, dtype=np.int64).reshape(-1, 4), np.array(cats, dtype=np.int64),
                    np.array(scls, dtype=np.int64), np.array(sup, dtype=np.int64),
                    [c["name"] for c in man.categories])


# --- transforms -----------------------------------------------------------------

@lru_cache(maxsize=4096)
def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Bilinear weights [n_out, n_in]: half-pixel centres, edge clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1 - frac)
    np.add.at(m, (rows, i1), frac)
    m.setflags(write=False)
    return m


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    _, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.astype(np.float32, copy=True)
    rh = resize_matrix(h, out_h)
    rw = resize_matrix(w, out_w)
    out = np.einsum("oh,chw,pw->cop", rh, img.astype(np.float64), rw, optimize=True)
    return out.astype(np.float32)


def margin_box(bbox: Rect, margin: float, width: int, height: int) -> Rect:
    if margin < 0:
        raise ArgumentError("margin must be >= 0")
    x, y, w, h = bbox
    if w < 1 or h < 1:
        raise ValidationError(f"degenerate bbox {bbox}")
    pad = int(math.floor(margin * max(w, h) + 0.5))
    x0, y0 = max(0, x - pad), max(0, y - pad)
    x1, y1 = min(width, x + w + pad), min(height, y + h + pad)
    if x1 <= x0 or y1 <= y0:
        raise ValidationError(f"bbox {bbox} with margin {margin} leaves an empty crop")
    return x0, y0, x1 - x0, y1 - y0


def crop_minimal_context(sample: SceneSample, out_side: int, margin: float = 0.0) -> np.ndarray:
    """Object crop (bbox grown by ``margin * max(w, h)`` per side) resized to a square."""
    _, H, W = sample.image.shape
    x, y, w, h = margin_box(sample.bbox, margin, W, H)
    return resize_bilinear(sample.image[:, y:y + h, x:x + w], out_side, out_side)


def scale_bbox(bbox: Rect, width: int, height: int, out_side: int) -> Rect:
    """Map a bbox onto an ``out_side`` square grid (round-half-up, clamped, >= 1 px)."""
    x, y, w, h = bbox
    sx, sy = out_side / width, out_side / height

    def rnd(v):
        return int(math.floor(v + 0.5))

    x0 = min(max(rnd(x * sx), 0), out_side - 1)
    y0 = min(max(rnd(y * sy), 0), out_side - 1)
    x1 = min(max(rnd((x + w) * sx), x0 + 1), out_side)
    y1 = min(max(rnd((y + h) * sy), y0 + 1), out_side)
    return x0, y0, x1 - x0, y1 - y0


def make_context_input(sample: SceneSample, out_side: int) -> np.ndarray:
    """Whole scene resized to ``out_side``, with the object's box set to exact zeros."""
    _, H, W = sample.image.shape
    resized = resize_bilinear(sample.image, out_side, out_side)
    return region_fill(resized, scale_bbox(sample.bbox, W, H, out_side), 0.0)


def context_object_ratio(sample: SceneSample) -> float:
    """(scene pixels - object pixels) / object pixels."""
    _, H, W = sample.image.shape
    return ratio_from_sizes(W, H, sample.bbox[2], sample.bbox[3])


def ratio_from_sizes(width: int, height: int, obj_w: int, obj_h: int) -> float:
    obj = obj_w * obj_h
    if obj < 1:
        raise ArgumentError("object must cover at least one pixel")
    return (width * height - obj) / obj


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    if sigma < 0:
        raise ArgumentError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1)
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    # half-sample symmetric: ... c b a | a b c ... | c b a ...
    m = np.mod(idx, 2 * n)
    return np.where(m >= n, 2 * n - 1 - m, m)


@lru_cache(maxsize=256)
def blur_matrix(n: int, sigma: float) -> np.ndarray:
    """Dense [n, n] operator applying the 1-D Gaussian with reflect padding."""
    k = gaussian_kernel1d(sigma)
    r = len(k) // 2
    m = np.zeros((n, n))
    rows = np.arange(n)
    for d in range(-r, r + 1):
        np.add.at(m, (rows, _reflect(rows + d, n)), k[d + r])
    m.setflags(write=False)
    return m


def blur_context(context: np.ndarray, bbox_scaled: Rect | None, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a context input, then re-zero the object box.

    Accepts ``[C,H,W]`` or a batch ``[N,C,H,W]`` (with one box per sample).
    """
    if sigma < 0:
        raise ArgumentError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return context.copy()
    batch = context if context.ndim == 4 else context[None]
    boxes = bbox_scaled if context.ndim == 4 else [bbox_scaled]
    bh = blur_matrix(batch.shape[2], float(sigma)).astype(context.dtype)
    bw = blur_matrix(batch.shape[3], float(sigma)).astype(context.dtype)
    out = np.matmul(np.matmul(bh, batch), bw.T)
    if boxes is not None:
        for i, box in enumerate(boxes):
            if box is not None:
                x, y, w, h = box
                out[i, :, y:y + h, x:x + w] = 0
    return out if context.ndim == 4 else out[0]


@dataclass(frozen=True)
class BlurSchedule:
    levels: tuple[float, ...]

    def __post_init__(self):
        if len(self.levels) < 1 or self.levels[0] != 0:
            raise ConfigError("blur schedule must start at sigma 0")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ConfigError("blur levels must be strictly increasing")

    @classmethod
    def linear(cls, context_side: int, count: int = 40, step: float = 0.25) -> "BlurSchedule":
        scale = context_side / 128
        return cls(tuple(j * step * scale for j in range(count)))


# --- batching -------------------------------------------------------------------

def fovea_batch(data: SceneSet, idx, side: int, margin: float = 0.0) -> np.ndarray:
    return np.stack([crop_minimal_context(data.sample(i), side, margin) for i in idx])


def context_batch(data: SceneSet, idx, side: int, mask: bool = True) -> np.ndarray:
    if mask:
        return np.stack([make_context_input(data.sample(i), side) for i in idx])
    return np.stack([resize_bilinear(data.sample(i).image, side, side) for i in idx])


def scaled_boxes(data: SceneSet, idx, side: int) -> list[Rect]:
    out = []
    for i in idx:
        _, H, W = data.images[i].shape
        out.append(scale_bbox(tuple(data.bboxes[i]), W, H, side))
    return out


def shuffled_batches(n: int, batch_size: int, rng: SeededRng) -> Iterator[np.ndarray]:
    """Index batches over one seeded permutation; the last batch may be short."""
    if batch_size < 1:
        raise ArgumentError("batch_size must be >= 1")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# --- synthetic generator --------------------------------------------------------

GLYPHS = ("disk", "frame", "triangle", "plus", "cross", "bars", "ring", "diamond")

# base colours per superclass: 0 = warm ("indoor"), 1 = cool ("outdoor")
_PALETTES = (
    np.array([[0.82, 0.55, 0.32], [0.74, 0.42, 0.38], [0.86, 0.66, 0.40], [0.70, 0.50, 0.26]]),
    np.array([[0.30, 0.58, 0.80], [0.34, 0.70, 0.52], [0.26, 0.48, 0.72], [0.40, 0.66, 0.70]]),
)


@dataclass(frozen=True)
class SyntheticConfig:
    num_pairs: int = 4
    num_context_classes: int = 4
    fidelity: float = 0.9
    scene_side: int = 128
    object_min: int = 14
    object_max: int = 112
    n_train: int = 10000
    n_test: int = 2000
    seed: int = 0

    @property
    def num_classes(self) -> int:
        return 2 * self.num_pairs

    def validate(self) -> None:
        if not 0.0 <= self.fidelity <= 1.0:
            raise ConfigError(f"fidelity must lie in [0, 1], got {self.fidelity}")
        if self.num_context_classes < 2 or self.num_context_classes % 2:
            raise ConfigError("num_context_classes must be even and >= 2")
        if not 1 <= self.num_pairs <= len(GLYPHS):
            raise ConfigError(f"num_pairs must be in [1, {len(GLYPHS)}]")
        if not 4 <= self.object_min <= self.object_max <= self.scene_side:
            raise ConfigError("object size range must satisfy 4 <= min <= max <= scene_side")
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigError("sample counts must be non-negative")

    def superclass(self, scene_class: int) -> int:
        return int(scene_class >= self.num_context_classes // 2)

    def favoured_member(self, pair: int, scene_class: int) -> int:
        """Pair member that the context class points to (with probability ``fidelity``)."""
        return (pair + self.superclass(scene_class)) % 2

    def bayes_top1(self, with_context: bool) -> float:
        return self.fidelity + (1 - self.fidelity) / 2 if with_context else 0.5


def glyph_mask(kind: str, side: int) -> np.ndarray:
    c = (np.arange(side) + 0.5) / side * 2 - 1
    v, u = np.meshgrid(c, c, indexing="ij")
    box = (np.abs(u) <= 0.7) & (np.abs(v) <= 0.7)
    if kind == "disk":
        return u ** 2 + v ** 2 <= 0.62 ** 2
    if kind == "frame":
        m = np.maximum(np.abs(u), np.abs(v))
        return (m >= 0.4) & (m <= 0.72)
    if kind == "triangle":
        return (v <= 0.6) & (np.abs(u) <= (v + 0.75) * 0.52)
    if kind == "plus":
        return ((np.abs(u) <= 0.2) | (np.abs(v) <= 0.2)) & box
    if kind == "cross":
        return ((np.abs(u - v) <= 0.28) | (np.abs(u + v) <= 0.28)) & box
    if kind == "bars":
        return (np.mod((v + 1) * 2.5, 1.0) < 0.5) & box
    if kind == "ring":
        r = np.sqrt(u ** 2 + v ** 2)
        return (r >= 0.38) & (r <= 0.68)
    if kind == "diamond":
        return np.abs(u) + np.abs(v) <= 0.72
    raise ArgumentError(f"unknown glyph {kind!r}")


def _render_scene(cfg: SyntheticConfig, rng: SeededRng):
    S = cfg.scene_side
    G = cfg.num_context_classes
    half = G // 2
    g = rng.integers(G)
    sup = cfg.superclass(g)
    pair = rng.integers(cfg.num_pairs)
    if rng.uniform() < cfg.fidelity:
        member = cfg.favoured_member(pair, g)
    else:
        member = rng.integers(2)
    label = 2 * pair + member

    # background: palette colour + oriented stripes identifying the context class
    within = g % half
    palette = _PALETTES[sup]
    base = palette[within % len(palette)] + (rng.uniform(3) - 0.5) * 0.12
    theta = math.pi * within / half + math.pi / 8
    freq = 3.0 + 2.0 * within
    phase = rng.uniform() * 2 * math.pi
    yy, xx = np.mgrid[0:S, 0:S] / S
    stripes = 0.12 * np.sin(2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)
    img = base[:, None, None] + stripes[None]
    img = img + 0.04 * rng.normal(3 * S * S).reshape(3, S, S)

    # clutter in the other superclass's colours
    other = _PALETTES[1 - sup]
    for _ in range(1 + rng.integers(4)):
        side = 8 + rng.integers(25)
        px, py = rng.integers(S - side + 1), rng.integers(S - side + 1)
        col = other[rng.integers(len(other))] + (rng.uniform(3) - 0.5) * 0.1
        img[:, py:py + side, px:px + side] = col[:, None, None]

    # object: neutral tile that fills its bbox exactly, glyph on top
    lo, hi = math.log(cfg.object_min), math.log(cfg.object_max)
    side = int(min(cfg.object_max, max(cfg.object_min, round(math.exp(lo + (hi - lo) * rng.uniform())))))
    ox, oy = rng.integers(S - side + 1), rng.integers(S - side + 1)
    tile_grey = 0.5 + (rng.uniform() - 0.5) * 0.2
    ink = 0.08 if rng.uniform() < 0.5 else 0.92
    mask = glyph_mask(GLYPHS[pair], side)
    tile = np.where(mask, ink, tile_grey)
    img[:, oy:oy + side, ox:ox + side] = tile[None]
    return to_uint8(np.clip(img, 0, 1)), (ox, oy, side, side), label, g, sup


def category_names(num_pairs: int) -> list[str]:
    return [f"{GLYPHS[p]}_{m}" for p in range(num_pairs) for m in ("a", "b")]


def generate_split(cfg: SyntheticConfig, split: int, count: int) -> SceneSet:
    images, boxes, labels, classes, supers = [], [], [], [], []
    for i in range(count):
        # one stream per sample: order- and worker-independent
        rng = SeededRng(cfg.seed, (split << 32) | i)
        img, box, label, g, sup = _render_scene(cfg, rng)
        images.append(img)
        boxes.append(box)
        labels.append(label)
        classes.append(g)
        supers.append(sup)
    return SceneSet(images, np.array(boxes, dtype=np.int64).reshape(-1, 4),
                    np.array(labels, dtype=np.int64), np.array(classes, dtype=np.int64),
                    np.array(supers, dtype=np.int64), category_names(cfg.num_pairs))


def generate_synthetic(cfg: SyntheticConfig) -> tuple[SceneSet, SceneSet]:
    """Train and test scene sets whose context predicts the within-pair label.

    Glyph shape fixes the category pair; the member inside the pair equals
    ``cfg.favoured_member(pair, scene_class)`` with probability ``fidelity``
    and is a fair coin otherwise.
    """
    cfg.validate()
    return generate_split(cfg, 0, cfg.n_train), generate_split(cfg, 1, cfg.n_test)


def write_synthetic(cfg: SyntheticConfig, out_dir) -> dict:
    train, test = generate_synthetic(cfg)
    out_dir = Path(out_dir)
    train.write(out_dir / "train")
    test.write(out_dir / "test")
    report = {"config": asdict(cfg), "counts": {"train": len(train), "test": len(test)},
              "fidelity": cfg.fidelity, "seed": cfg.seed,
              "label_counts": {"train": np.bincount(train.categories, minlength=cfg.num_classes).tolist(),
                               "test": np.bincount(test.categories, minlength=cfg.num_classes).tolist()}}
    (out_dir / "generation_report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report

