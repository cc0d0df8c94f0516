"""Corpus I/O, stratified splitting, batch iteration and the toy corpus.

A corpus is a directory with one subdirectory per class, ``happy/`` and
``sad/``, holding binary P6 PPM files.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .augment import AugmentConfig, apply_pipeline
from .errors import ConfigError, FormatError, UnsupportedError
from .image import check_image, resize_image, to_tensor, to_uint8
from .model import CLASS_NAMES
from .rng import Rng, substream

GLYPH_MANIFEST = "glyphs.csv"


# -- PPM -------------------------------------------------------------------

def _header_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens after the magic,
    skipping ``#`` comments. Returns (tokens, offset of the payload)."""
    tokens, i, n = [], 2, len(data)
    while len(tokens) < count:
        if i >= n:
            raise FormatError("truncated PPM header")
        ch = data[i:i + 1]
        if ch.isspace():
            i += 1
        elif ch == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        else:
            j = i
            while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if i >= n or not data[i:i + 1].isspace():
        raise FormatError("PPM header must end with a single whitespace byte")
    return tokens, i + 1


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a binary P6 PPM (maxval 255) into a ``(h, w, 3)`` uint8 array."""
    if data[:2] != b"P6":
        raise FormatError(f"not a P6 PPM (magic {data[:2]!r})")
    tokens, start = _header_tokens(data, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"non-numeric PPM header {tokens!r}") from None
    if width < 1 or height < 1:
        raise FormatError(f"bad PPM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedError(f"PPM maxval {maxval} is not supported (only 255)")
    size = width * height * 3
    payload = data[start:start + size]
    if len(payload) < size:
        raise FormatError(f"truncated PPM payload: {len(payload)} of {size} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    check_image(img)
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def read_ppm(path) -> np.ndarray:
    try:
        return decode_ppm(Path(path).read_bytes())
    except FormatError as e:
        raise type(e)(f"{path}: {e}") from None


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))


# -- datasets --------------------------------------------------------------

@dataclass
class LabeledImage:
    image: np.ndarray
    label: int
    source_path: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ConfigError(f"label must be 0 (happy) or 1 (sad), got {self.label}")


@dataclass
class Dataset:
    items: list

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([it.label for it in self.items], dtype=np.int64)

    @property
    def class_counts(self) -> tuple:
        labels = self.labels
        return tuple(int((labels == c).sum()) for c in range(len(CLASS_NAMES)))

    def subset(self, indices) -> "Dataset":
        return Dataset([self.items[i] for i in indices])


def load_dataset(root, image_size: int = 224) -> Dataset:
    """Load ``root/happy/*.ppm`` and ``root/sad/*.ppm``, sorted by (class,
    filename), each resized to ``image_size`` squared."""
    root = Path(root)
    glyphs = _read_glyph_manifest(root)
    items = []
    for label, name in enumerate(CLASS_NAMES):
        folder = root / name
        files = sorted(folder.glob("*.ppm")) if folder.is_dir() else []
        if not files:
            raise ConfigError(f"class directory {folder} is missing or has no .ppm files")
        for path in files:
            img = read_ppm(path)
            meta = dict(glyphs.get(f"{name}/{path.name}", {}))
            if "bbox" in meta:
                sy, sx = image_size / img.shape[0], image_size / img.shape[1]
                x0, y0, x1, y1 = meta["bbox"]
                meta["bbox"] = (x0 * sx, y0 * sy, x1 * sx, y1 * sy)
            items.append(LabeledImage(resize_image(img, image_size), label,
                                      str(path), meta))
    return Dataset(items)


def stratified_split(ds: Dataset, val_frac: float = 0.2, seed: int = 0):
    """Per class: seeded shuffle, first ceil(val_frac * count) to validation."""
    if not 0 <= val_frac < 1:
        raise ConfigError(f"val_frac must lie in [0, 1), got {val_frac}")
    labels = ds.labels
    train_idx, val_idx = [], []
    for c in range(len(CLASS_NAMES)):
        members = np.flatnonzero(labels == c)
        if val_frac > 0 and len(members) < 1 / val_frac:
            raise ConfigError(f"class {CLASS_NAMES[c]} has {len(members)} items; "
                              f"need at least {math.ceil(1 / val_frac)} for val_frac={val_frac}")
        order = members[substream(seed, c).permutation(len(members))]
        n_val = math.ceil(val_frac * len(members) - 1e-9)
        val_idx += order[:n_val].tolist()
        train_idx += order[n_val:].tolist()
    return ds.subset(sorted(train_idx)), ds.subset(sorted(val_idx))


def _make_batch(ds, positions, order, epoch, augment, dtype):
    images = []
    for pos in positions:
        img = ds.items[order[pos]].image
        if augment is not None:
            img = apply_pipeline(img, augment, epoch * len(ds) + pos)
        images.append(img)
    labels = np.array([ds.items[order[p]].label for p in positions], dtype=np.int64)
    return to_tensor(images, dtype), labels


def batch_iter(ds: Dataset, batch_size: int, epoch: int = 0, seed: int = 0,
               augment: Optional[AugmentConfig] = None, workers: int = 1,
               shuffle: bool = True, dtype=np.float32):
    """Yield ``(batch [b, 3, s, s], labels)`` for one epoch.

    The shuffle comes from ``substream(seed, epoch)`` and sample ``pos`` of
    the epoch is augmented with index ``epoch * len(ds) + pos``; with
    ``workers > 1`` batches are prepared ahead on threads but delivered in
    the same order with the same content.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    n = len(ds)
    order = substream(seed, epoch).permutation(n) if shuffle else np.arange(n)
    chunks = [range(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]
    if workers <= 1:
        for positions in chunks:
            yield _make_batch(ds, positions, order, epoch, augment, dtype)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = deque()
        it = iter(chunks)
        for positions in it:
            pending.append(pool.submit(_make_batch, ds, positions, order, epoch, augment, dtype))
            if len(pending) >= 2 * workers:
                break
        while pending:
            yield pending.popleft().result()
            nxt = next(it, None)
            if nxt is not None:
                pending.append(pool.submit(_make_batch, ds, nxt, order, epoch, augment, dtype))


# -- toy corpus ------------------------------------------------------------

def _draw_glyph(size: int, label: int, rng: Rng):
    r = rng.uniform(0.3, 0.4) * size
    cx = rng.uniform(0.4, 0.6) * size
    cy = rng.uniform(0.4, 0.6) * size
    bg = rng.uniform(165, 230)
    ink = bg - rng.uniform(120, 160)
    thick = rng.uniform(0.10, 0.14) * r + 0.6
    eye_r = rng.uniform(0.10, 0.14) * r + 0.8
    half = rng.uniform(0.55, 0.7) * r
    depth = rng.uniform(0.3, 0.4) * r
    # smile: middle of the arc lower (larger y) than the ends; frown: higher
    curvature = 1.0 if label == 0 else -1.0
    mouth_y = cy + 0.45 * r - curvature * depth / 2
    eyes = [(cx - 0.4 * r, cy - 0.3 * r), (cx + 0.4 * r, cy - 0.3 * r)]

    u = np.linspace(-1, 1, 2 * int(size))
    arc_x = cx + half * u
    arc_y = mouth_y + curvature * depth * (1 - u ** 2)
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    d_arc = np.full((size, size), np.inf)
    pad = thick + 2
    wy = slice(max(0, int(arc_y.min() - pad)), min(size, int(arc_y.max() + pad) + 1))
    wx = slice(max(0, int(arc_x.min() - pad)), min(size, int(arc_x.max() + pad) + 1))
    px, py = xs[wy, wx][..., None], ys[wy, wx][..., None]
    d_arc[wy, wx] = np.hypot(px - arc_x, py - arc_y).min(axis=-1)
    d_eye = np.minimum(*(np.hypot(xs - ex, ys - ey) for ex, ey in eyes))
    coverage = np.clip(np.maximum(thick - d_arc, eye_r - d_eye) + 0.5, 0, 1)

    tint = rng.uniform(-12, 12, 3)
    base = bg + tint
    glyph = ink + tint
    img = base * (1 - coverage[..., None]) + glyph * coverage[..., None]
    img += rng.normal((size, size, 1)) * rng.uniform(2, 8)

    x0 = min(arc_x.min() - thick, eyes[0][0] - eye_r)
    x1 = max(arc_x.max() + thick, eyes[1][0] + eye_r)
    y0 = min(arc_y.min() - thick, eyes[0][1] - eye_r)
    y1 = max(arc_y.max() + thick, eyes[0][1] + eye_r)
    bbox = (max(0.0, x0), max(0.0, y0), min(float(size), x1), min(float(size), y1))
    return to_uint8(img), {"bbox": bbox, "curvature": curvature}


def synth_toy(n_per_class: int, image_size: int = 224, seed: int = 0) -> Dataset:
    """Procedural two-class corpus: a face-like glyph with two dot eyes and
    a mouth arc that curves up (happy, label 0) or down (sad, label 1).

    Position, size, stroke, contrast, tint and noise are randomized per
    sample, so global brightness does not reveal the class.
    """
    if n_per_class < 1:
        raise ConfigError("n_per_class must be at least 1")
    root = Rng(seed)
    items = []
    for label, name in enumerate(CLASS_NAMES):
        for j in range(n_per_class):
            img, meta = _draw_glyph(image_size, label, root.child(label * n_per_class + j))
            items.append(LabeledImage(img, label, f"{name}/{j:05d}.ppm", meta))
    return Dataset(items)


def write_corpus(ds: Dataset, root) -> Path:
    """Write the class-directory layout plus a glyph manifest when present."""
    root = Path(root)
    rows = []
    for name in CLASS_NAMES:
        (root / name).mkdir(parents=True, exist_ok=True)
    counters = [0, 0]
    for item in ds.items:
        name = CLASS_NAMES[item.label]
        fname = Path(item.source_path).name if item.source_path else f"{counters[item.label]:05d}.ppm"
        counters[item.label] += 1
        write_ppm(root / name / fname, item.image)
        if "bbox" in item.meta:
            rows.append([f"{name}/{fname}", item.label, *(f"{v:.6f}" for v in item.meta["bbox"]),
                         item.meta.get("curvature", "")])
    if rows:
        with open(root / GLYPH_MANIFEST, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["path", "label", "x0", "y0", "x1", "y1", "curvature"])
            w.writerows(rows)
    return root


def _read_glyph_manifest(root: Path) -> dict:
    path = root / GLYPH_MANIFEST
    if not path.exists():
        return {}
    out = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out[row["path"]] = {
                "bbox": tuple(float(row[k]) for k in ("x0", "y0", "x1", "y1")),
                "curvature": float(row["curvature"]) if row["curvature"] else None,
            }
    return out
