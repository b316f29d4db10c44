"""Synthetic PCB-defect patches, image-directory ingestion, splitting and file formats."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

IMAGE_SIZE = 32
BACKGROUND = 0.12
COPPER = 0.85
NOISE_SIGMA = 0.04
MAX_ROTATION = math.radians(90.0)


class DefectClass(IntEnum):
    MISSING_HOLE = 0
    MOUSE_BITE = 1
    OPEN_CIRCUIT = 2
    SHORT = 3
    SPUR = 4
    SPURIOUS_COPPER = 5

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, name: str) -> "DefectClass":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown defect class {name!r}") from None


CLASS_NAMES = tuple(c.label for c in DefectClass)


@dataclass
class LabeledImageSet:
    images: np.ndarray
    labels: np.ndarray
    provenance: str = "synthetic"
    paths: list = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64).reshape(-1, IMAGE_SIZE, IMAGE_SIZE)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(DefectClass)):
            raise ValueError("labels must lie in 0..5")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixels must lie in [0, 1]")

    def __len__(self) -> int:
        return int(self.labels.size)

    def subset(self, idx) -> "LabeledImageSet":
        idx = np.asarray(idx, dtype=np.int64)
        paths = [self.paths[i] for i in idx] if self.paths else []
        return LabeledImageSet(self.images[idx], self.labels[idx], self.provenance, paths)

    def class_counts(self) -> dict:
        return {c.label: int(np.sum(self.labels == c)) for c in DefectClass}


# ---- synthetic motifs ------------------------------------------------------

def _frame(rng):
    """Rotated, shifted, scaled local coordinates (u along the trace, v across)."""
    c = (IMAGE_SIZE - 1) / 2.0
    y, x = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)
    theta = rng.uniform(-MAX_ROTATION, MAX_ROTATION)
    scale = rng.uniform(0.85, 1.15)
    dx, dy = rng.uniform(-3, 3, size=2)
    xs, ys = x - c - dx, y - c - dy
    u = (np.cos(theta) * xs + np.sin(theta) * ys) / scale
    v = (-np.sin(theta) * xs + np.cos(theta) * ys) / scale
    return u, v


def _missing_hole(u, v, rng):
    r = rng.uniform(6.0, 8.5)
    return (u ** 2 + v ** 2) <= r ** 2


def _mouse_bite(u, v, rng):
    w = rng.uniform(4.0, 5.5)
    trace = np.abs(v) <= w
    r = rng.uniform(2.5, 3.5)
    bu = rng.uniform(-4, 4)
    side = rng.choice([-1.0, 1.0])
    bite = (u - bu) ** 2 + (v - side * w) ** 2 <= r ** 2
    return trace & ~bite


def _open_circuit(u, v, rng):
    w = rng.uniform(3.0, 4.5)
    gap = rng.uniform(2.5, 4.5)
    gu = rng.uniform(-4, 4)
    return (np.abs(v) <= w) & (np.abs(u - gu) > gap)


def _short(u, v, rng):
    w = rng.uniform(2.0, 3.0)
    sep = rng.uniform(6.0, 8.0)
    traces = (np.abs(v - sep) <= w) | (np.abs(v + sep) <= w)
    bu = rng.uniform(-5, 5)
    bw = rng.uniform(1.5, 2.5)
    bridge = (np.abs(u - bu) <= bw) & (np.abs(v) <= sep)
    return traces | bridge


def _spur(u, v, rng):
    w = rng.uniform(2.5, 3.5)
    off = rng.uniform(-6.0, -4.0)
    trace = np.abs(v - off) <= w
    base = rng.uniform(3.0, 5.0)
    length = rng.uniform(8.0, 12.0)
    su = rng.uniform(-4, 4)
    t = v - (off + w)
    tri = (t >= 0) & (t <= length) & (np.abs(u - su) <= base * (1 - t / length))
    return trace | tri


def _spurious_copper(u, v, rng):
    a, b = rng.uniform(2.5, 5.0, size=2)
    cu, cv = rng.uniform(-4, 4, size=2)
    blob = ((u - cu) / a) ** 2 + ((v - cv) / b) ** 2 <= 1.0
    edge = rng.choice([-1.0, 1.0])
    rail = np.abs(v - edge * 13.0) <= 1.5
    return blob | rail


_MOTIFS = {
    DefectClass.MISSING_HOLE: _missing_hole,
    DefectClass.MOUSE_BITE: _mouse_bite,
    DefectClass.OPEN_CIRCUIT: _open_circuit,
    DefectClass.SHORT: _short,
    DefectClass.SPUR: _spur,
    DefectClass.SPURIOUS_COPPER: _spurious_copper,
}


def render_defect(cls: int, seed: int, index: int) -> np.ndarray:
    """One 32x32 patch; depends only on (seed, class, index)."""
    rng = np.random.default_rng([seed, int(cls), index])
    u, v = _frame(rng)
    mask = _MOTIFS[DefectClass(cls)](u, v, rng)
    img = np.where(mask, COPPER, BACKGROUND) + rng.normal(0.0, NOISE_SIGMA, size=mask.shape)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic_defects(count_per_class: int, seed: int) -> LabeledImageSet:
    """Balanced set ordered class by class."""
    if count_per_class < 1:
        raise ValueError("count_per_class must be >= 1")
    images, labels = [], []
    for cls in DefectClass:
        for i in range(count_per_class):
            images.append(render_defect(cls, seed, i))
            labels.append(int(cls))
    return LabeledImageSet(np.stack(images), np.array(labels), "synthetic")


# ---- splitting -------------------------------------------------------------

def split_indices(labels, fraction: float, seed: int):
    """Stratified shuffle; each class contributes round(fraction * n_c) to the first part."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    first, second = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        k = int(math.floor(fraction * idx.size + 0.5))
        first.append(idx[:k])
        second.append(idx[k:])
    first = np.sort(np.concatenate(first)) if first else np.zeros(0, np.int64)
    second = np.sort(np.concatenate(second)) if second else np.zeros(0, np.int64)
    return first, second


def split_dataset(data: LabeledImageSet, fraction: float, seed: int):
    a, b = split_indices(data.labels, fraction, seed)
    return data.subset(a), data.subset(b)


def balanced_subset(labels, classes, total: int, seed: int) -> np.ndarray:
    """Indices of ``total`` samples spread evenly over ``classes`` (remainder to the
    lowest classes), returned in ascending order."""
    labels = np.asarray(labels)
    classes = list(classes)
    rng = np.random.default_rng(seed)
    base, extra = divmod(total, len(classes))
    picks = []
    for j, c in enumerate(classes):
        want = base + (1 if j < extra else 0)
        idx = np.flatnonzero(labels == c)
        if idx.size < want:
            raise ValueError(f"class {c} has {idx.size} samples, {want} requested")
        picks.append(np.sort(rng.choice(idx, size=want, replace=False)))
    return np.sort(np.concatenate(picks))


def remap_labels(labels, classes) -> np.ndarray:
    """Map the chosen class codes onto 0..k-1 in the given order."""
    lookup = {int(c): i for i, c in enumerate(classes)}
    return np.array([lookup[int(l)] for l in labels], dtype=np.int64)


# ---- image files -----------------------------------------------------------

def write_pgm(path, image) -> None:
    """Binary 8-bit P5 graymap."""
    img = np.asarray(image, dtype=np.float64)
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def _pgm_tokens(raw: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(raw, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * np.dtype(dtype).itemsize
    body = raw[offset:offset + n]
    if len(body) != n:
        raise ValueError(f"{path}: truncated PGM data")
    return np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.float64) / maxval


def read_image(path) -> np.ndarray:
    """Grayscale pixels in [0, 1]; PGM natively, other formats through Pillow."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    try:
        from PIL import Image
    except ImportError as exc:
        raise ValueError(f"{path}: reading non-PGM images requires Pillow") from exc
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise ValueError(f"{path}: unreadable image ({exc})") from exc


def fit_to_size(image, size: int = IMAGE_SIZE) -> np.ndarray:
    """Center-crop to a square, then bilinear-resample to ``size`` x ``size``."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    img = img[top:top + s, left:left + s]
    if s == size:
        return img.copy()
    coords = (np.arange(size) + 0.5) * s / size - 0.5
    coords = np.clip(coords, 0, s - 1)
    i0 = np.floor(coords).astype(int)
    i1 = np.minimum(i0 + 1, s - 1)
    f = coords - i0
    rows = img[i0] * (1 - f)[:, None] + img[i1] * f[:, None]
    return rows[:, i0] * (1 - f)[None, :] + rows[:, i1] * f[None, :]


IMAGE_SUFFIXES = {".pgm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def load_image_directory(path, class_subdirectories=None) -> LabeledImageSet:
    """Read ``path/<class_name>/*`` into a labeled set.

    ``class_subdirectories`` optionally maps directory names to class codes; by
    default directory names must be the defect class names.
    """
    root = Path(path)
    if not root.is_dir():
        raise ValueError(f"{root}: not a directory")
    images, labels, paths = [], [], []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        if class_subdirectories is not None:
            if sub.name not in class_subdirectories:
                raise ValueError(f"unknown class directory {sub.name!r}")
            code = int(class_subdirectories[sub.name])
        else:
            code = int(DefectClass.from_label(sub.name))
        for f in sorted(sub.iterdir()):
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            images.append(fit_to_size(read_image(f)))
            labels.append(code)
            paths.append(str(f.relative_to(root)))
    if not images:
        raise ValueError(f"{root}: no images found")
    return LabeledImageSet(np.stack(images), np.array(labels), "ingested", paths)


def save_image_set(data: LabeledImageSet, directory) -> Path:
    """Write ``<class>/<index>.pgm`` files plus a ``manifest.csv`` of ``path,label``."""
    root = Path(directory)
    rows = []
    for i, (img, lab) in enumerate(zip(data.images, data.labels)):
        rel = Path(CLASS_NAMES[lab]) / f"{i:06d}.pgm"
        (root / rel.parent).mkdir(parents=True, exist_ok=True)
        write_pgm(root / rel, img)
        rows.append((rel.as_posix(), int(lab)))
    manifest = root / "manifest.csv"
    write_manifest(rows, manifest)
    return manifest


def write_manifest(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label"])
        w.writerows(rows)


def read_manifest(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["path", "label"]:
            raise ValueError(f"{path}: expected header path,label")
        return [(r["path"], int(r["label"])) for r in reader]


def load_manifest_set(path) -> LabeledImageSet:
    """Images listed in a manifest, paths resolved relative to the manifest."""
    path = Path(path)
    rows = read_manifest(path)
    if not rows:
        raise ValueError(f"{path}: empty manifest")
    images = [fit_to_size(read_image(path.parent / p)) for p, _ in rows]
    return LabeledImageSet(np.stack(images), np.array([l for _, l in rows]), "ingested", [p for p, _ in rows])


# ---- latent feature files --------------------------------------------------

def write_latent_csv(path, features, labels) -> None:
    features = np.asarray(features, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i + 1}" for i in range(features.shape[1])] + ["label"])
        for row, lab in zip(features, labels):
            w.writerow([repr(float(x)) for x in row] + [int(lab)])


def read_latent_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: expected header f1,...,label")
        rows = list(reader)
    if not rows:
        return np.zeros((0, len(header) - 1)), np.zeros(0, np.int64)
    feats = np.array([[float(x) for x in r[:-1]] for r in rows])
    labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    return feats, labels


def pca_project(features, d: int) -> np.ndarray:
    """Project onto the top ``d`` principal components; a linear baseline for the encoder."""
    x = np.asarray(features, dtype=np.float64).reshape(len(features), -1)
    x = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    return x @ vt[:d].T
