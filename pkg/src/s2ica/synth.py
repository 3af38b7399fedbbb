"""Deterministic "glyph-world" scenes: fixed object content, variable layout and scale.

Each class is a multiset of glyphs. In the standard split glyph slot ``k``
of a class always lands in quadrant ``STANDARD_QUADRANTS[k]``; the
layout-stress split places the same glyphs in a disjoint set of quadrants,
so only the arrangement changes between the two splits.
"""

from dataclasses import dataclass, field
import os

import numpy as np

from .errors import ConfigurationError, FormatError, GenerationError
from .imageio import load_image, save_image, to_grayscale

GLYPHS = ("disk", "square", "cross", "triangle", "ring")

DEFAULT_CLASSES = (
    ("disk", "square", "cross"),
    ("disk", "square", "triangle"),
    ("ring", "cross", "triangle"),
    ("ring", "disk", "square"),
)

# quadrant indices: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right
STANDARD_QUADRANTS = (0, 1, 2)
STRESS_QUADRANTS = (3, 2, 1)


def glyph_mask(kind, size):
    """Boolean ``size x size`` raster of one glyph."""
    if size < 3:
        raise ConfigurationError(f"glyph size {size} too small to draw")
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - c, xx - c
    r = size / 2.0
    if kind == "disk":
        return dx * dx + dy * dy <= r * r
    if kind == "square":
        inset = size * 0.1
        return (np.abs(dx) <= r - inset) & (np.abs(dy) <= r - inset)
    if kind == "cross":
        half = size / 6.0
        return (np.abs(dx) <= half) | (np.abs(dy) <= half)
    if kind == "triangle":
        # apex at the top, base on the bottom row
        frac = (yy + 0.5) / size
        return np.abs(dx) <= frac * r
    if kind == "ring":
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    raise ConfigurationError(f"unknown glyph {kind!r}; choose from {GLYPHS}")


@dataclass
class SynthConfig:
    canvas: int = 96
    classes: tuple = DEFAULT_CLASSES
    train_per_class: int = 50
    test_per_class: int = 25
    glyph_size: int = 24
    scale_range: tuple = (0.5, 1.0)
    intensity_range: tuple = (0.4, 1.0)
    noise_std: float = 0.05
    layout_stress: bool = True
    max_attempts: int = 100
    seed: int = 0
    class_names: tuple = None

    def __post_init__(self):
        self.classes = tuple(tuple(c) for c in self.classes)
        if len(self.classes) < 2:
            raise ConfigurationError("need at least two classes")
        keys = [tuple(sorted(c)) for c in self.classes]
        if len(set(keys)) != len(keys):
            raise ConfigurationError("class glyph multisets must be pairwise distinct")
        for c in self.classes:
            for g in c:
                if g not in GLYPHS:
                    raise ConfigurationError(f"unknown glyph {g!r}")
            if len(c) > len(STANDARD_QUADRANTS):
                raise ConfigurationError(f"at most {len(STANDARD_QUADRANTS)} glyphs per class")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigurationError("scale range must satisfy 0 < low <= high")
        if self.class_names is None:
            self.class_names = tuple(f"class{i}_" + "-".join(c) for i, c in enumerate(self.classes))


@dataclass
class SceneDataset:
    images: np.ndarray
    labels: np.ndarray
    class_names: tuple
    boxes: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self):
        return len(self.class_names)


def _quadrant_origin(q, canvas):
    half = canvas // 2
    return (q // 2) * half, (q % 2) * half


def _overlaps(box, others):
    r, c, s = box
    for r2, c2, s2 in others:
        if r < r2 + s2 and r2 < r + s and c < c2 + s2 and c2 < c + s:
            return True
    return False


def render_scene(glyphs, quadrants, cfg, rng):
    """Draw ``glyphs`` (slot k in quadrant ``quadrants[k]``); returns image and boxes."""
    canvas = cfg.canvas
    half = canvas // 2
    img = np.zeros((canvas, canvas), dtype=np.float64)
    boxes = []
    for kind, q in zip(glyphs, quadrants):
        scale = rng.uniform(*cfg.scale_range)
        size = max(3, int(round(cfg.glyph_size * scale)))
        if size > half:
            raise GenerationError(f"glyph of size {size} cannot fit a {half}px quadrant; use a smaller scale range")
        intensity = rng.uniform(*cfg.intensity_range)
        r0, c0 = _quadrant_origin(q, canvas)
        for _ in range(cfg.max_attempts):
            r = r0 + int(rng.integers(0, half - size + 1))
            c = c0 + int(rng.integers(0, half - size + 1))
            if not _overlaps((r, c, size), boxes):
                break
        else:
            raise GenerationError(
                f"could not place {kind} after {cfg.max_attempts} attempts; use a smaller scale range"
            )
        mask = glyph_mask(kind, size)
        region = img[r : r + size, c : c + size]
        region[mask] = intensity
        boxes.append((r, c, size))
    img += rng.normal(0.0, cfg.noise_std, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), boxes


def _make_split(cfg, per_class, quadrants, split_code):
    images, labels, boxes = [], [], []
    index = 0
    for label, glyphs in enumerate(cfg.classes):
        for _ in range(per_class):
            # per-image stream so generation order and parallelism do not matter
            rng = np.random.default_rng([cfg.seed, split_code, index])
            img, b = render_scene(glyphs, quadrants, cfg, rng)
            images.append(img)
            labels.append(label)
            boxes.append(b)
            index += 1
    if not images:
        return SceneDataset(np.zeros((0, cfg.canvas, cfg.canvas), np.float32), np.zeros(0, np.int64), cfg.class_names, [])
    return SceneDataset(np.stack(images), np.array(labels, dtype=np.int64), cfg.class_names, boxes)


def generate_dataset(cfg):
    """``(train, test)`` splits; the test split is layout-stressed when ``cfg.layout_stress``."""
    train = _make_split(cfg, cfg.train_per_class, STANDARD_QUADRANTS, 0)
    test_quadrants = STRESS_QUADRANTS if cfg.layout_stress else STANDARD_QUADRANTS
    test = _make_split(cfg, cfg.test_per_class, test_quadrants, 1)
    return train, test


def generate_glyph_dataset(per_class, size=32, glyphs=GLYPHS, scale_range=(0.5, 1.0), glyph_size=24,
                           intensity_range=(0.4, 1.0), noise_std=0.05, seed=0):
    """Object-centric images: one glyph per image, labelled by glyph type."""
    images, labels = [], []
    index = 0
    for label, kind in enumerate(glyphs):
        for _ in range(per_class):
            rng = np.random.default_rng([seed, 7, index])
            s = max(3, min(size, int(round(glyph_size * rng.uniform(*scale_range)))))
            img = np.zeros((size, size))
            r = int(rng.integers(0, size - s + 1))
            c = int(rng.integers(0, size - s + 1))
            img[r : r + s, c : c + s][glyph_mask(kind, s)] = rng.uniform(*intensity_range)
            img += rng.normal(0.0, noise_std, img.shape)
            images.append(np.clip(img, 0, 1).astype(np.float32))
            labels.append(label)
            index += 1
    return SceneDataset(np.stack(images), np.array(labels, dtype=np.int64), tuple(glyphs))


MANIFEST = "manifest.txt"


def save_dataset(dataset, root):
    """Write ``root/<class_name>/img_NNNN.pgm`` plus a ``manifest.txt`` of ``path class_index`` lines."""
    os.makedirs(root, exist_ok=True)
    lines = []
    counters = {}
    for img, label in zip(dataset.images, dataset.labels):
        name = dataset.class_names[int(label)]
        k = counters.get(name, 0)
        counters[name] = k + 1
        rel = f"{name}/img_{k:04d}.pgm"
        os.makedirs(os.path.join(root, name), exist_ok=True)
        save_image(os.path.join(root, rel), img)
        lines.append(f"{rel} {int(label)}\n")
    with open(os.path.join(root, MANIFEST), "w") as fh:
        fh.write(f"# classes: {' '.join(dataset.class_names)}\n")
        fh.writelines(lines)


def load_dataset(root):
    """Read a dataset written by :func:`save_dataset`, or any ``root/<class>/*.pgm|ppm`` tree."""
    manifest = os.path.join(root, MANIFEST)
    entries = []
    class_names = None
    if os.path.exists(manifest):
        with open(manifest) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if line.startswith("# classes:"):
                    class_names = tuple(line.split(":", 1)[1].split())
                    continue
                if not line or line.startswith("#"):
                    continue
                parts = line.rsplit(maxsplit=1)
                if len(parts) != 2 or not parts[1].isdigit():
                    raise FormatError(f"{manifest}:{lineno}: expected '<path> <class index>'")
                entries.append((parts[0], int(parts[1])))
        if class_names is None:
            n = max(lbl for _, lbl in entries) + 1 if entries else 0
            names = {}
            for rel, lbl in entries:
                names.setdefault(lbl, rel.split("/")[0])
            class_names = tuple(names.get(i, f"class{i}") for i in range(n))
    else:
        class_names = tuple(sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))))
        for lbl, name in enumerate(class_names):
            for fname in sorted(os.listdir(os.path.join(root, name))):
                if fname.lower().endswith((".pgm", ".ppm")):
                    entries.append((f"{name}/{fname}", lbl))
    images = [to_grayscale(load_image(os.path.join(root, rel))) for rel, _ in entries]
    labels = np.array([lbl for _, lbl in entries], dtype=np.int64)
    if images and len({im.shape for im in images}) == 1:
        images = np.stack(images)
    return SceneDataset(images, labels, class_names)
