"""Multi-scale resizing and dense sliding-window patch extraction."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError

SCALES = (0.75, 1.0, 1.25)


@dataclass(frozen=True)
class PyramidSpec:
    base: int
    scales: tuple = SCALES

    def __post_init__(self):
        if self.base < 1:
            raise ConfigurationError("pyramid base dimension must be positive")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ConfigurationError("scales must be positive")

    def targets(self):
        return [int(np.floor(s * self.base)) for s in self.scales]


@dataclass(frozen=True)
class PatchSpec:
    side: int = 32
    stride: int = 8

    def __post_init__(self):
        if self.side < 1 or self.stride < 1:
            raise ConfigurationError("patch side and stride must be positive")
        if self.stride > self.side:
            raise ConfigurationError(f"stride {self.stride} exceeds patch side {self.side}")


FULL_PATCHES = PatchSpec(224, 32)
TOY_PATCHES = PatchSpec(32, 8)


def _axis_weights(n_in, n_out):
    """Source indices and weights with corner-aligned sampling (exact on affine images)."""
    if n_out == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_to(image, height, width):
    image = np.asarray(image)
    if image.ndim not in (2, 3) or min(image.shape[:2]) < 1:
        raise DimensionError(f"cannot resize image of shape {image.shape}")
    if height < 1 or width < 1:
        raise DimensionError("target size must be positive")
    h, w = image.shape[:2]
    if (h, w) == (height, width):
        return image.copy()
    r0, r1, fr = _axis_weights(h, height)
    c0, c1, fc = _axis_weights(w, width)
    img = image.astype(np.float64)
    if img.ndim == 3:
        fr = fr[:, None, None]
        fc = fc[None, :, None]
    else:
        fr = fr[:, None]
        fc = fc[None, :]
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bottom = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    out = top * (1 - fr) + bottom * fr
    return out.astype(image.dtype if image.dtype.kind == "f" else np.float32)


def resize(image, target):
    """Bilinear resize so the smaller side equals ``target``; aspect ratio kept."""
    image = np.asarray(image)
    if image.ndim not in (2, 3) or min(image.shape[:2]) < 1:
        raise DimensionError(f"cannot resize image of shape {image.shape}")
    if target < 1:
        raise DimensionError("target dimension must be >= 1")
    h, w = image.shape[:2]
    if h <= w:
        nh, nw = target, max(1, int(np.floor(w * target / h)))
    else:
        nh, nw = max(1, int(np.floor(h * target / w))), target
    return resize_to(image, nh, nw)


def build_pyramid(image, spec):
    return [resize(image, t) for t in spec.targets()]


def patch_grid(height, width, spec):
    """Patch counts per axis: ``(extent - side) // stride + 1``."""
    if height < spec.side or width < spec.side:
        return 1, 1
    return (height - spec.side) // spec.stride + 1, (width - spec.side) // spec.stride + 1


def pad_to_patch(image, side):
    """Edge-replicate an image, centred, until both extents are at least ``side``."""
    pads = []
    for extent in image.shape[:2]:
        extra = max(0, side - extent)
        pads.append((extra // 2, extra - extra // 2))
    pads += [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pads, mode="edge")


def extract_patches(image, spec):
    """Row-major sliding-window patches and their ``(row, col)`` grid coordinates.

    Returns ``(patches, coords)`` with ``patches`` shaped ``(count, side, side[, c])``.
    An image smaller than the patch yields one centred, edge-padded patch.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    side, stride = spec.side, spec.stride
    if h < side or w < side:
        padded = pad_to_patch(image, side)
        top, left = (padded.shape[0] - side) // 2, (padded.shape[1] - side) // 2
        return padded[None, top : top + side, left : left + side].copy(), [(0, 0)]
    rows, cols = patch_grid(h, w, spec)
    patches = np.empty((rows * cols, side, side) + image.shape[2:], dtype=image.dtype)
    coords = []
    for i in range(rows):
        for j in range(cols):
            patches[i * cols + j] = image[i * stride : i * stride + side, j * stride : j * stride + side]
            coords.append((i, j))
    return patches, coords
