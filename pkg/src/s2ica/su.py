"""Spatially unstructured layer: block-wise spatial shuffling of feature maps.

Two descriptions of the same idea live here. The matrix form builds a
``sqrt(n) x sqrt(n)`` grid of block scopes ``U`` and permutes it with a
block-diagonal swap matrix ``T`` (``U_hat = T' U T``). The executable form
(:func:`shuffle_alg1`) splits the map into ``level x level`` blocks and
half-rotates every block along rows and columns. The network uses the
executable form.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigurationError, DimensionError, StateError
from .layers import Layer
from .tensor import as_feature_map

SWAP = np.array([[0, 1], [1, 0]], dtype=np.int64)


def rearrangement_level(n):
    """``floor(sqrt(n) / 2)``: blocks per axis in the executable shuffle."""
    if n < 1:
        raise ConfigurationError(f"block count must be positive, got {n}")
    return math.isqrt(n) // 2


def _grid_size(n):
    root = math.isqrt(n)
    if root * root != n:
        raise ConfigurationError(f"block count {n} is not a perfect square")
    return root


def boundaries(extent, parts):
    """Zero-based block start offsets plus the end sentinel, equal split."""
    if parts < 1:
        raise ConfigurationError("need at least one block per axis")
    if extent < parts:
        raise DimensionError(f"extent {extent} smaller than {parts} blocks")
    return np.floor(np.linspace(0, extent, parts + 1)).astype(int)


@dataclass(frozen=True)
class BlockGrid:
    """Grid of block scopes.

    ``scopes[i][j]`` is ``((r0, r1), (c0, c1))`` with 1-based inclusive
    start/end indices, matching how the scope tuples are usually written.
    """

    scopes: tuple
    height: int
    width: int

    @property
    def shape(self):
        return (len(self.scopes), len(self.scopes[0]))

    def cells(self, i, j):
        (r0, r1), (c0, c1) = self.scopes[i][j]
        return [(r, c) for r in range(r0 - 1, r1) for c in range(c0 - 1, c1)]


def _grid_from_boundaries(height, width, rows, cols):
    scopes = tuple(
        tuple(
            ((int(rows[i]) + 1, int(rows[i + 1])), (int(cols[j]) + 1, int(cols[j + 1])))
            for j in range(len(cols) - 1)
        )
        for i in range(len(rows) - 1)
    )
    return BlockGrid(scopes, height, width)


def build_block_grid(height, width, n):
    """``level x level`` grid used by the executable shuffle."""
    level = rearrangement_level(n)
    if level < 1:
        raise ConfigurationError(f"n={n} gives rearrangement level 0; need n >= 4")
    if height < level or width < level:
        raise DimensionError(f"{height}x{width} map is smaller than the {level}x{level} grid")
    return _grid_from_boundaries(height, width, boundaries(height, level), boundaries(width, level))


def build_scope_matrix(height, width, n):
    """``sqrt(n) x sqrt(n)`` scope matrix ``U`` for the matrix form."""
    root = _grid_size(n)
    if height < root or width < root:
        raise DimensionError(f"{height}x{width} map is smaller than the {root}x{root} grid")
    return _grid_from_boundaries(height, width, boundaries(height, root), boundaries(width, root))


def build_transform(n):
    """Block-diagonal matrix of ``sqrt(n)/2`` copies of the 2x2 swap matrix."""
    root = _grid_size(n)
    if root % 2:
        raise ConfigurationError(f"sqrt(n)={root} is odd; swap blocks cannot tile T")
    return np.kron(np.eye(root // 2, dtype=np.int64), SWAP)


def permutation_of(t):
    """For a permutation matrix, ``perm[j]`` is the row holding the 1 in column ``j``."""
    t = np.asarray(t)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise DimensionError("transform must be square")
    if not (np.isin(t, (0, 1)).all() and (t.sum(0) == 1).all() and (t.sum(1) == 1).all()):
        raise ConfigurationError("transform is not a permutation matrix")
    return t.argmax(axis=0)


def apply_block_permutation(grid, t):
    """``T' U T`` on the scope matrix.

    With ``T`` a permutation matrix, ``(T' U)[i] = U[perm[i]]`` and
    ``(X T)[:, j] = X[:, perm[j]]``, so the product only reorders scopes.
    """
    perm = permutation_of(t)
    rows, cols = grid.shape
    if rows != len(perm) or cols != len(perm):
        raise DimensionError(f"grid {grid.shape} and transform {np.shape(t)} disagree")
    scopes = tuple(tuple(grid.scopes[perm[i]][perm[j]] for j in range(cols)) for i in range(rows))
    return BlockGrid(scopes, grid.height, grid.width)


@dataclass(frozen=True)
class PermutationMap:
    """Flat spatial permutation: ``out.flat[k] = in.flat[forward[k]]`` over ``h*w`` cells."""

    height: int
    width: int
    forward: np.ndarray = field(repr=False)
    inverse: np.ndarray = field(repr=False)

    @classmethod
    def from_forward(cls, height, width, forward):
        forward = np.asarray(forward, dtype=np.int64)
        if forward.shape != (height * width,) or not np.array_equal(
            np.sort(forward), np.arange(height * width)
        ):
            raise ConfigurationError("forward index map is not a bijection")
        inverse = np.empty_like(forward)
        inverse[forward] = np.arange(forward.size)
        return cls(height, width, forward, inverse)

    @classmethod
    def identity(cls, height, width):
        idx = np.arange(height * width)
        return cls(height, width, idx, idx.copy())

    def _apply(self, x, index):
        if x.shape[0] != self.height or x.shape[1] != self.width:
            raise DimensionError(f"map is {x.shape[:2]}, permutation is for {(self.height, self.width)}")
        flat = x.reshape(self.height * self.width, *x.shape[2:])
        return flat[index].reshape(x.shape)

    def apply(self, x):
        return self._apply(x, self.forward)

    def apply_inverse(self, x):
        return self._apply(x, self.inverse)


def block_permutation_map(grid, permuted):
    """Cell map where output block ``(i, j)`` reads the input scope ``permuted[i][j]``."""
    idx = np.arange(grid.height * grid.width).reshape(grid.height, grid.width)
    out = idx.copy()
    for i, row in enumerate(grid.scopes):
        for j, ((r0, r1), (c0, c1)) in enumerate(row):
            (s0, s1), (t0, t1) = permuted.scopes[i][j]
            if (s1 - s0, t1 - t0) != (r1 - r0, c1 - c0):
                raise DimensionError("swapped blocks differ in size")
            out[r0 - 1 : r1, c0 - 1 : c1] = idx[s0 - 1 : s1, t0 - 1 : t1]
    return PermutationMap.from_forward(grid.height, grid.width, out.ravel())


def shuffle_permutation(height, width, n, clamp=False):
    """Index map realised by the executable shuffle on an ``height x width`` map.

    Every block is rotated circularly by half its height along rows and by
    half its width along columns. With ``clamp`` the level is capped so each
    block holds at least one cell.
    """
    level = rearrangement_level(n)
    if clamp:
        level = max(1, min(level, height, width))
    if level < 1:
        raise ConfigurationError(f"n={n} gives rearrangement level 0; need n >= 4")
    if height < level or width < level:
        raise DimensionError(f"{height}x{width} map is smaller than the {level}x{level} grid")
    rows = boundaries(height, level)
    cols = boundaries(width, level)
    row_src = np.empty(height, dtype=np.int64)
    col_src = np.empty(width, dtype=np.int64)
    for src, bounds in ((row_src, rows), (col_src, cols)):
        for a, b in zip(bounds[:-1], bounds[1:]):
            size = b - a
            src[a:b] = a + (np.arange(size) + size // 2) % size
    forward = (row_src[:, None] * width + col_src[None, :]).ravel()
    return PermutationMap.from_forward(height, width, forward)


def shuffle_alg1(x, n, clamp=False):
    """Shuffle every channel and batch member of ``x`` with the same block rotation."""
    x = as_feature_map(x)
    pmap = shuffle_permutation(x.shape[0], x.shape[1], n, clamp=clamp)
    return pmap.apply(x), pmap


@dataclass
class SUConfig:
    n: int = 4
    p: float = 0.5
    seed: int = 0
    mode: str = "train"
    infer_r: int = 1

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError(f"Bernoulli probability must lie in [0, 1], got {self.p}")
        if self.mode not in ("train", "infer"):
            raise ConfigurationError(f"mode must be 'train' or 'infer', got {self.mode!r}")
        if rearrangement_level(self.n) < 1:
            raise ConfigurationError(f"n={self.n} gives rearrangement level 0; need n >= 4")


class SULayer(Layer):
    """Bernoulli-gated spatial shuffle placed inside a network.

    In training, one draw ``r ~ Bernoulli(p)`` per batch sample selects the
    shuffled (``r = 1``) or untouched (``r = 0``) map. In inference ``r`` is
    ``infer_r`` for every sample.
    """

    kind = "su"

    def __init__(self, n=4, p=0.5, infer_r=1):
        SUConfig(n=n, p=p, infer_r=infer_r)
        self.n = n
        self.p = p
        self.infer_r = infer_r
        self.params = {}

    def config(self):
        return {"n": self.n, "p": self.p, "infer_r": self.infer_r}

    def output_shape(self, input_shape):
        level = rearrangement_level(self.n)
        if input_shape[0] < level or input_shape[1] < level:
            raise DimensionError(f"map {input_shape[:2]} smaller than the {level}x{level} grid")
        return tuple(input_shape)

    def draw(self, batch, rng=None, mode="train"):
        if mode == "infer":
            return np.full(batch, int(self.infer_r), dtype=np.int64)
        if rng is None:
            raise StateError("training-mode SU forward needs a random generator")
        return (rng.random(batch) < self.p).astype(np.int64)

    def forward(self, x, rng=None, mode="train", r=None):
        x = as_feature_map(x)
        if r is None:
            r = self.draw(x.shape[3], rng, mode)
        r = np.asarray(r, dtype=np.int64)
        if r.shape != (x.shape[3],):
            raise DimensionError("need one gate value per batch sample")
        if not r.any():
            return x, (None, r)
        pmap = shuffle_permutation(x.shape[0], x.shape[1], self.n)
        out = x.copy()
        on = np.flatnonzero(r)
        out[..., on] = pmap.apply(x[..., on])
        return out, (pmap, r)

    def backward(self, cache, grad_out):
        return su_backward(cache, grad_out), {}


def su_forward(cfg, x, rng=None):
    """Functional form: returns ``(out, pmap or None, r)``."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    layer = SULayer(cfg.n, cfg.p, cfg.infer_r)
    out, (pmap, r) = layer.forward(x, rng=rng, mode=cfg.mode)
    return out, pmap, r


def su_backward(cache, grad_out):
    if cache is None:
        raise StateError("no recorded permutation for SU backward")
    pmap, r = cache
    if r.shape != (grad_out.shape[3],):
        raise StateError("recorded gate does not match this gradient batch")
    if pmap is None or not r.any():
        return grad_out
    grad_in = grad_out.copy()
    on = np.flatnonzero(r)
    grad_in[..., on] = pmap.apply_inverse(grad_out[..., on])
    return grad_in
