"""Image descriptors from two networks' pooled last-conv activations.

For every pyramid level the image is cut into dense patches; each patch is
pushed through both trained networks and its last-conv ReLU maps are
max-pooled over space to a per-channel vector. Vectors are pooled across
patches, then across scales, and the two networks' results are concatenated
(plain network first, SU network second). Without an SU network the
descriptor is the plain network's half alone.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyInputError, StateError
from .network import to_feature_map
from .pyramid import PatchSpec, PyramidSpec, extract_patches, patch_grid, resize

POOLS = ("max", "mean")


def pool_patches(features, mode="max"):
    """Element-wise max (or mean) over a list of equal-length vectors."""
    if len(features) == 0:
        raise EmptyInputError("nothing to pool")
    lengths = {np.shape(f) for f in features}
    if len(lengths) != 1 or len(next(iter(lengths))) != 1:
        raise DimensionError(f"features must be equal-length vectors, got shapes {sorted(lengths)}")
    stacked = np.stack([np.asarray(f) for f in features])
    if mode == "max":
        return stacked.max(axis=0)
    if mode == "mean":
        return stacked.mean(axis=0)
    raise ValueError(f"pool mode must be one of {POOLS}")


def patch_vectors(net, patches, batch_size=512):
    """Per-patch channel vectors: last-conv activations max-pooled over space."""
    patches = np.asarray(patches)
    out = []
    for s in range(0, len(patches), batch_size):
        maps = net.conv_maps(to_feature_map(patches[s : s + batch_size].astype(net.dtype)), mode="infer")
        out.append(maps.max(axis=(0, 1)).T)
    return np.concatenate(out, axis=0)


@dataclass
class DescriptorPipeline:
    """Both trained networks plus the pyramid and patch layout used to describe images."""

    net_w: object
    net_su: object
    pyramid: PyramidSpec
    patches: PatchSpec
    pool: str = "max"
    use_pyramid: bool = True

    def __post_init__(self):
        if self.pool not in POOLS:
            raise ValueError(f"pool mode must be one of {POOLS}")

    @property
    def scale_targets(self):
        return self.pyramid.targets() if self.use_pyramid else [self.pyramid.base]

    @property
    def networks(self):
        return [self.net_w] if self.net_su is None else [self.net_w, self.net_su]

    @property
    def feature_length(self):
        return len(self.networks) * self.net_w.conv_output_shape()[2]

    def scale_patch_features(self, image):
        """``[(vectors_w, vectors_su) per scale]``, each ``(n_patches, V)``; one entry per network."""
        out = []
        for target in self.scale_targets:
            scaled = resize(image, target)
            patches, _ = extract_patches(scaled, self.patches)
            out.append(tuple(patch_vectors(net, patches) for net in self.networks))
        return out

    def describe(self, image):
        return assemble(self.scale_patch_features(image), self.pool)

    def describe_many(self, images):
        return np.stack([self.describe(im) for im in images])


def assemble(scale_features, pool="max"):
    """Pool per-scale patch vectors into the concatenated descriptor."""
    halves = []
    for k in range(len(scale_features[0])):
        per_scale = [pool_patches(list(sf[k]), pool) for sf in scale_features]
        halves.append(pool_patches(per_scale, pool))
    return np.concatenate(halves)


def describe_image(image, net_w, net_su, pyramid, patches, pool="max", use_pyramid=True):
    return DescriptorPipeline(net_w, net_su, pyramid, patches, pool, use_pyramid).describe(image)


@dataclass
class ContributionMap:
    grid: np.ndarray  # (rows, cols) scores, one per base-scale patch
    coords: list
    patches: PatchSpec
    image_shape: tuple

    def render(self):
        """Grayscale heat image in ``[0, 1]``: mean contribution of patches covering each pixel."""
        h, w = self.image_shape[:2]
        total = np.zeros((h, w))
        count = np.zeros((h, w))
        side, stride = self.patches.side, self.patches.stride
        for (i, j) in self.coords:
            total[i * stride : i * stride + side, j * stride : j * stride + side] += self.grid[i, j]
            count[i * stride : i * stride + side, j * stride : j * stride + side] += 1
        heat = np.divide(total, count, out=np.full((h, w), np.nan), where=count > 0)
        lo, hi = np.nanmin(heat), np.nanmax(heat)
        heat = np.nan_to_num(heat, nan=lo)
        # spreads at float32 rounding level count as a flat map
        if hi - lo <= 1e-5 * max(1.0, abs(hi)):
            return np.full((h, w), 0.5, dtype=np.float32)
        return ((heat - lo) / (hi - lo)).astype(np.float32)


def contribution_map(image, pipeline, svm, true_class):
    """Per-patch true-class SVM score of the descriptor built from that patch alone."""
    if svm is None or getattr(svm, "weights", None) is None:
        raise StateError("contribution maps need a trained SVM")
    scaled = resize(image, pipeline.pyramid.base)
    patches, coords = extract_patches(scaled, pipeline.patches)
    single = np.concatenate([patch_vectors(net, patches) for net in pipeline.networks], axis=1)
    scores = svm.decision_function(single)[:, true_class]
    rows, cols = patch_grid(scaled.shape[0], scaled.shape[1], pipeline.patches)
    grid = np.zeros((rows, cols))
    for s, (i, j) in zip(scores, coords):
        grid[i, j] = s
    return ContributionMap(grid, coords, pipeline.patches, scaled.shape)
