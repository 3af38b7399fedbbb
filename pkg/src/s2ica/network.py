"""Network assembly, SGD training and the pretrain / TransferNet / graft / fine-tune chain."""

from dataclasses import asdict, dataclass, replace
import csv
import math

import numpy as np

from . import formats
from .errors import (
    DimensionError,
    FormatError,
    LabelError,
    SpecificationError,
    TrainingError,
)
from .layers import (
    LRN,
    Conv2D,
    Flatten,
    FullyConnected,
    MaxPool,
    SubSample,
    softmax_xent_batch,
)
from .su import SULayer

SPATIAL_KINDS = ("conv", "lrn", "subsample", "su", "maxpool")


def to_feature_map(images):
    """``(n, h, w)`` or ``(n, h, w, c)`` images to an ``(h, w, c, n)`` map."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[..., None]
    if images.ndim != 4:
        raise DimensionError(f"expected a batch of images, got shape {images.shape}")
    return images.transpose(1, 2, 3, 0)


@dataclass
class NetworkSpec:
    """Ordered layer descriptions plus the input shape ``(h, w, c)``.

    ``profile`` is ``"full"`` or ``"toy"`` (both require 5 conv + 4 FC layers)
    or ``"custom"`` (no census check). ``init_std=None`` selects
    fan-in-scaled Gaussian initialisation. Inputs are multiplied by
    ``input_scale`` first; image networks use 255 so activations reach the
    LRN at 8-bit pixel magnitudes, the range its constants were chosen for.
    """

    input_shape: tuple
    layers: list
    profile: str = "custom"
    init_std: float = None
    input_scale: float = 1.0

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["input_shape"]), [dict(l) for l in d["layers"]], d.get("profile", "custom"), d.get("init_std"),
                   d.get("input_scale", 1.0))

    def census(self):
        kinds = [l["type"] for l in self.layers]
        return {"conv": kinds.count("conv"), "fc": kinds.count("fc"), "su": kinds.count("su")}

    @property
    def last_conv(self):
        idx = [i for i, l in enumerate(self.layers) if l["type"] == "conv"]
        if not idx:
            raise SpecificationError("network has no convolutional layer")
        return idx[-1]

    def with_su(self, n=4, p=0.5):
        """Copy with an SU layer right after the first sub-sampling layer."""
        layers = [dict(l) for l in self.layers if l["type"] != "su"]
        first_sub = next((i for i, l in enumerate(layers) if l["type"] == "subsample"), None)
        if first_sub is None:
            raise SpecificationError("no sub-sampling layer to attach the SU layer to")
        layers.insert(first_sub + 1, {"type": "su", "n": n, "p": p})
        return replace(self, layers=layers)

    def without_su(self):
        return replace(self, layers=[dict(l) for l in self.layers if l["type"] != "su"])


def toy_spec(n_classes, in_channels=1, size=32, width=(8, 16), hidden=64, su=False, su_n=4, su_p=0.5, init_std=None,
             input_scale=255.0):
    """Desk-scale profile keeping the five-conv / four-FC layout."""
    c1, c2 = width
    layers = [
        {"type": "conv", "out": c1, "k": 5, "stride": 1, "pad": 2},
        {"type": "lrn"},
        {"type": "subsample", "window": 2},
        {"type": "conv", "out": c2, "k": 3, "stride": 1, "pad": 1},
        {"type": "subsample", "window": 2},
        {"type": "conv", "out": c2, "k": 3, "stride": 1, "pad": 1},
        {"type": "conv", "out": c2, "k": 3, "stride": 1, "pad": 1},
        {"type": "conv", "out": c2, "k": 3, "stride": 1, "pad": 1},
        {"type": "fc", "out": hidden, "hidden": True},
        {"type": "fc", "out": hidden, "hidden": True},
        {"type": "fc", "out": hidden, "hidden": True},
        {"type": "fc", "out": n_classes, "hidden": False},
    ]
    spec = NetworkSpec((size, size, in_channels), layers, "toy", init_std, input_scale)
    return spec.with_su(su_n, su_p) if su else spec


def full_spec(n_classes, su=False):
    """224x224 colour profile in the spirit of the original architecture."""
    layers = [
        {"type": "conv", "out": 96, "k": 11, "stride": 4, "pad": 2},
        {"type": "lrn"},
        {"type": "subsample", "window": 2},
        {"type": "conv", "out": 256, "k": 5, "stride": 1, "pad": 2},
        {"type": "subsample", "window": 2},
        {"type": "conv", "out": 384, "k": 3, "stride": 1, "pad": 1},
        {"type": "conv", "out": 384, "k": 3, "stride": 1, "pad": 1},
        {"type": "conv", "out": 256, "k": 3, "stride": 1, "pad": 1},
        {"type": "fc", "out": 4096, "hidden": True},
        {"type": "fc", "out": 4096, "hidden": True},
        {"type": "fc", "out": 4096, "hidden": True},
        {"type": "fc", "out": n_classes, "hidden": False},
    ]
    spec = NetworkSpec((224, 224, 3), layers, "full", 0.01, 255.0)
    return spec.with_su() if su else spec


def layer_shapes(spec):
    """Shape after every layer (flatten is implicit before the first FC).

    Raises :class:`SpecificationError` if the spec is inconsistent.
    """
    census = spec.census()
    if spec.profile in ("full", "toy") and (census["conv"], census["fc"]) != (5, 4):
        raise SpecificationError(
            f"{spec.profile} profile needs 5 conv and 4 fc layers, got {census['conv']} and {census['fc']}"
        )
    if census["su"] > 1:
        raise SpecificationError("at most one SU layer is allowed")
    kinds = [l["type"] for l in spec.layers]
    if "su" in kinds:
        su_at = kinds.index("su")
        if "subsample" not in kinds or su_at != kinds.index("subsample") + 1:
            raise SpecificationError("SU layer must sit right after the first sub-sampling layer")

    shape = tuple(int(d) for d in spec.input_shape)
    shapes = []
    flat = False
    for i, l in enumerate(spec.layers):
        t = l["type"]
        try:
            if t in SPATIAL_KINDS:
                if flat:
                    raise SpecificationError(f"layer {i} ({t}) follows a fully connected layer")
                h, w, c = shape
                if t == "conv":
                    k, s, p = l["k"], l.get("stride", 1), l.get("pad", 0)
                    shape = ((h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1, l["out"])
                elif t == "subsample":
                    shape = (h // l["window"], w // l["window"], c)
                elif t == "maxpool":
                    win = l["window"]
                    s = l.get("stride") or win
                    shape = ((h - win) // s + 1, (w - win) // s + 1, c)
                elif t == "su":
                    level = math.isqrt(l.get("n", 4)) // 2
                    if level < 1 or h < level or w < level:
                        raise SpecificationError(f"SU layer {i}: invalid block count for {h}x{w} map")
            elif t == "fc":
                if not flat:
                    shape = (int(np.prod(shape)),)
                    flat = True
                shape = (l["out"],)
            else:
                raise SpecificationError(f"unknown layer type {t!r}")
        except KeyError as exc:
            raise SpecificationError(f"layer {i} ({t}) is missing field {exc}") from None
        if min(shape) < 1:
            raise SpecificationError(f"layer {i} ({t}) produces empty shape {shape}")
        shapes.append(shape)
    return shapes


class Network:
    """A sequence of layers with an optional implicit flatten before the FC part."""

    def __init__(self, spec, layers, variant=None):
        self.spec = spec
        self.layers = layers
        self.variant = variant

    # -- structure -----------------------------------------------------------------
    @property
    def last_conv(self):
        return self.spec.last_conv

    def census(self):
        return self.spec.census()

    def parameters(self):
        """``(layer_index, name, array)`` in declaration order."""
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                yield i, name, layer.params[name]

    def num_parameters(self):
        return sum(a.size for _, _, a in self.parameters())

    @property
    def dtype(self):
        for _, _, a in self.parameters():
            return a.dtype
        return np.float32

    def astype(self, dtype):
        net = self.copy()
        for layer in net.layers:
            layer.astype(dtype)
        return net

    def copy(self):
        return Network(self.spec, [l.copy() for l in self.layers], self.variant)

    def conv_output_shape(self):
        return layer_shapes(self.spec)[self.last_conv]

    # -- forward / backward -------------------------------------------------------
    def _run(self, x, stop, mode, rng, su_r, keep):
        caches = []
        if self.spec.input_scale != 1.0:
            x = x * np.asarray(self.spec.input_scale, dtype=x.dtype)
        for i, layer in enumerate(self.layers[:stop]):
            if isinstance(layer, FullyConnected) and x.ndim == 4:
                flat = Flatten()
                x, c = flat.forward(x)
                caches.append((flat, c))
            if isinstance(layer, SULayer):
                x, c = layer.forward(x, rng=rng, mode=mode, r=su_r)
            else:
                x, c = layer.forward(x)
            caches.append((layer, c if keep else None))
        return x, caches

    def forward(self, x, mode="infer", rng=None, su_r=None, stop=None):
        """Run on an ``(h, w, c, n)`` map; ``stop`` truncates after that many layers."""
        out, _ = self._run(x, stop, mode, rng, su_r, keep=False)
        return out

    def forward_train(self, x, mode="train", rng=None, su_r=None):
        return self._run(x, None, mode, rng, su_r, keep=True)

    def backward(self, caches, grad_out):
        """Return ``(grad_input, grads)`` with ``grads[layer_index][name]``."""
        grads = {}
        index = {id(l): i for i, l in enumerate(self.layers)}
        g = grad_out
        for layer, cache in reversed(caches):
            g, pg = layer.backward(cache, g)
            if id(layer) in index:
                grads[index[id(layer)]] = pg
        if self.spec.input_scale != 1.0:
            g = g * np.asarray(self.spec.input_scale, dtype=g.dtype)
        return g, grads

    def loss_and_grads(self, x, labels, mode="train", rng=None, su_r=None):
        logits, caches = self.forward_train(x, mode, rng, su_r)
        loss, g = softmax_xent_batch(logits, labels)
        _, grads = self.backward(caches, g)
        return loss, logits, grads

    def conv_features(self, x, mode="infer", rng=None):
        """ReLU activations at the last conv layer, one flattened row per sample."""
        out = self.forward(x, mode=mode, rng=rng, stop=self.last_conv + 1)
        n = out.shape[3]
        return np.ascontiguousarray(out.transpose(3, 0, 1, 2)).reshape(n, -1)

    def conv_maps(self, x, mode="infer", rng=None):
        return self.forward(x, mode=mode, rng=rng, stop=self.last_conv + 1)

    def predict(self, x, batch_size=256):
        return np.argmax(self.logits(x, batch_size), axis=1)

    def logits(self, inputs, batch_size=256):
        """Logits for batch-first inputs (images ``(n, h, w[, c])`` or feature rows)."""
        outs = []
        for s in range(0, len(inputs), batch_size):
            outs.append(self.forward(_to_net_input(self, inputs[s : s + batch_size])))
        return np.concatenate(outs, axis=0)


def _to_net_input(net, batch):
    batch = np.asarray(batch, dtype=net.dtype)
    if len(net.spec.input_shape) == 1:
        return batch
    return to_feature_map(batch)


def _make_layer(l, in_shape, rng, init_std, dtype):
    t = l["type"]

    def gauss(shape, fan_in):
        std = init_std if init_std is not None else math.sqrt(2.0 / fan_in)
        return (rng.standard_normal(shape) * std).astype(dtype)

    if t == "conv":
        c = in_shape[2]
        k = l["k"]
        return Conv2D(gauss((k, k, c, l["out"]), k * k * c), np.zeros(l["out"], dtype), l.get("stride", 1), l.get("pad", 0))
    if t == "lrn":
        return LRN(**{k: l[k] for k in ("alpha", "beta", "gamma", "sigma") if k in l})
    if t == "subsample":
        c = in_shape[2]
        return SubSample(l["window"], np.ones(c, dtype), np.zeros(c, dtype))
    if t == "su":
        return SULayer(l.get("n", 4), l.get("p", 0.5), l.get("infer_r", 1))
    if t == "maxpool":
        return MaxPool(l["window"], l.get("stride"))
    if t == "fc":
        fan_in = int(np.prod(in_shape))
        return FullyConnected(gauss((fan_in, l["out"]), fan_in), np.zeros(l["out"], dtype), l.get("hidden", True))
    raise SpecificationError(f"unknown layer type {t!r}")


def build_network(spec, seed=0, dtype=np.float32, variant=None):
    """Instantiate ``spec`` with seeded Gaussian weights and zero biases."""
    shapes = layer_shapes(spec)
    rng = np.random.default_rng(seed)
    layers = []
    in_shape = tuple(spec.input_shape)
    for l, out_shape in zip(spec.layers, shapes):
        layers.append(_make_layer(l, in_shape, rng, spec.init_std, dtype))
        in_shape = out_shape
    return Network(spec, layers, variant)


# -- training ---------------------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    epochs: int = 20
    decay_at: float = 2 / 3
    decay_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise SpecificationError("learning rate, momentum and weight decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise SpecificationError("batch size and epochs must be positive")

    def lr_at(self, epoch):
        if epoch >= math.ceil(self.decay_at * self.epochs) and self.epochs > 1:
            return self.lr * self.decay_factor
        return self.lr


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float


class MetricsLog:
    """Epoch records echoed as ``epoch=.. loss=.. accuracy=..`` lines and optionally to CSV."""

    def __init__(self, csv_path=None, stream=None, prefix=""):
        self.records = []
        self.csv_path = csv_path
        self.stream = stream
        self.prefix = prefix
        if csv_path:
            with open(csv_path, "w", newline="") as fh:
                csv.writer(fh).writerow(["epoch", "loss", "accuracy"])

    def __call__(self, rec):
        self.records.append(rec)
        if self.stream is not None:
            print(f"{self.prefix}epoch={rec.epoch} loss={rec.loss:.6f} accuracy={rec.accuracy:.4f}", file=self.stream)
        if self.csv_path:
            with open(self.csv_path, "a", newline="") as fh:
                csv.writer(fh).writerow([rec.epoch, f"{rec.loss:.8g}", f"{rec.accuracy:.6g}"])


def fit(net, inputs, labels, cfg, log=None):
    """Minibatch SGD with momentum and weight decay on softmax cross-entropy.

    Trains a copy of ``net`` and returns ``(trained, records)``. Batches are
    drawn from a seeded shuffle, so identical inputs give identical weights.
    """
    inputs = np.asarray(inputs)
    labels = np.asarray(labels, dtype=np.int64)
    if len(inputs) != len(labels):
        raise DimensionError(f"{len(inputs)} inputs but {len(labels)} labels")
    if len(inputs) == 0:
        raise DimensionError("empty training set")
    n_out = net.layers[-1].fan_out
    if labels.min() < 0 or labels.max() >= n_out:
        raise LabelError(f"labels must lie in [0, {n_out})")

    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    velocity = {(i, name): np.zeros_like(a) for i, name, a in net.parameters()}
    records = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(inputs))
        total, correct = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            x = _to_net_input(net, inputs[idx])
            loss, logits, grads = net.loss_and_grads(x, labels[idx], rng=rng)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"loss became {loss} at epoch {epoch + 1}, batch starting {s}; "
                    f"try a smaller learning rate (current {lr})"
                )
            total += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
            for i, layer in enumerate(net.layers):
                for name, g in grads.get(i, {}).items():
                    p = layer.params[name]
                    v = velocity[(i, name)]
                    v *= cfg.momentum
                    v -= lr * (g + cfg.weight_decay * p)
                    p += v
        rec = EpochRecord(epoch + 1, total / len(inputs), correct / len(inputs))
        records.append(rec)
        if log is not None:
            log(rec)
    return net, records


def accuracy(net, inputs, labels):
    return float(np.mean(net.predict(inputs) == np.asarray(labels)))


def pretrain(net, images, labels, cfg, log=None):
    """Supervised training of the full CNN on a source dataset."""
    trained, records = fit(net, images, labels, cfg, log)
    trained.variant = "pretrained"
    return trained, records


def extract_conv_features(net, patches, batch_size=256):
    """Flattened last-conv ReLU activations for a batch-first patch array."""
    patches = np.asarray(patches)
    expected = tuple(net.spec.input_shape)
    got = patches.shape[1:] if patches.ndim == 4 else patches.shape[1:] + (1,)
    if got != expected:
        raise DimensionError(f"patches are {got}, network expects {expected}")
    rows = [
        net.conv_features(to_feature_map(patches[s : s + batch_size].astype(net.dtype)))
        for s in range(0, len(patches), batch_size)
    ]
    return np.concatenate(rows, axis=0)


@dataclass
class TransferNetSpec:
    in_features: int
    n_classes: int
    hidden: int = 4096
    n_hidden: int = 3

    def __post_init__(self):
        if self.n_hidden != 3:
            raise SpecificationError("TransferNet has exactly three hidden layers")
        if self.n_classes < 2 or self.hidden < 1 or self.in_features < 1:
            raise SpecificationError("TransferNet sizes must be positive with >= 2 classes")

    def network_spec(self, init_std=None):
        layers = [{"type": "fc", "out": self.hidden, "hidden": True} for _ in range(self.n_hidden)]
        layers.append({"type": "fc", "out": self.n_classes, "hidden": False})
        return NetworkSpec((self.in_features,), layers, "custom", init_std)


def build_transfernet(tspec, seed=0, init_std=None):
    return build_network(tspec.network_spec(init_std), seed=seed, variant="transfernet")


def train_transfernet(features, labels, tspec, cfg, log=None, init_std=None):
    """Train the four-layer FC stack on frozen conv features."""
    labels = np.asarray(labels)
    if len(features) != len(labels):
        raise DimensionError(f"{len(features)} feature rows but {len(labels)} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= tspec.n_classes):
        raise LabelError(f"labels must lie in [0, {tspec.n_classes})")
    net = build_transfernet(tspec, seed=cfg.seed, init_std=init_std)
    trained, records = fit(net, features, labels, cfg, log)
    trained.variant = "transfernet"
    return trained, records


def graft(base, transfer):
    """Conv stack of ``base`` (through the last conv) followed by ``transfer``'s FC layers.

    Layers are copied, so neither input network is modified.
    """
    cut = base.last_conv + 1
    volume = int(np.prod(layer_shapes(base.spec)[base.last_conv]))
    fan_in = transfer.layers[0].fan_in
    if fan_in != volume:
        raise DimensionError(f"TransferNet fan-in {fan_in} != last-conv volume {volume}")
    layers_spec = [dict(l) for l in base.spec.layers[:cut]] + [dict(l) for l in transfer.spec.layers]
    profile = base.spec.profile if base.spec.profile in ("full", "toy") else "custom"
    spec = NetworkSpec(base.spec.input_shape, layers_spec, profile, base.spec.init_std, base.spec.input_scale)
    layer_shapes(spec)
    layers = [l.copy() for l in base.layers[:cut]] + [l.copy() for l in transfer.layers]
    return Network(spec, layers, variant="grafted")


def finetune(net, patches, labels, cfg, with_su=False, su_n=4, su_p=0.5, log=None):
    """End-to-end training of a grafted network, with or without the SU layer.

    Returns ``(network, records)``; the network's variant is ``"W_su"`` or ``"W"``.
    """
    if with_su:
        net = insert_su(net, su_n, su_p)
    else:
        net = remove_su(net)
    trained, records = fit(net, patches, labels, cfg, log)
    trained.variant = "W_su" if with_su else "W"
    return trained, records


def insert_su(net, n=4, p=0.5):
    spec = net.spec.with_su(n, p)
    plain = [l.copy() for l in net.layers if not isinstance(l, SULayer)]
    at = next(i for i, l in enumerate(spec.layers) if l["type"] == "su")
    plain.insert(at, SULayer(n, p))
    layer_shapes(spec)
    return Network(spec, plain, net.variant)


def remove_su(net):
    return Network(net.spec.without_su(), [l.copy() for l in net.layers if not isinstance(l, SULayer)], net.variant)


# -- persistence --------------------------------------------------------------------------


def _spec_from_layers(net):
    layers = []
    for l, layer in zip(net.spec.layers, net.layers):
        entry = dict(l)
        if layer.kind == "su":
            entry.update(layer.config())
        layers.append(entry)
    d = net.spec.to_dict()
    d["layers"] = layers
    return d


def save_model(path, net):
    header = {"kind": "network", "variant": net.variant, "spec": _spec_from_layers(net)}
    arrays = [a for _, _, a in net.parameters()]
    formats.write_container(path, formats.MODEL_MAGIC, header, arrays)


def load_model(path):
    header, arrays = formats.read_container(path, formats.MODEL_MAGIC)
    if header.get("kind") != "network":
        raise FormatError(f"container holds {header.get('kind')!r}, not a network", offset=12)
    try:
        spec = NetworkSpec.from_dict(header["spec"])
        net = build_network(spec, seed=0, variant=header.get("variant"))
    except (KeyError, TypeError, SpecificationError) as exc:
        raise FormatError(f"invalid network description: {exc}", offset=12) from None
    slots = list(net.parameters())
    if len(slots) != len(arrays):
        raise FormatError(f"expected {len(slots)} parameter blobs, found {len(arrays)}", offset=12)
    for (i, name, current), blob in zip(slots, arrays):
        if current.shape != blob.shape:
            raise FormatError(f"layer {i} {name}: shape {blob.shape} != {current.shape}", offset=12)
        net.layers[i].params[name] = blob
    return net
