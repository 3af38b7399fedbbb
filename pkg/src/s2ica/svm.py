"""One-vs-rest linear SVM trained by full-batch subgradient descent.

Each binary problem minimises ``lam/2 |w|^2 + mean(hinge)`` with
``lam = 1 / C``, using the step ``1 / (lam * t)``. Because the loss is a mean,
duplicating the training set leaves the solution unchanged. The bias is folded in as a constant feature.
Descriptors are optionally L2-normalised and then shifted by the training
mean, which keeps the (regularised) bias term small.
"""

from dataclasses import dataclass, field

import numpy as np

from . import formats
from .errors import ConfigurationError, DimensionError, EmptyInputError, FormatError, StateError


def _normalise(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


@dataclass
class LinearSVM:
    weights: np.ndarray  # (n_classes, dim)
    bias: np.ndarray  # (n_classes,)
    C: float = 1.0
    normalize: bool = True
    classes: tuple = ()
    history: list = field(default_factory=list, repr=False)
    center: np.ndarray = None  # (dim,) subtracted after normalisation

    @property
    def n_classes(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1]

    def _prepare(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = x[None, :] if single else x
        if x.shape[1] != self.dim:
            raise DimensionError(f"descriptor length {x.shape[1]} != model dimension {self.dim}")
        x = _normalise(x) if self.normalize else x
        if self.center is not None:
            x = x - self.center.astype(np.float64)
        return x, single

    def decision_function(self, x):
        x, single = self._prepare(x)
        scores = x @ self.weights.astype(np.float64).T + self.bias.astype(np.float64)
        return scores[0] if single else scores


def _hinge_objective(w, xa, y, lam):
    margins = y * (xa @ w)
    return 0.5 * lam * float(w @ w) + float(np.mean(np.maximum(0.0, 1.0 - margins)))


def _train_binary(xa, y, lam, epochs):
    """Projected subgradient steps; returns the average of the second half of the iterates."""
    w = np.zeros(xa.shape[1])
    radius = 1.0 / np.sqrt(lam)
    start = epochs // 2 + 1
    avg = np.zeros_like(w)
    objective = []
    for t in range(1, epochs + 1):
        active = y * (xa @ w) < 1.0
        sub = (y[active, None] * xa[active]).sum(axis=0) / len(y)
        w = (1.0 - 1.0 / t) * w + sub / (lam * t)
        norm = np.linalg.norm(w)
        if norm > radius:
            w *= radius / norm
        if t >= start:
            avg += (w - avg) / (t - start + 1)
        objective.append(_hinge_objective(w, xa, y, lam))
    return avg, objective


def train_svm(descriptors, labels, C=1.0, epochs=200, seed=0, normalize=True, n_classes=None, center=False):
    """Fit one binary hinge-loss classifier per class.

    ``seed`` is accepted for interface stability; the full-batch solver is
    deterministic and order-independent, so it does not influence the result.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise DimensionError("descriptors must be (n, dim) with one label each")
    if len(y) == 0:
        raise EmptyInputError("no training descriptors")
    k = int(n_classes if n_classes is not None else y.max() + 1)
    if len(np.unique(y)) < 2 or k < 2:
        raise ConfigurationError("SVM training needs at least two classes")
    if C <= 0 or epochs < 1:
        raise ConfigurationError("C and epochs must be positive")
    if normalize:
        x = _normalise(x)
    mean = x.mean(axis=0) if center else None
    if center:
        x = x - mean
    xa = np.hstack([x, np.ones((len(x), 1))])
    lam = 1.0 / C
    weights = np.zeros((k, x.shape[1]))
    bias = np.zeros(k)
    history = np.zeros(epochs)
    for c in range(k):
        target = np.where(y == c, 1.0, -1.0)
        w, obj = _train_binary(xa, target, lam, epochs)
        weights[c], bias[c] = w[:-1], w[-1]
        history += obj
    return LinearSVM(weights.astype(np.float32), bias.astype(np.float32), float(C), bool(normalize),
                     tuple(range(k)), history.tolist(), None if mean is None else mean.astype(np.float32))


def predict(model, descriptor):
    """``(class, scores)``; ties go to the smallest class index."""
    scores = model.decision_function(descriptor)
    if scores.ndim != 1:
        raise DimensionError("predict takes one descriptor; use predict_many for batches")
    return int(np.argmax(scores)), scores


def predict_many(model, descriptors):
    return np.argmax(model.decision_function(descriptors), axis=1)


def confusion_matrix(true, pred, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true), np.asarray(pred)), 1)
    return cm


def evaluate(model, descriptors, labels):
    """``(accuracy, confusion)`` with rows indexed by the true class."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise EmptyInputError("empty evaluation set")
    pred = predict_many(model, descriptors)
    cm = confusion_matrix(labels, pred, model.n_classes)
    return float(np.trace(cm) / cm.sum()), cm


def save_confusion_csv(path, cm):
    with open(path, "w") as fh:
        for row in np.asarray(cm):
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def save_svm(path, model):
    header = {"kind": "svm", "C": model.C, "normalize": model.normalize, "classes": list(model.classes),
              "centered": model.center is not None}
    arrays = [model.weights, model.bias] + ([model.center] if model.center is not None else [])
    formats.write_container(path, formats.SVM_MAGIC, header, arrays)


def load_svm(path):
    header, arrays = formats.read_container(path, formats.SVM_MAGIC)
    centered = bool(header.get("centered", False))
    if header.get("kind") != "svm" or len(arrays) != 2 + centered:
        raise FormatError("container does not hold a linear SVM", offset=12)
    weights, bias = arrays[:2]
    center = arrays[2] if centered else None
    if weights.ndim != 2 or bias.shape != (weights.shape[0],) or (centered and center.shape != (weights.shape[1],)):
        raise FormatError("inconsistent SVM blob shapes", offset=12)
    return LinearSVM(weights, bias, header.get("C", 1.0), header.get("normalize", True),
                     tuple(header.get("classes", ())), [], center)


def require_trained(model):
    if model is None:
        raise StateError("SVM has not been trained")
    return model
