"""Central finite-difference checks for layers and whole networks (float64)."""

import numpy as np

from .layers import LRN, Conv2D, FullyConnected, MaxPool, SubSample, softmax_xent_batch
from .network import build_network, toy_spec
from .su import SULayer

THRESHOLD = 1e-5
EPS = 1e-4
# relative error uses this denominator for near-zero gradients (FD round-off ~1e-11)
FLOOR = 1e-6


def rel_error(analytic, numeric, floor=FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def _sample(size, count, rng):
    if count is None or count >= size:
        return np.arange(size)
    return rng.choice(size, count, replace=False)


def numeric_grad(f, array, indices, eps=EPS, pattern=None, shrink=4):
    """Central differences of scalar ``f()`` w.r.t. ``array.flat[indices]`` (perturbed in place).

    ``pattern()`` may return the piecewise-linear region (e.g. ReLU masks) at
    the current point; when a step changes it the step is shrunk by 10x, up to
    ``shrink`` times, so the difference is taken on one smooth piece.
    """
    flat = array.reshape(-1)
    out = np.empty(len(indices))
    base = pattern() if pattern is not None else None
    for k, i in enumerate(indices):
        old = flat[i]
        h = eps
        for attempt in range(shrink + 1):
            flat[i] = old + h
            plus = f()
            same = pattern is None or np.array_equal(pattern(), base)
            flat[i] = old - h
            minus = f()
            same = same and (pattern is None or np.array_equal(pattern(), base))
            flat[i] = old
            if same or attempt == shrink:
                break
            h /= 10
        out[k] = (plus - minus) / (2 * h)
    return out


def check_layer(layer, x, rng, samples=None, forward_kwargs=None):
    """Max relative error of a layer's input and parameter gradients.

    The scalar objective is ``sum(out * R)`` for a fixed random ``R``.
    """
    kw = forward_kwargs or {}
    out, cache = layer.forward(x, **kw)
    proj = rng.standard_normal(out.shape)
    grad_in, pgrads = layer.backward(cache, proj)

    def objective():
        return float(np.sum(layer.forward(x, **kw)[0] * proj))

    def pattern():
        return activation_pattern([(layer, layer.forward(x, **kw)[1])])

    errs = {}
    idx = _sample(x.size, samples, rng)
    errs["input"] = rel_error(grad_in.reshape(-1)[idx], numeric_grad(objective, x, idx, pattern=pattern))
    for name, p in layer.params.items():
        idx = _sample(p.size, samples, rng)
        errs[name] = rel_error(pgrads[name].reshape(-1)[idx], numeric_grad(objective, p, idx, pattern=pattern))
    return errs


def check_network(net, x, labels, rng, samples=20, su_r=None):
    """Max relative error of loss gradients for a sample of every parameter tensor and the input."""
    net = net.astype(np.float64)
    x = np.array(x, dtype=np.float64)
    logits, caches = net.forward_train(x, mode="train", su_r=su_r)
    _, g = softmax_xent_batch(logits, labels)
    grad_in, grads = net.backward(caches, g)

    def objective():
        return softmax_xent_batch(net.forward(x, mode="train", su_r=su_r), labels)[0]

    def pattern():
        return activation_pattern(net.forward_train(x, mode="train", su_r=su_r)[1])

    errs = {}
    idx = _sample(x.size, samples, rng)
    errs["input"] = rel_error(grad_in.reshape(-1)[idx], numeric_grad(objective, x, idx, pattern=pattern))
    for i, name, p in net.parameters():
        idx = _sample(p.size, samples, rng)
        numeric = numeric_grad(objective, p, idx, pattern=pattern)
        errs[f"{i}:{net.layers[i].kind}.{name}"] = rel_error(grads[i][name].reshape(-1)[idx], numeric)
    return errs


def activation_pattern(caches):
    """Concatenated ReLU on/off masks and max-pool winners from forward caches."""
    parts = []
    for layer, cache in caches:
        if isinstance(layer, Conv2D) and layer.relu:
            parts.append((cache[1] > 0).ravel())
        elif isinstance(layer, FullyConnected) and layer.hidden:
            parts.append((cache[1] > 0).ravel())
        elif isinstance(layer, MaxPool):
            parts.append(cache[0].ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def _away_from_kinks(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)


def layer_suite(seed=0):
    """``{name: max relative error}`` for every layer type at toy shapes."""
    rng = np.random.default_rng(seed)
    f64 = np.float64
    results = {}

    conv = Conv2D(rng.standard_normal((3, 3, 2, 3)) * 0.5, rng.standard_normal(3) * 0.1, stride=1, pad=1)
    results["conv"] = max(check_layer(conv, _away_from_kinks(rng, (5, 5, 2, 2)), rng).values())
    conv2 = Conv2D(rng.standard_normal((3, 3, 2, 2)) * 0.5, rng.standard_normal(2) * 0.1, stride=2, pad=0)
    results["conv_stride2"] = max(check_layer(conv2, _away_from_kinks(rng, (7, 7, 2, 2)), rng).values())

    lrn = LRN()
    results["lrn"] = max(check_layer(lrn, rng.standard_normal((3, 3, 8, 2)) * 20, rng).values())

    sub = SubSample(2, rng.standard_normal(3).astype(f64), rng.standard_normal(3).astype(f64))
    results["subsample"] = max(check_layer(sub, rng.standard_normal((5, 4, 3, 2)), rng).values())

    fc = FullyConnected(rng.standard_normal((6, 4)), rng.standard_normal(4), hidden=True)
    results["fc"] = max(check_layer(fc, _away_from_kinks(rng, (3, 6)), rng).values())
    fc_out = FullyConnected(rng.standard_normal((6, 4)), rng.standard_normal(4), hidden=False)
    results["fc_logits"] = max(check_layer(fc_out, rng.standard_normal((3, 6)), rng).values())

    pool = MaxPool(2, 2)
    # distinct values keep the argmax away from ties
    x = rng.permutation(6 * 6 * 2 * 2).reshape(6, 6, 2, 2).astype(f64) * 0.1
    results["maxpool"] = max(check_layer(pool, x, rng).values())

    su = SULayer(n=4, p=0.5)
    x = rng.standard_normal((6, 6, 2, 3))
    results["su"] = max(check_layer(su, x, rng, forward_kwargs={"r": np.array([1, 0, 1])}).values())
    return results


def network_suite(seed=0, samples=12):
    """End-to-end check of the toy network with the SU layer fixed on."""
    rng = np.random.default_rng(seed)
    spec = toy_spec(3, su=True)
    net = build_network(spec, seed=seed, dtype=np.float64)
    x = rng.uniform(0, 1, (32, 32, 1, 2))
    labels = np.array([0, 2])
    errs = check_network(net, x, labels, rng, samples=samples, su_r=np.array([1, 1]))
    return {"toy_network": max(errs.values())}


def run_suite(seed=0):
    results = layer_suite(seed)
    results.update(network_suite(seed))
    return results
