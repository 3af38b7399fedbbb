"""Acceptance criteria 1-10, each timed against its budget.

One PASS/FAIL line per criterion is printed in the terminal summary (see conftest.py).
"""

import functools
import time

import numpy as np
import pytest

from s2ica.descriptor import DescriptorPipeline, assemble
from s2ica.errors import S2ICAError
from s2ica.formats import load_descriptors, save_descriptors
from s2ica.gradcheck import run_suite
from s2ica.imageio import decode_netpbm, encode_netpbm, load_image, save_image
from s2ica.network import (
    build_network,
    extract_conv_features,
    graft,
    load_model,
    save_model,
    toy_spec,
)
from s2ica.pipeline import PipelineConfig, run_ablation, source_dataset, train_models
from s2ica.pyramid import PyramidSpec
from s2ica.su import (
    SUConfig,
    apply_block_permutation,
    block_permutation_map,
    boundaries,
    build_scope_matrix,
    build_transform,
    rearrangement_level,
    shuffle_alg1,
    shuffle_permutation,
    su_forward,
)
from s2ica.svm import confusion_matrix, evaluate, load_svm, predict_many, save_svm, train_svm
from s2ica.synth import SynthConfig, generate_dataset

REPORT = {}


def criterion(number, title, budget=None):
    """Record pass/fail and runtime of a criterion; a blown time budget is a failure."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs)
                elapsed = time.perf_counter() - t0
                if budget is not None:
                    assert elapsed < budget, f"took {elapsed:.1f}s, budget {budget}s"
            except BaseException as exc:
                REPORT[number] = (False, title, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
                raise
            REPORT[number] = (True, title, elapsed, detail or "")

        return run

    return wrap


@criterion(1, "permutation-matrix properties", budget=1.0)
def test_c1_permutation_matrix():
    for n in (4, 16, 64):
        t = build_transform(n)
        eye = np.eye(t.shape[0], dtype=t.dtype)
        assert set(np.unique(t)) == {0, 1}
        assert (t.sum(axis=0) == 1).all() and (t.sum(axis=1) == 1).all()
        np.testing.assert_array_equal(t @ t.T, eye)
        np.testing.assert_array_equal(t @ t, eye)


@criterion(2, "shuffle oracle, bijection and involution", budget=10.0)
def test_c2_shuffle():
    x = np.arange(1, 17, dtype=float).reshape(4, 4, 1, 1)
    expected = [[11, 12, 9, 10], [15, 16, 13, 14], [3, 4, 1, 2], [7, 8, 5, 6]]
    np.testing.assert_array_equal(shuffle_alg1(x, 4)[0][:, :, 0, 0], expected)

    rng = np.random.default_rng(2)
    involutions = 0
    for _ in range(1000):
        n = int(rng.choice([4, 9, 16, 36, 64, 100]))
        level = rearrangement_level(n)
        h, w = (int(v) for v in rng.integers(level, level + 24, 2))
        x = rng.standard_normal((h, w, 2, 1))
        out, pmap = shuffle_alg1(x, n)
        for c in range(2):
            np.testing.assert_array_equal(np.sort(out[:, :, c], axis=None), np.sort(x[:, :, c], axis=None))
        np.testing.assert_array_equal(pmap.apply_inverse(out), x)
        if all(np.diff(boundaries(h, level)) % 2 == 0) and all(np.diff(boundaries(w, level)) % 2 == 0):
            np.testing.assert_array_equal(shuffle_alg1(out, n)[0], x)
            involutions += 1
    assert involutions > 50
    return f"{involutions} even-extent involutions"


@criterion(3, "matrix form matches shuffle for n=4", budget=5.0)
def test_c3_matrix_form_consistency():
    rng = np.random.default_rng(3)
    t = build_transform(4)
    for _ in range(100):
        h, w = (2 * int(v) for v in rng.integers(1, 40, 2))
        u = build_scope_matrix(h, w, 4)
        via_matrix = block_permutation_map(u, apply_block_permutation(u, t))
        np.testing.assert_array_equal(via_matrix.forward, shuffle_permutation(h, w, 4).forward)


@criterion(4, "finite-difference gradient suite", budget=120.0)
def test_c4_gradients():
    results = run_suite(seed=0)
    worst = max(results, key=results.get)
    assert results[worst] <= 1e-5, results
    return f"worst {worst} {results[worst]:.2e}"


@criterion(5, "Bernoulli gating")
def test_c5_gating():
    x = np.random.default_rng(5).standard_normal((8, 8, 3, 6))
    out, _, r = su_forward(SUConfig(p=0.0), x)
    np.testing.assert_array_equal(out, x)
    out, _, r = su_forward(SUConfig(p=1.0), x)
    np.testing.assert_array_equal(out, shuffle_alg1(x, 4)[0])
    _, _, r = su_forward(SUConfig(p=0.5, seed=0), np.zeros((4, 4, 1, 10000)))
    assert abs(r.mean() - 0.5) <= 0.02
    return f"rate {r.mean():.4f}"


@pytest.fixture(scope="module")
def trained():
    synth = SynthConfig(seed=0)
    train, test = generate_dataset(synth)
    cfg = PipelineConfig(seed=0)
    models = train_models(train.images, train.labels, train.n_classes, cfg, source=source_dataset(cfg, synth))
    return train, cfg, models


@criterion(6, "transfer pipeline integrity")
def test_c6_transfer(trained):
    train, cfg, models = trained
    grafted = graft(models.base, models.transfernet)
    assert grafted.census() == {"conv": 5, "fc": 4, "su": 0}
    patches = np.random.default_rng(6).uniform(0, 1, (16, 32, 32)).astype(np.float32)
    feats = extract_conv_features(models.base, patches)
    np.testing.assert_array_equal(grafted.logits(patches), models.transfernet.logits(feats))
    assert cfg.finetune.epochs == 5
    assert models.finetune_accuracy >= models.transfer_accuracy
    return f"train accuracy {models.transfer_accuracy:.3f} -> {models.finetune_accuracy:.3f}"


@criterion(7, "ablation directions over 5 seeds", budget=900.0)
def test_c7_ablation():
    rows = [run_ablation(seed) for seed in range(5)]
    mean = {k: float(np.mean([r[k] for r in rows])) for k in ("combined", "baseline", "no_pyramid", "mean_pool")}
    detail = " ".join(f"{k}={v:.3f}" for k, v in mean.items())
    print(detail)
    assert mean["combined"] >= mean["baseline"] + 0.02, detail
    assert mean["combined"] >= mean["no_pyramid"], detail
    assert mean["combined"] >= mean["mean_pool"], detail
    return detail


@criterion(8, "descriptor invariants")
def test_c8_descriptor(trained):
    _, cfg, models = trained
    pipe = DescriptorPipeline(models.net_w, models.net_su, PyramidSpec(96, cfg.scales), cfg.patches)
    image = np.random.default_rng(8).uniform(0, 1, (96, 96))
    d = pipe.describe(image)
    v = models.net_w.conv_output_shape()[2]
    assert d.shape == (2 * v,) == (pipe.feature_length,)
    again = DescriptorPipeline(models.net_w, models.net_su, PyramidSpec(96, cfg.scales), cfg.patches).describe(image)
    assert d.tobytes() == again.tobytes()

    sf = pipe.scale_patch_features(image)
    rng = np.random.default_rng(9)
    shuffled = [tuple(m[rng.permutation(len(m))] for m in scale) for scale in sf[::-1]]
    assert assemble(shuffled).tobytes() == d.tobytes()

    rebuilt = DescriptorPipeline(
        build_network(models.net_w.spec, seed=0), build_network(models.net_su.spec, seed=0),
        PyramidSpec(96, cfg.scales), cfg.patches,
    )
    twin = DescriptorPipeline(
        build_network(models.net_w.spec, seed=0), build_network(models.net_su.spec, seed=0),
        PyramidSpec(96, cfg.scales), cfg.patches,
    )
    assert rebuilt.describe(image).tobytes() == twin.describe(image).tobytes()
    return f"length {d.size}"


@criterion(9, "SVM suite")
def test_c9_svm():
    rng = np.random.default_rng(10)
    x = rng.uniform(-3, 3, (300, 2))
    d = (x[:, 0] - 0.5 * x[:, 1]) / np.sqrt(1.25)
    keep = np.abs(d) >= 0.4
    x, y = x[keep], (d[keep] > 0).astype(int)
    model = train_svm(x, y, C=1, epochs=100, normalize=False)
    acc, cm = evaluate(model, x, y)
    assert acc == 1.0
    np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(y))

    centers = np.array([[0, 5], [5, 0], [-5, -5], [5, 5]])
    y4 = np.repeat(np.arange(4), [25, 15, 30, 10])
    x4 = centers[y4] + rng.normal(0, 0.4, (len(y4), 2))
    m4 = train_svm(x4, y4, C=100, epochs=300, center=True)
    acc4, cm4 = evaluate(m4, x4, y4)
    assert acc4 == 1.0
    np.testing.assert_array_equal(cm4.sum(axis=1), [25, 15, 30, 10])
    noisy = rng.integers(0, 4, len(y4))
    np.testing.assert_array_equal(confusion_matrix(noisy, predict_many(m4, x4), 4).sum(axis=1), np.bincount(noisy, minlength=4))

    h = np.array(model.history)
    ma = np.convolve(h, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(ma) <= 1e-6 * max(1.0, abs(ma[0])))


@criterion(10, "formats round-trip and corruption handling")
def test_c10_formats(tmp_path):
    rng = np.random.default_rng(11)
    net = build_network(toy_spec(4, su=True), seed=3, variant="W_su")
    save_model(tmp_path / "m.s2ic", net)
    back = load_model(tmp_path / "m.s2ic")
    for (_, _, a), (_, _, b) in zip(net.parameters(), back.parameters()):
        assert a.tobytes() == b.tobytes()

    table = rng.standard_normal((7, 20)).astype(np.float32)
    save_descriptors(tmp_path / "d.s2fv", table)
    assert load_descriptors(tmp_path / "d.s2fv").tobytes() == table.tobytes()

    svm = train_svm(rng.standard_normal((30, 5)), rng.integers(0, 3, 30), C=1, epochs=20, center=True)
    save_svm(tmp_path / "s.s2sv", svm)
    svm_back = load_svm(tmp_path / "s.s2sv")
    assert svm_back.weights.tobytes() == svm.weights.tobytes() and svm_back.bias.tobytes() == svm.bias.tobytes()

    for shape in ((9, 7), (5, 6, 3)):
        raw = rng.integers(0, 256, shape).astype(np.uint8)
        assert decode_netpbm(encode_netpbm(raw)).astype(np.uint8).tobytes() == raw.tobytes()
        img = raw.astype(np.float32) / 255
        path = tmp_path / ("i.pgm" if len(shape) == 2 else "i.ppm")
        save_image(path, img)
        assert load_image(path).tobytes() == img.tobytes()

    blobs = [(tmp_path / "m.s2ic").read_bytes(), (tmp_path / "d.s2fv").read_bytes(), (tmp_path / "s.s2sv").read_bytes(),
             encode_netpbm(rng.integers(0, 256, (4, 4)).astype(np.uint8))]
    loaders = [load_model, load_descriptors, load_svm, load_image]
    failures = 0
    for blob, loader in zip(blobs, loaders):
        for _ in range(60):
            data = bytearray(blob)
            kind = rng.integers(3)
            if kind == 0:
                data = data[: rng.integers(0, len(data))]
            elif kind == 1:
                for i in rng.integers(0, len(data), 4):
                    data[i] = rng.integers(256)
            else:
                data += bytes(rng.integers(0, 256, 3).astype(np.uint8))
            path = tmp_path / "corrupt"
            path.write_bytes(bytes(data))
            try:
                loader(path)
            except S2ICAError:
                failures += 1
    assert failures > 0
    return f"{failures} corrupted inputs rejected with categorized errors"
