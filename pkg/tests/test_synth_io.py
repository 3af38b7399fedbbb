import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from s2ica.errors import ConfigurationError, FormatError, GenerationError
from s2ica.imageio import decode_netpbm, encode_netpbm, load_image, save_image, to_grayscale
from s2ica.synth import (
    GLYPHS,
    STANDARD_QUADRANTS,
    STRESS_QUADRANTS,
    SynthConfig,
    generate_dataset,
    generate_glyph_dataset,
    glyph_mask,
    load_dataset,
    save_dataset,
)


# -- image I/O -------------------------------------------------------------------------


@pytest.mark.parametrize("shape", [(5, 7), (4, 6, 3)])
def test_netpbm_round_trip(tmp_path, rng, shape):
    img = rng.integers(0, 256, shape).astype(np.float32) / 255
    save_image(tmp_path / "a.pnm", img)
    back = load_image(tmp_path / "a.pnm")
    assert back.tobytes() == img.tobytes()
    save_image(tmp_path / "b.pnm", back)
    assert (tmp_path / "a.pnm").read_bytes() == (tmp_path / "b.pnm").read_bytes()


def test_p5_example():
    raster = bytes(range(0, 160, 10))
    img = decode_netpbm(b"P5 4 4 255\n" + raster)
    assert img.shape == (4, 4)
    np.testing.assert_array_equal(img.ravel(), list(raster))


def test_header_comments():
    img = decode_netpbm(b"P6\n# made by hand\n2 1 # width height\n255\n" + bytes(6))
    assert img.shape == (1, 2, 3)


def test_maxval_rejected():
    with pytest.raises(FormatError, match="maxval 65535 not supported") as info:
        decode_netpbm(b"P5 1 1 65535\n\0\0")
    assert info.value.offset == 7


@pytest.mark.parametrize(
    "data, message",
    [
        (b"P3 1 1 255\n1", "unsupported magic"),
        (b"P5 4 4", "header ended early"),
        (b"P5 4 x 255\n", "expected an integer"),
        (b"P5 2 2 255\n\0\0\0", "truncated"),
        (b"P5 1 1 255\n\0\0", "trailing"),
        (b"P5 0 3 255\n", "degenerate"),
    ],
)
def test_malformed_netpbm(data, message):
    with pytest.raises(FormatError, match=message):
        decode_netpbm(data)


@settings(max_examples=300)
@given(st.binary(max_size=40))
def test_netpbm_fuzz_never_crashes(tail):
    for prefix in (b"P5", b"P6 3 2", b"P5 2 2 255\n"):
        try:
            decode_netpbm(prefix + tail)
        except FormatError:
            pass


def test_encode_rejects_bad_input():
    with pytest.raises(FormatError):
        encode_netpbm(np.zeros((2, 2), np.float32))
    with pytest.raises(FormatError):
        encode_netpbm(np.zeros((2, 2, 2), np.uint8))


def test_grayscale_examples(rng):
    assert to_grayscale(np.ones((1, 1, 3), np.float32))[0, 0] == pytest.approx(1.0)
    assert to_grayscale(np.array([[[0, 1, 0]]], np.float32))[0, 0] == pytest.approx(0.587)
    gray = rng.uniform(0, 1, (3, 4)).astype(np.float32)
    assert to_grayscale(gray) is gray
    img = rng.uniform(0, 1, (3, 4, 3))
    out = to_grayscale(img)
    for i in range(3):
        for j in range(4):
            r, g, b = img[i, j]
            assert out[i, j] == pytest.approx(0.299 * r + 0.587 * g + 0.114 * b, abs=1e-12)


# -- synthetic scenes ---------------------------------------------------------------------


def test_glyph_masks():
    for g in GLYPHS:
        m = glyph_mask(g, 24)
        assert m.shape == (24, 24) and m.any() and not m.all()
    assert glyph_mask("disk", 24)[12, 12] and not glyph_mask("ring", 24)[12, 12]
    with pytest.raises(ConfigurationError):
        glyph_mask("star", 10)


def test_generation_is_deterministic():
    cfg = SynthConfig(train_per_class=3, test_per_class=2, seed=11)
    a_train, a_test = generate_dataset(cfg)
    b_train, b_test = generate_dataset(cfg)
    assert a_train.images.tobytes() == b_train.images.tobytes()
    assert a_test.images.tobytes() == b_test.images.tobytes()
    c_train, _ = generate_dataset(SynthConfig(train_per_class=3, test_per_class=2, seed=12))
    assert a_train.images.tobytes() != c_train.images.tobytes()
    assert a_train.images.dtype == np.float32 and a_train.images.shape == (12, 96, 96)
    np.testing.assert_array_equal(a_train.labels, np.repeat(np.arange(4), 3))


def quadrant_of(box, canvas=96):
    r, c, s = box
    half = canvas // 2
    assert r // half == (r + s - 1) // half and c // half == (c + s - 1) // half
    return (r // half) * 2 + c // half


def test_content_layout_and_overlap():
    cfg = SynthConfig(train_per_class=5, test_per_class=5, noise_std=0.0, seed=3)
    train, test = generate_dataset(cfg)
    for split, quads in ((train, STANDARD_QUADRANTS), (test, STRESS_QUADRANTS)):
        for img, label, boxes in zip(split.images, split.labels, split.boxes):
            glyphs = cfg.classes[label]
            assert len(boxes) == len(glyphs)
            assert [quadrant_of(b) for b in boxes] == list(quads)
            for k, (r, c, s) in enumerate(boxes):
                for r2, c2, s2 in boxes[k + 1 :]:
                    assert r + s <= r2 or r2 + s2 <= r or c + s <= c2 or c2 + s2 <= c
            for kind, (r, c, s) in zip(glyphs, boxes):
                window = img[r : r + s, c : c + s]
                np.testing.assert_array_equal(window > 0, glyph_mask(kind, s))
            covered = np.zeros(img.shape, bool)
            for r, c, s in boxes:
                covered[r : r + s, c : c + s] = True
            assert not img[~covered].any()
    # every glyph slot moves to a different quadrant
    assert all(a != b for a, b in zip(STANDARD_QUADRANTS, STRESS_QUADRANTS))


def test_layout_stress_off_uses_standard_layout():
    cfg = SynthConfig(train_per_class=1, test_per_class=2, layout_stress=False)
    _, test = generate_dataset(cfg)
    assert all([quadrant_of(b) for b in boxes] == list(STANDARD_QUADRANTS) for boxes in test.boxes)


def test_config_validation():
    with pytest.raises(ConfigurationError, match="distinct"):
        SynthConfig(classes=(("disk", "ring"), ("ring", "disk")))
    with pytest.raises(ConfigurationError):
        SynthConfig(classes=(("disk",),))
    with pytest.raises(ConfigurationError):
        SynthConfig(classes=(("disk",), ("blob",)))
    with pytest.raises(ConfigurationError):
        SynthConfig(scale_range=(0.0, 1.0))


def test_unplaceable_glyph():
    with pytest.raises(GenerationError, match="smaller scale range"):
        generate_dataset(SynthConfig(scale_range=(2.5, 3.0), train_per_class=1))


def test_glyph_source_dataset():
    ds = generate_glyph_dataset(4, size=32, seed=1)
    assert ds.images.shape == (20, 32, 32) and ds.n_classes == 5
    assert generate_glyph_dataset(4, size=32, seed=1).images.tobytes() == ds.images.tobytes()


def test_dataset_directory_round_trip(tmp_path):
    train, _ = generate_dataset(SynthConfig(train_per_class=2, test_per_class=0, seed=4))
    save_dataset(train, tmp_path / "ds")
    assert (tmp_path / "ds" / train.class_names[0] / "img_0001.pgm").exists()
    back = load_dataset(tmp_path / "ds")
    assert back.class_names == train.class_names
    np.testing.assert_array_equal(back.labels, train.labels)
    np.testing.assert_allclose(back.images, train.images, atol=0.5 / 255 + 1e-7)
    (tmp_path / "ds" / "manifest.txt").unlink()
    back = load_dataset(tmp_path / "ds")
    assert back.class_names == tuple(sorted(train.class_names))
    assert len(back.labels) == len(train.labels)


def test_bad_manifest(tmp_path):
    (tmp_path / "manifest.txt").write_text("a.pgm notanumber\n")
    with pytest.raises(FormatError, match="manifest.txt:1"):
        load_dataset(tmp_path)
