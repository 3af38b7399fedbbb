import numpy as np
import pytest

from s2ica.errors import ConfigurationError, DimensionError, EmptyInputError, FormatError
from s2ica.svm import (
    LinearSVM,
    confusion_matrix,
    evaluate,
    load_svm,
    predict,
    predict_many,
    save_confusion_csv,
    save_svm,
    train_svm,
)


def margin_set(rng, n=200, margin=0.5):
    x = rng.uniform(-3, 3, (n, 2))
    d = (x[:, 0] + x[:, 1]) / np.sqrt(2)
    keep = np.abs(d) >= margin
    return x[keep], (d[keep] > 0).astype(int)


def blobs(rng):
    x = np.vstack([rng.normal([-1, 0], 1, (100, 2)), rng.normal([1.5, 1], 1, (100, 2))])
    return x, np.repeat([0, 1], 100)


def grid_search_accuracy(x, y, angles=720):
    """Best training accuracy of any line, by brute force over directions and thresholds."""
    best = 0.0
    for th in np.linspace(0, 2 * np.pi, angles, endpoint=False):
        proj = x @ np.array([np.cos(th), np.sin(th)])
        for t in np.unique(proj):
            best = max(best, float(np.mean((proj > t) == y)))
    return best


def test_one_dimensional_example():
    x = np.array([[-1.0], [1.0]])
    model = train_svm(x, [0, 1], C=1)
    assert evaluate(model, x, [0, 1])[0] == 1.0
    assert model.weights[1, 0] > 0 > model.weights[0, 0]


def test_separable_reaches_full_accuracy(rng):
    x, y = margin_set(rng)
    model = train_svm(x, y, C=1, epochs=100, normalize=False)
    assert evaluate(model, x, y)[0] == 1.0
    for i in range(0, len(x), 17):
        assert predict(model, x[i])[0] == y[i]


def test_duplicated_data_gives_same_model(rng):
    x, y = blobs(rng)
    a = train_svm(x, y, C=10, epochs=300)
    b = train_svm(np.vstack([x, x]), np.r_[y, y], C=10, epochs=300)
    np.testing.assert_allclose(a.decision_function(x), b.decision_function(x), atol=1e-4)


def test_order_invariance(rng):
    x, y = blobs(rng)
    perm = rng.permutation(len(y))
    a = train_svm(x, y, C=10, epochs=300, center=True)
    b = train_svm(x[perm], y[perm], C=10, epochs=300, center=True)
    np.testing.assert_array_equal(predict_many(a, x), predict_many(b, x))


def test_matches_grid_search_oracle(rng):
    x, y = blobs(rng)
    model = train_svm(x, y, C=1, epochs=1000, normalize=False)
    assert evaluate(model, x, y)[0] >= grid_search_accuracy(x, y) - 0.02


def test_objective_moving_average_non_increasing(rng):
    x, y = margin_set(rng)
    for normalize in (False, True):
        h = np.array(train_svm(x, y, C=1, epochs=100, normalize=normalize).history)
        ma = np.convolve(h, np.ones(10) / 10, mode="valid")
        assert np.all(np.diff(ma) <= 1e-6 * max(1.0, abs(ma[0])))


def test_multiclass_and_confusion(rng):
    centers = np.array([[0, 4], [4, 0], [-4, -4]])
    y = np.repeat([0, 1, 2], [30, 20, 10])
    x = centers[y] + rng.normal(0, 0.3, (60, 2))
    model = train_svm(x, y, C=100, epochs=500, center=True)
    acc, cm = evaluate(model, x, y)
    assert acc == 1.0
    np.testing.assert_array_equal(cm, np.diag([30, 20, 10]))
    cm = confusion_matrix([0, 0, 1, 2, 2, 2], [0, 1, 1, 2, 0, 2], 3)
    np.testing.assert_array_equal(cm.sum(axis=1), [2, 1, 3])
    acc, cm = evaluate(model, x[:5], [1, 1, 1, 1, 1])
    assert acc == np.trace(cm) / cm.sum()


def test_predict_contract():
    tie = LinearSVM(np.zeros((3, 2), np.float32), np.zeros(3, np.float32), normalize=False)
    assert predict(tie, [1.0, 2.0])[0] == 0
    model = LinearSVM(np.array([[1, 0], [0, 2]], np.float32), np.zeros(2, np.float32), normalize=False)
    x = np.array([3.0, 1.0])
    cls, scores = predict(model, x)
    cls2, scores2 = predict(model, 2.5 * x)
    assert cls == cls2
    np.testing.assert_allclose(scores2, 2.5 * scores)
    with pytest.raises(DimensionError):
        predict(model, [1.0, 2.0, 3.0])
    with pytest.raises(DimensionError):
        predict(model, np.ones((2, 2)))


def test_training_errors():
    with pytest.raises(ConfigurationError, match="two classes"):
        train_svm(np.ones((3, 2)), [1, 1, 1])
    with pytest.raises(EmptyInputError):
        train_svm(np.ones((0, 2)), [])
    with pytest.raises(DimensionError):
        train_svm(np.ones((3, 2)), [0, 1])
    with pytest.raises(ConfigurationError):
        train_svm(np.eye(2), [0, 1], C=0)
    model = train_svm(np.eye(2), [0, 1])
    with pytest.raises(EmptyInputError):
        evaluate(model, np.ones((0, 2)), [])


@pytest.mark.parametrize("center", [False, True])
def test_svm_round_trip(tmp_path, rng, center):
    x, y = blobs(rng)
    model = train_svm(x, y, C=5, epochs=50, center=center)
    save_svm(tmp_path / "m.s2sv", model)
    back = load_svm(tmp_path / "m.s2sv")
    assert back.weights.tobytes() == model.weights.tobytes()
    assert back.bias.tobytes() == model.bias.tobytes()
    assert (back.center is None) == (not center)
    assert (back.C, back.normalize, back.classes) == (model.C, model.normalize, model.classes)
    np.testing.assert_array_equal(back.decision_function(x), model.decision_function(x))
    data = (tmp_path / "m.s2sv").read_bytes()
    (tmp_path / "bad.s2sv").write_bytes(data[:20])
    with pytest.raises(FormatError):
        load_svm(tmp_path / "bad.s2sv")


def test_confusion_csv(tmp_path):
    save_confusion_csv(tmp_path / "cm.csv", [[3, 1], [0, 4]])
    assert (tmp_path / "cm.csv").read_text() == "3,1\n0,4\n"
