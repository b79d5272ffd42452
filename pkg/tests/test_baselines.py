import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thzbeam.baselines import (
    KnnModel,
    MlpModel,
    knn_fit,
    knn_predict,
    load_baseline,
    mlp_predict,
    mlp_train,
    save_baseline,
    svm_predict,
    svm_train,
)
from thzbeam.neuralnet import TrainConfig


def brute_knn(tr, y, q, k, n_classes):
    d = [(float(np.sum((q - t) ** 2)), i) for i, t in enumerate(tr)]
    d.sort()
    counts = np.bincount([y[i] for _, i in d[:k]], minlength=n_classes)
    return int(np.argmax(counts))


def test_knn_exact_match_k1():
    tr = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    m = knn_fit(tr, [2, 1, 0], k=1)
    assert knn_predict(m, tr).tolist() == [2, 1, 0]


def test_knn_majority():
    tr = np.array([[0.0], [0.1], [0.2], [9.0]])
    m = knn_fit(tr, [1, 1, 2, 0], k=3)
    assert knn_predict(m, [[0.05]])[0] == 1


def test_knn_distance_tie_prefers_lower_index():
    tr = np.array([[1.0], [-1.0], [1.0]])
    m = knn_fit(tr, [3, 1, 2], k=1, n_classes=4)
    assert knn_predict(m, [[0.0]])[0] == 3


def test_knn_label_tie_prefers_lower_class():
    tr = np.array([[1.0], [2.0]])
    m = knn_fit(tr, [2, 1], k=2)
    assert knn_predict(m, [[0.0]])[0] == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 7))
def test_knn_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    tr = rng.integers(-2, 3, (30, 2)).astype(float)  # lattice points make many ties
    y = rng.integers(0, 3, 30)
    q = rng.integers(-2, 3, (10, 2)).astype(float)
    got = knn_predict(knn_fit(tr, y, k, 3), q)
    assert got.tolist() == [brute_knn(tr, y, x, k, 3) for x in q]


def test_knn_k_bounds():
    with pytest.raises(ValueError):
        knn_fit(np.zeros((2, 1)), [0, 1], k=3)
    with pytest.raises(ValueError):
        KnnModel(0, np.zeros((2, 1)), np.zeros(2), 2)


def separable(n, seed, k=3):
    rng = np.random.default_rng(seed)
    centers = np.array([[3, 0], [-3, 0], [0, 3]])[:k]
    y = rng.integers(0, k, n)
    return centers[y] + rng.normal(0, 0.5, (n, 2)), y


def test_svm_separable():
    x, y = separable(300, 0)
    m = svm_train(x, y, 3, epochs=20)
    assert m.weights.shape == (2, 3)
    assert np.mean(svm_predict(m, x) == y) > 0.97


def test_svm_deterministic_and_balanced():
    x, y = separable(200, 1)
    a = svm_train(x, y, 3, seed=4)
    b = svm_train(x, y, 3, seed=4)
    np.testing.assert_array_equal(a.weights, b.weights)
    c = svm_train(x, y, 3, seed=4, class_weighting="balanced")
    assert c.weights.shape == a.weights.shape


def test_svm_regularization_shrinks():
    x, y = separable(200, 2)
    small = svm_train(x, y, 3, lam=1e-3)
    big = svm_train(x, y, 3, lam=1.0)
    assert np.linalg.norm(big.weights) < np.linalg.norm(small.weights)


def test_svm_bad_input():
    with pytest.raises(ValueError):
        svm_train(np.zeros((0, 2)), np.zeros(0, int), 2)


def test_mlp_learns_and_counts():
    x, y = separable(400, 3)
    cfg = TrainConfig(max_epochs=20, minibatch=32, initial_lr=1e-2)
    m = mlp_train(x, y, 3, cfg)
    assert m.n_params == 2 * 64 + 64 + 64 * 32 + 32 + 32 * 3 + 3
    assert np.mean(mlp_predict(m, x) == y) > 0.97


def test_mlp_gradient_check():
    rng = np.random.default_rng(0)
    m = MlpModel(5, 3, (6, 4), seed=1)
    x, y = rng.normal(size=(7, 5)), rng.integers(0, 3, 7)
    _, g = m.loss_and_grad(x, y)
    h = 1e-6
    for i in rng.choice(m.n_params, 40, replace=False):
        p0 = m.params[i]
        m.params[i] = p0 + h
        lp = m.loss_and_grad(x, y)[0]
        m.params[i] = p0 - h
        lm = m.loss_and_grad(x, y)[0]
        m.params[i] = p0
        fd = (lp - lm) / (2 * h)
        assert abs(fd - g[i]) <= 1e-6 * max(abs(fd), 1e-3)


def test_mlp_needs_two_classes():
    with pytest.raises(ValueError):
        MlpModel(3, 1)


def test_checkpoints_roundtrip(tmp_path):
    x, y = separable(60, 5)
    models = [knn_fit(x, y, 5), svm_train(x, y, 3, epochs=2),
              mlp_train(x, y, 3, TrainConfig(max_epochs=1, minibatch=16))]
    preds = [knn_predict, svm_predict, mlp_predict]
    for i, (m, f) in enumerate(zip(models, preds)):
        p = tmp_path / f"b{i}.bsnn"
        save_baseline(m, p)
        assert p.read_bytes()[:4] == b"BSNN"
        back = load_baseline(p)
        assert type(back) is type(m)
        np.testing.assert_array_equal(f(back, x), f(m, x))
    with pytest.raises(TypeError):
        save_baseline(object(), tmp_path / "x")


def test_load_baseline_rejects_cnn(tmp_path):
    from thzbeam.neuralnet import ClassifierModel, InceptionSpec, NetworkSpec, save_model

    spec = NetworkSpec(input_side=8, stem_width=2, inception_blocks=(InceptionSpec(1, 1, 1, 1),), n_classes=2)
    save_model(ClassifierModel(spec), tmp_path / "c.bsnn")
    with pytest.raises(ValueError):
        load_baseline(tmp_path / "c.bsnn")
