import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thzbeam.ensemble import (
    EnsembleConfig,
    EnsembleFailedError,
    EnsembleModel,
    ensemble_error,
    load_ensemble,
    predict,
    save_ensemble,
    train_ensemble,
    weighted_vote,
)
from thzbeam.neuralnet import ImageSet, InceptionSpec, NetworkSpec, TrainConfig


def tiny_spec(n_classes=2):
    return NetworkSpec(input_side=8, stem_width=3, inception_blocks=(InceptionSpec(2, 2, 1, 1),),
                       n_classes=n_classes, activation="relu")


def blobs(n, seed, shift=1.5):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.normal(0, 1.0, (n, 8, 8, 3))
    x[y == 1, :4] += shift
    x[y == 0, 4:] += shift
    return ImageSet(y, images=x)


class FixedVoter:
    """Stand-in learner whose logits are fixed one-hot rows keyed by sample index."""

    def __init__(self, classes, n_classes):
        self.spec = tiny_spec(n_classes)
        self.classes = np.asarray(classes)

    def logits(self, x):
        z = np.zeros((len(x), self.spec.n_classes))
        z[np.arange(len(x)), self.classes[x[:, 0, 0, 0].astype(int)]] = 1.0
        return z


def indexed_set(n):
    img = np.zeros((n, 8, 8, 3))
    img[:, 0, 0, 0] = np.arange(n)
    return ImageSet(np.zeros(n, int), images=img)


def test_weighted_vote_hand_example():
    assert weighted_vote([[1, 2, 1]], [0.5, 0.3, 0.2], 4)[0] == 1


def test_weighted_vote_tie_goes_low():
    assert weighted_vote([[3, 2]], [0.5, 0.5], 4)[0] == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_weighted_vote_properties(m, k, seed):
    rng = np.random.default_rng(seed)
    votes = rng.integers(0, k, (20, m))
    w = rng.uniform(0.1, 1.0, m)
    # unanimity wins regardless of weights
    same = np.repeat(votes[:, :1], m, axis=1)
    np.testing.assert_array_equal(weighted_vote(same, w, k), votes[:, 0])
    # total mass equals the weight sum for every sample
    mass = np.zeros((20, k))
    for j in range(m):
        mass[np.arange(20), votes[:, j]] += w[j]
    np.testing.assert_allclose(mass.sum(axis=1), w.sum())
    # uniform weights give the plain majority
    counts = np.stack([(votes == c).sum(axis=1) for c in range(k)], axis=1)
    np.testing.assert_array_equal(weighted_vote(votes, np.ones(m), k), np.argmax(counts, axis=1))


def test_weighted_vote_shape_check():
    with pytest.raises(ValueError):
        weighted_vote([[0, 1]], [1.0], 2)


def test_single_learner_ensemble_equals_learner():
    data = indexed_set(10)
    cls = np.random.default_rng(0).integers(0, 3, 10)
    for c in (0.25, 1.0, 7.0):
        ens = EnsembleModel([FixedVoter(cls, 3)], [c], 3)
        np.testing.assert_array_equal(predict(ens, data), cls)


def test_identical_learners_match_single():
    data = indexed_set(12)
    cls = np.random.default_rng(1).integers(0, 4, 12)
    ens = EnsembleModel([FixedVoter(cls, 4)] * 3, [0.2, 0.5, 0.3], 4)
    np.testing.assert_array_equal(ens.predict(data), cls)


def test_ensemble_error_values():
    data = indexed_set(8)
    data.labels[:] = np.arange(8) % 2
    perfect = EnsembleModel([FixedVoter(data.labels, 2)], [1.0], 2)
    assert ensemble_error(perfect, data) == 0.0
    rng = np.random.default_rng(5)
    big = indexed_set(20000)
    big.labels[:] = rng.integers(0, 4, 20000)
    rand = EnsembleModel([FixedVoter(rng.integers(0, 4, 20000), 4)], [1.0], 4)
    assert abs(ensemble_error(rand, big) - 0.75) < 0.02


def test_model_invariants():
    with pytest.raises(ValueError):
        EnsembleModel([None], [1.0, 2.0], 2)
    with pytest.raises(ValueError):
        EnsembleModel([None], [-1.0], 2)
    with pytest.raises(ValueError):
        EnsembleModel([None], [np.nan], 2)


def test_config_validation():
    for bad in (dict(m1=0), dict(subset_fraction=0), dict(subset_fraction=1.5), dict(weight_grid=()),
                dict(weight_grid=(-1,)), dict(fit_metric="f1")):
        with pytest.raises(ValueError):
            EnsembleConfig(**bad)


FAST = TrainConfig(max_epochs=3, minibatch=16, initial_lr=1e-2)


def test_train_ensemble_trace_and_determinism():
    data, val = blobs(160, 0), blobs(60, 1)
    cfg = EnsembleConfig(m1=3, subset_fraction=0.5, seed=3)
    a = train_ensemble(data, val, cfg, tiny_spec(), FAST)
    b = train_ensemble(data, val, cfg, tiny_spec(), FAST)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert a.seeds == b.seeds
    np.testing.assert_array_equal(a.predict(val), b.predict(val))
    assert len(a.trace) == 3 and a.trace[0]["forwarded"] == 0
    assert all(t["train_size"] <= 2 * round(0.5 * 128) for t in a.trace)
    errs = [t["fit_error"] for t in a.trace]
    assert all(e1 <= e0 + cfg.tolerance + 1e-12 for e0, e1 in zip(errs, errs[1:]))
    assert set(a.weights) <= set(cfg.weight_grid) | {0.0}


@pytest.mark.parametrize("seed", range(5))
def test_second_learner_does_not_hurt(seed):
    data, val = blobs(400, 10 + seed, shift=0.8), blobs(400, 20 + seed, shift=0.8)
    ens = train_ensemble(data, val, EnsembleConfig(m1=2, subset_fraction=0.5, seed=seed), tiny_spec(), FAST)
    acc = 1 - ensemble_error(ens, val)
    best = max(t["val_accuracy"] for t in ens.trace)
    assert acc >= best - 0.005


def test_unit_grid_is_majority_vote():
    data = blobs(120, 4)
    ens = train_ensemble(data, None, EnsembleConfig(m1=3, weight_grid=(1.0,), tolerance=1.0, seed=1),
                         tiny_spec(), FAST)
    assert np.all(ens.weights == 1.0)
    votes = ens.votes(data)
    counts = np.stack([(votes == c).sum(axis=1) for c in range(2)], axis=1)
    np.testing.assert_array_equal(ens.predict(data), np.argmax(counts, axis=1))


def test_all_diverged_raises():
    bad = TrainConfig(max_epochs=2, minibatch=16, initial_lr=1e300, optimizer="sgdm")
    with pytest.raises(EnsembleFailedError):
        train_ensemble(blobs(64, 0), None, EnsembleConfig(m1=2), tiny_spec(), bad)


def test_container_roundtrip(tmp_path):
    data = blobs(80, 2)
    ens = train_ensemble(data, None, EnsembleConfig(m1=2, seed=4), tiny_spec(), FAST)
    p1, p2 = tmp_path / "a.zip", tmp_path / "b.zip"
    save_ensemble(ens, p1)
    save_ensemble(ens, p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = load_ensemble(p1)
    np.testing.assert_array_equal(back.weights, ens.weights)
    assert back.config == ens.config and back.seeds == ens.seeds
    np.testing.assert_array_equal(back.predict(data), ens.predict(data))


def test_container_rejects_other_zip(tmp_path):
    import zipfile

    p = tmp_path / "x.zip"
    with zipfile.ZipFile(p, "w") as zf:
        zf.writestr("manifest.json", "{}")
    with pytest.raises(ValueError):
        load_ensemble(p)
