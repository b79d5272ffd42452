import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thzbeam.beam_select import BeamSelection, SelectionConfig
from thzbeam.channel import ChannelConfig, generate_realization, generate_realizations
from thzbeam.dataset import (
    BeamDataset,
    GmmCollapseError,
    Normalizer,
    bicubic_matrix,
    bicubic_resize,
    build_datasets,
    expand_batch,
    expand_to_image,
    export_csv,
    fit_gmm,
    gmm_points,
    label_realization,
    load_dataset,
    normalize,
    save_dataset,
    split_dataset,
)
from thzbeam.dataset import split_realizations


# --- normalization -----------------------------------------------------------

def test_normalize_symmetric_column():
    out = normalize(np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(out[:, 0], [-0.5, 0.0, 0.5], atol=1e-15)


def test_normalize_constant_column_warns_and_zeroes():
    x = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]])
    with pytest.warns(RuntimeWarning, match="constant"):
        out = normalize(x)
    assert np.all(out[:, 0] == 0)


def test_normalize_needs_two_rows():
    with pytest.raises(ValueError):
        normalize(np.ones((1, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_normalize_statistics(m, f, seed):
    x = np.random.default_rng(seed).normal(3.0, 10.0, (m, f))
    out = normalize(x)
    assert np.all(np.abs(out.mean(axis=0)) < 1e-12)
    np.testing.assert_allclose(out.max(axis=0) - out.min(axis=0), 1.0, rtol=1e-12)


def test_normalize_fixed_point_on_unit_range():
    x = normalize(np.random.default_rng(3).normal(size=(50, 4)))
    np.testing.assert_allclose(normalize(x), x, atol=1e-15)


def test_normalizer_roundtrip_dict():
    n = Normalizer.fit(np.random.default_rng(0).normal(size=(10, 3)))
    m = Normalizer.from_dict(n.to_dict())
    z = np.random.default_rng(1).normal(size=(4, 3))
    np.testing.assert_array_equal(n.transform(z), m.transform(z))


def test_normalized_desk_dataset_columns():
    cc = ChannelConfig(n_tx=8, n_rx=4, n_clusters=2, n_rays=2)
    reals = generate_realizations(cc, 30, seed=4)
    ds, norm, _ = build_datasets(reals, SelectionConfig(n_rf_tx=2, n_rf_rx=2))
    base = norm.transform(np.array([r.features() for r in reals]))
    assert np.all(np.abs(base.mean(axis=0)) < 1e-12)
    assert np.all(base.max(axis=0) - base.min(axis=0) <= 1 + 1e-12)
    assert ds["tx"].features.shape == (30 * 8, 4 * 2 * 2 + 2 + 2)


# --- GMM ---------------------------------------------------------------------

def test_gmm_identical_points():
    pts = np.tile([0.1, -0.2, 0.7], (6, 1))
    g = fit_gmm(pts, 1)
    np.testing.assert_allclose(g.means[0], pts[0])
    assert g.weights[0] == pytest.approx(1.0)
    assert np.all(g.stds > 0)


def test_gmm_single_component_is_sample_moments():
    x = np.random.default_rng(5).normal([0.2, -0.1, 1.0], [0.3, 0.1, 0.5], (400, 3))
    g = fit_gmm(x, 1)
    np.testing.assert_allclose(g.means[0], x.mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(g.stds[0], x.std(axis=0), atol=1e-9)


def test_gmm_recovers_two_clusters():
    rng = np.random.default_rng(11)
    a = rng.normal([-2, -2, 0], 0.2, (300, 3))
    b = rng.normal([2, 1, 1], 0.2, (700, 3))
    g = fit_gmm(np.vstack([a, b]), 2)
    order = np.argsort(g.means[:, 0])
    np.testing.assert_allclose(g.means[order], [[-2, -2, 0], [2, 1, 1]], atol=0.05)
    np.testing.assert_allclose(g.weights[order], [0.3, 0.7], atol=0.05)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3))
def test_gmm_loglik_monotone_and_valid(seed, k):
    x = np.random.default_rng(seed).normal(size=(60, 3)) * [1.0, 0.5, 2.0]
    g = fit_gmm(x, k, seed=seed)
    assert np.all(np.diff(g.log_likelihood) >= -1e-9)
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all((g.weights >= 0) & (g.weights <= 1))
    assert np.all(g.stds > 0)
    q = g.flatten()
    assert q.shape == (1 + 7 * k,)
    assert q[0] == g.amplitude > 0


def test_gmm_flatten_layout():
    g = fit_gmm(np.random.default_rng(0).normal(size=(20, 3)), 2)
    q = g.flatten()
    np.testing.assert_array_equal(q[1:8], np.concatenate([[g.weights[0]], g.means[0], g.stds[0]]))


def test_gmm_on_channel_paths():
    real = generate_realization(ChannelConfig(n_tx=16, n_rx=8), 3)
    pts = gmm_points(real)
    assert pts.shape == (8, 3)
    g = fit_gmm(pts, 4, reg_covar=1e-6)
    assert g.k == 4 and np.all(g.stds >= 1e-3)


def test_gmm_collapses_without_regularization():
    # 8 paths, 4 components: EM drives a component onto a single point
    bad = 0
    for i in range(20):
        real = generate_realization(ChannelConfig(n_tx=16, n_rx=8), i)
        try:
            fit_gmm(gmm_points(real), 4)
        except GmmCollapseError:
            bad += 1
    assert bad > 0


def test_gmm_rejects_bad_k():
    with pytest.raises(ValueError):
        fit_gmm(np.zeros((2, 3)), 3)


def test_gmm_collapse_error_type():
    assert issubclass(GmmCollapseError, RuntimeError)


def test_gmm_regularized_fits_all_channels():
    for i in range(50):
        real = generate_realization(ChannelConfig(n_tx=16, n_rx=8), i)
        fit_gmm(gmm_points(real), 4, reg_covar=1e-6)


# --- labeling ----------------------------------------------------------------

def test_label_from_given_selection():
    real = generate_realization(ChannelConfig(n_tx=8, n_rx=4, n_clusters=2, n_rays=2), 0)
    cfg = SelectionConfig(n_rf_tx=2, n_rf_rx=2)
    sel = BeamSelection((3, 7), (0, 1), 8, 4)
    rows = label_realization(real, cfg, side="tx", selection=sel)
    labels = {s.beam: s.label for s in rows}
    assert labels[3] == 1 and labels[7] == 2
    assert all(v == 0 for b, v in labels.items() if b not in (3, 7))


def test_label_forced_when_pool_equals_rf():
    real = generate_realization(ChannelConfig(n_tx=4, n_rx=2, n_clusters=2, n_rays=1), 1)
    rows = label_realization(real, SelectionConfig(n_rf_tx=2, n_rf_rx=2), side="rx")
    assert sorted(s.label for s in rows) == [1, 2]


def test_label_class_zero_frequency_exact():
    reals = generate_realizations(ChannelConfig(n_tx=16, n_rx=8), 40, seed=2)
    ds, _, _ = build_datasets(reals, SelectionConfig(n_rf_tx=4, n_rf_rx=4))
    tx = ds["tx"]
    assert np.mean(tx.labels == 0) == 12 / 16
    for rid in np.unique(tx.realization_ids):
        lab = tx.labels[tx.realization_ids == rid]
        assert sorted(lab[lab > 0]) == [1, 2, 3, 4]
    assert np.all((tx.features[:, -1] >= 0) & (tx.features[:, -1] <= 1))
    assert np.all((tx.features[:, -2] >= 0) & (tx.features[:, -2] <= 1))


def test_label_rejects_bad_side():
    real = generate_realization(ChannelConfig(n_tx=4, n_rx=2, n_clusters=1, n_rays=1), 0)
    with pytest.raises(ValueError):
        label_realization(real, SelectionConfig(n_rf_tx=1, n_rf_rx=1), side="both")


# --- bicubic / image expansion -----------------------------------------------

def test_bicubic_constant():
    out = bicubic_resize(np.full((7, 7), 2.5), 32)
    np.testing.assert_allclose(out, 2.5, atol=1e-9)


def test_bicubic_affine_reproduction():
    i, j = np.meshgrid(np.arange(9.0), np.arange(9.0), indexing="ij")
    out = bicubic_resize(0.3 * i - 1.2 * j + 4.0, 32)
    s = np.arange(32) * 8 / 31
    ii, jj = np.meshgrid(s, s, indexing="ij")
    np.testing.assert_allclose(out, 0.3 * ii - 1.2 * jj + 4.0, atol=1e-6)


def test_bicubic_corner_alignment():
    src = np.random.default_rng(0).normal(size=(34, 34))
    out = bicubic_resize(src, 224)
    for a, b in [((0, 0), (0, 0)), ((-1, -1), (-1, -1)), ((0, -1), (0, -1))]:
        assert abs(out[a] - src[b]) < 1e-9


def test_bicubic_rows_sum_to_one():
    for n, m in [(5, 32), (36, 32), (38, 224), (2, 3)]:
        np.testing.assert_allclose(bicubic_matrix(n, m).sum(axis=1), 1.0, atol=1e-12)


def test_expand_constant_vector():
    img = expand_to_image(np.full(10, 0.5), 16).data
    np.testing.assert_allclose(img[..., 0], 0.25, atol=1e-9)
    assert np.all(img[..., 1:] == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["outer", "tile"]))
def test_expand_batch_matches_single(seed, emb):
    x = np.random.default_rng(seed).normal(size=(3, 12))
    batch = expand_batch(x, 16, emb)
    assert batch.shape == (3, 16, 16, 3)
    assert np.all(batch[..., 1:] == 0)
    for b in range(3):
        np.testing.assert_allclose(batch[b], expand_to_image(x[b], 16, emb).data, atol=1e-12)
        assert np.sum(batch[b, ..., 0] ** 2) > 0


def test_expand_rejects_small_target():
    with pytest.raises(ValueError):
        expand_to_image(np.ones(4), 3)


# --- splitting ---------------------------------------------------------------

def _toy_ds(n_real, per=4):
    rid = np.repeat(np.arange(n_real, dtype=np.uint64), per)
    m = len(rid)
    return BeamDataset(np.arange(m, dtype=float)[:, None] * [1.0, 0.0], np.zeros(m, np.uint8), rid,
                       np.tile(np.arange(per), n_real), 2)


def test_split_seventy_thirty():
    tr, va = split_dataset(_toy_ds(10), 0.7, seed=0)
    assert len(np.unique(tr.realization_ids)) == 7
    assert len(np.unique(va.realization_ids)) == 3


def test_split_floor_guard():
    tr, va = split_dataset(_toy_ds(2), 0.99, seed=1)
    assert len(np.unique(tr.realization_ids)) == 1 and len(np.unique(va.realization_ids)) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_disjoint_exhaustive_deterministic(n, frac, seed):
    ds = _toy_ds(n)
    tr, va = split_dataset(ds, frac, seed)
    assert not set(tr.realization_ids) & set(va.realization_ids)
    assert len(tr) + len(va) == len(ds)
    tr2, _ = split_dataset(ds, frac, seed)
    np.testing.assert_array_equal(tr.realization_ids, tr2.realization_ids)


def test_split_errors():
    with pytest.raises(ValueError):
        split_realizations([0, 0, 0], 0.5, 0)
    with pytest.raises(ValueError):
        split_realizations([0, 1], 1.0, 0)


# --- persistence -------------------------------------------------------------

def test_dataset_roundtrip(tmp_path):
    reals = generate_realizations(ChannelConfig(n_tx=8, n_rx=4, n_clusters=2, n_rays=1), 5, seed=9)
    ds, _, _ = build_datasets(reals, SelectionConfig(n_rf_tx=2, n_rf_rx=2))
    p = tmp_path / "tx.bsds"
    save_dataset(ds["tx"], p, {"seed": 9})
    back = load_dataset(p)
    np.testing.assert_array_equal(back.features, ds["tx"].features)
    np.testing.assert_array_equal(back.labels, ds["tx"].labels)
    np.testing.assert_array_equal(back.realization_ids, ds["tx"].realization_ids)
    np.testing.assert_array_equal(back.beams, ds["tx"].beams)
    assert back.n_classes == 3 and back.meta["seed"] == 9
    assert p.read_bytes()[:4] == b"BSDS"


def test_dataset_bad_magic(tmp_path):
    p = tmp_path / "bad.bsds"
    p.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError, match="magic"):
        load_dataset(p)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing.bsds")


def test_export_csv(tmp_path):
    ds = _toy_ds(2, 2)
    p = tmp_path / "d.csv"
    export_csv(ds, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "realization_id,label,f0,f1"
    assert len(lines) == 5
    assert lines[2].split(",")[:3] == ["0", "0", "1.0"]


def test_build_with_gmm_columns():
    cc = ChannelConfig(n_tx=8, n_rx=4, n_clusters=2, n_rays=2)
    reals = generate_realizations(cc, 6, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds, _, _ = build_datasets(reals, SelectionConfig(n_rf_tx=2, n_rf_rx=2), with_gmm=True)
    assert ds["tx"].feature_count == 18 + 1 + 7 * 2 + 2
