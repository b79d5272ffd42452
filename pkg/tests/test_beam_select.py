import itertools

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from thzbeam.beam_select import (
    BeamSelection,
    BudgetExceededError,
    DegenerateChannelError,
    DigitalStage,
    SelectionConfig,
    build_digital_stage,
    candidate_pool,
    frobenius_objective,
    greedy_energy_select,
    oracle_select,
    selection_se,
    spectral_efficiency,
    spectral_efficiency_reduced,
    write_se_rows,
    zf_benchmark,
)
from thzbeam.channel import ChannelConfig, from_paths, generate_realization, grid_angles


def brute_force(h_b, n_rf_tx, n_rf_rx, snr_db):
    """Independent enumeration: SE = sum log2(1 + snr/Ns s_i^2) over scipy singular values."""
    n_rx, n_tx = h_b.shape
    ns = min(n_rf_tx, n_rf_rx)
    c = 10 ** (snr_db / 10) / ns
    best = (-np.inf, None, None)
    for t in itertools.combinations(range(n_tx), n_rf_tx):
        for r in itertools.combinations(range(n_rx), n_rf_rx):
            s = scipy.linalg.svdvals(h_b[np.ix_(r, t)])[:ns]
            se = float(np.sum(np.log2(1 + c * s ** 2)))
            if se > best[0]:
                best = (se, t, r)
    return best


def random_hb(rng, n_rx, n_tx):
    return (rng.standard_normal((n_rx, n_tx)) + 1j * rng.standard_normal((n_rx, n_tx))) / np.sqrt(2)


def test_selection_matrices():
    sel = BeamSelection((2, 0), (1,), n_tx=4, n_rx=3)
    st_ = sel.s_t
    assert st_.shape == (4, 2)
    np.testing.assert_array_equal(st_.T @ st_, np.eye(2))
    np.testing.assert_array_equal(st_.sum(axis=0), [1, 1])
    assert st_[2, 0] == 1 and st_[0, 1] == 1
    h = np.arange(12).reshape(3, 4)
    np.testing.assert_array_equal(sel.submatrix(h), sel.s_r.T @ h @ sel.s_t)


def test_selection_rejects_duplicates():
    with pytest.raises(ValueError):
        BeamSelection((1, 1), (0,), 4, 2)
    with pytest.raises(ValueError):
        BeamSelection((4,), (0,), 4, 2)


def test_selection_config_invariants():
    assert SelectionConfig(n_rf_tx=4, n_rf_rx=2).n_streams == 2
    with pytest.raises(ValueError):
        SelectionConfig(n_rf_tx=4, n_rf_rx=4, n_streams=3)
    with pytest.raises(ValueError):
        SelectionConfig(n_rf_tx=4, candidate_pool_tx=3)
    assert SelectionConfig().pools(8, 16) == (8, 16)
    assert SelectionConfig().pools(64, 256) == (16, 16)


def test_digital_stage_identity():
    dig = build_digital_stage(np.eye(2), 2)
    np.testing.assert_allclose(np.abs(dig.f_bb), np.eye(2), atol=1e-15)
    np.testing.assert_allclose(np.abs(dig.w_bb), np.eye(2), atol=1e-15)


def test_digital_stage_dominant_direction():
    dig = build_digital_stage(np.diag([2.0, 1.0]), 1)
    np.testing.assert_allclose(np.abs(dig.f_bb[:, 0]), [1, 0], atol=1e-15)
    np.testing.assert_allclose(np.abs(dig.w_bb[:, 0]), [1, 0], atol=1e-15)


def test_digital_stage_diagonalizes():
    rng = np.random.default_rng(0)
    for _ in range(10):
        h = random_hb(rng, 4, 4)
        dig = build_digital_stage(h, 4)
        d = dig.w_bb.conj().T @ h @ dig.f_bb
        off = d - np.diag(np.diag(d))
        assert np.linalg.norm(off) < 1e-9
        np.testing.assert_allclose(np.sort(np.abs(np.diag(d)))[::-1], scipy.linalg.svdvals(h), rtol=1e-10)
        assert abs(np.linalg.norm(dig.f_bb) ** 2 - 4) < 1e-12


def test_digital_stage_degenerate():
    with pytest.raises(DegenerateChannelError):
        build_digital_stage(np.outer([1, 2], [1, 1]), 2)


def test_se_scalar_closed_form():
    sel = BeamSelection((0,), (0,), 1, 1)
    dig = DigitalStage(np.ones((1, 1), complex), np.ones((1, 1), complex))
    assert spectral_efficiency(np.ones((1, 1)), sel, dig, 0.0) == pytest.approx(1.0, abs=1e-15)


def test_se_vanishes_at_low_snr():
    rng = np.random.default_rng(1)
    h = random_hb(rng, 4, 8)
    sel = BeamSelection((0, 3), (1, 2), 8, 4)
    dig = build_digital_stage(sel.submatrix(h), 2)
    assert 0 <= spectral_efficiency(h, sel, dig, -200.0) < 1e-15


def test_se_increases_with_snr():
    real = generate_realization(ChannelConfig(), 7)
    sel = greedy_energy_select(real.beamspace, SelectionConfig())
    dig = build_digital_stage(sel.submatrix(real.beamspace), 4)
    # independent evaluation of the formula at both points via eigenvalues
    m = dig.w_bb.conj().T @ sel.submatrix(real.beamspace) @ dig.f_bb
    ev = np.linalg.eigvalsh(m @ m.conj().T)
    ref = {snr: np.sum(np.log2(1 + 10 ** (snr / 10) / 4 * ev)) for snr in (10, 20)}
    se10 = spectral_efficiency(real.beamspace, sel, dig, 10)
    se20 = spectral_efficiency(real.beamspace, sel, dig, 20)
    assert se10 == pytest.approx(ref[10], rel=1e-12)
    assert se20 == pytest.approx(ref[20], rel=1e-12)
    assert se20 > se10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 40))
def test_se_paths_agree_and_permutation_invariant(seed, snr):
    rng = np.random.default_rng(seed)
    h = random_hb(rng, 6, 10)
    tx = tuple(rng.choice(10, 3, replace=False))
    rx = tuple(rng.choice(6, 3, replace=False))
    sel = BeamSelection(tx, rx, 10, 6)
    dig = build_digital_stage(sel.submatrix(h), 3)
    full = spectral_efficiency(h, sel, dig, snr)
    assert abs(full - spectral_efficiency_reduced(h, sel, dig, snr)) < 1e-10
    assert full >= 0
    perm = BeamSelection(tx[::-1], rx[1:] + rx[:1], 10, 6)
    assert abs(selection_se(h, perm, snr) - full) < 1e-10


def test_se_monotone_over_grid():
    rng = np.random.default_rng(3)
    h = random_hb(rng, 4, 8)
    sel = BeamSelection((1, 5), (0, 3), 8, 4)
    dig = build_digital_stage(sel.submatrix(h), 2)
    ses = [spectral_efficiency(h, sel, dig, s) for s in range(0, 31, 5)]
    assert all(b >= a for a, b in zip(ses, ses[1:]))


def test_greedy_order_statistic():
    h = np.sqrt(np.array([[3.0, 1.0, 2.0]]))
    sel = greedy_energy_select(h, SelectionConfig(n_rf_tx=2, n_rf_rx=1))
    assert sel.tx_beams == (0, 2)
    sel = greedy_energy_select(np.ones((2, 4)), SelectionConfig(n_rf_tx=2, n_rf_rx=1))
    assert sel.tx_beams == (0, 1) and sel.rx_beams == (0,)


def test_oracle_two_beam_case():
    h = np.array([[2.0, 1.0]])
    sel, se = oracle_select(h, SelectionConfig(n_rf_tx=1, n_rf_rx=1), snr_db=10)
    assert sel.tx_beams == (0,)
    # brute force over the two candidates
    assert se == pytest.approx(max(np.log2(1 + 10 * 4), np.log2(1 + 10 * 1)))


def test_oracle_forced_choice():
    rng = np.random.default_rng(5)
    h = random_hb(rng, 4, 8)
    cfg = SelectionConfig(n_rf_tx=2, n_rf_rx=2, candidate_pool_tx=2, candidate_pool_rx=2)
    sel, _ = oracle_select(h, cfg)
    pool_r, pool_t = candidate_pool(h, cfg)
    assert sel.tx_beams == tuple(pool_t) and sel.rx_beams == tuple(pool_r)


@pytest.mark.parametrize("seed", range(5))
def test_oracle_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    h = random_hb(rng, 4, 8)
    sel, se = oracle_select(h, SelectionConfig(n_rf_tx=2, n_rf_rx=2), snr_db=10)
    ref_se, ref_t, ref_r = brute_force(h, 2, 2, 10)
    assert sel.tx_beams == ref_t and sel.rx_beams == ref_r
    assert abs(se - ref_se) < 1e-12


def test_oracle_generic_builder_path_agrees():
    rng = np.random.default_rng(9)
    h = random_hb(rng, 4, 6)
    cfg = SelectionConfig(n_rf_tx=2, n_rf_rx=2)
    fast = oracle_select(h, cfg)
    slow = oracle_select(h, cfg, dig_builder=build_digital_stage)
    assert fast[0] == slow[0] and abs(fast[1] - slow[1]) < 1e-12


def test_oracle_asymmetric_rf_counts():
    rng = np.random.default_rng(4)
    h = random_hb(rng, 4, 6)
    for n_t, n_r in ((3, 2), (2, 3)):
        sel, se = oracle_select(h, SelectionConfig(n_rf_tx=n_t, n_rf_rx=n_r), snr_db=5)
        ref_se, ref_t, ref_r = brute_force(h, n_t, n_r, 5)
        assert (sel.tx_beams, sel.rx_beams) == (ref_t, ref_r)
        assert abs(se - ref_se) < 1e-12


def test_oracle_frobenius_objective_runs():
    rng = np.random.default_rng(2)
    h = random_hb(rng, 3, 5)
    cfg = SelectionConfig(n_rf_tx=2, n_rf_rx=2)
    sel, se = oracle_select(h, cfg, objective="frobenius")
    best = min(
        frobenius_objective(h, s, build_digital_stage(s.submatrix(h), 2))
        for s in (BeamSelection(t, r, 5, 3) for t in itertools.combinations(range(5), 2)
                  for r in itertools.combinations(range(3), 2)))
    assert frobenius_objective(h, sel, build_digital_stage(sel.submatrix(h), 2)) == pytest.approx(best)
    assert se <= oracle_select(h, cfg)[1] + 1e-12


def test_oracle_budget():
    rng = np.random.default_rng(0)
    h = random_hb(rng, 8, 16)
    with pytest.raises(BudgetExceededError) as exc:
        oracle_select(h, SelectionConfig(budget=1000))
    assert exc.value.count == 1820 * 70


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_greedy_dominated_by_oracle(seed):
    real = generate_realization(ChannelConfig(n_tx=10, n_rx=6), seed)
    cfg = SelectionConfig(n_rf_tx=3, n_rf_rx=3)
    _, se_o = oracle_select(real.beamspace, cfg)
    se_g = selection_se(real.beamspace, greedy_energy_select(real.beamspace, cfg), 10.0)
    assert se_g <= se_o


def test_zf_identity():
    assert zf_benchmark(np.eye(2), 0.0, 2) == pytest.approx(2 * np.log2(1.5), abs=1e-12)


def test_zf_rank_one_matches_best_pair():
    cfg = ChannelConfig(n_tx=16, n_rx=8, n_clusters=1, n_rays=1)
    real = from_paths(cfg, [0.7 + 0.2j], [grid_angles(16)[4]], [grid_angles(8)[6]])
    sel, se = oracle_select(real.beamspace, SelectionConfig(n_rf_tx=1, n_rf_rx=1), snr_db=10)
    assert sel.tx_beams == (4,) and sel.rx_beams == (6,)
    assert zf_benchmark(real.beamspace, 10, 1) == pytest.approx(se, rel=1e-10)
    with pytest.raises(DegenerateChannelError):
        zf_benchmark(real.beamspace, 10, 2)


def test_zf_upper_bounds_oracle():
    cfg = SelectionConfig()
    for seed in range(10):
        real = generate_realization(ChannelConfig(), seed)
        _, se = oracle_select(real.beamspace, cfg, snr_db=30)
        assert zf_benchmark(real.beamspace, 30, 4) >= se


def test_se_csv(tmp_path):
    path = tmp_path / "se.csv"
    write_se_rows(path, [(0, "oracle", 10.0, 2, (1, 3), (0, 2), 7.25)])
    lines = path.read_text().splitlines()
    assert lines[0] == "realization_id,strategy,snr_db,n_streams,tx_beams,rx_beams,se_bits"
    assert lines[1] == "0,oracle,10,2,1 3,0 2,7.25"
