"""Analog beam selection: selection matrices, digital stage, spectral efficiency,
exhaustive oracle search, greedy energy baseline and the fully digital benchmark.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "SelectionConfig",
    "BeamSelection",
    "DigitalStage",
    "DegenerateChannelError",
    "InvalidSelectionError",
    "BudgetExceededError",
    "build_digital_stage",
    "spectral_efficiency",
    "spectral_efficiency_reduced",
    "frobenius_objective",
    "candidate_pool",
    "oracle_select",
    "greedy_energy_select",
    "zf_benchmark",
    "write_se_rows",
]


class DegenerateChannelError(ValueError):
    pass


class InvalidSelectionError(ValueError):
    pass


class BudgetExceededError(RuntimeError):
    def __init__(self, count: int, budget: int):
        super().__init__(f"oracle would enumerate {count} combinations (budget {budget})")
        self.count = count
        self.budget = budget


@dataclass(frozen=True)
class SelectionConfig:
    n_rf_tx: int = 4
    n_rf_rx: int = 4
    n_streams: int | None = None  # None -> min(n_rf_tx, n_rf_rx)
    candidate_pool_tx: int | None = None  # None -> full at desk scale, else 4 * n_rf
    candidate_pool_rx: int | None = None
    budget: int = 250_000

    def __post_init__(self):
        if self.n_rf_tx < 1 or self.n_rf_rx < 1:
            raise ValueError("RF chain counts must be >= 1")
        ns = min(self.n_rf_tx, self.n_rf_rx)
        if self.n_streams is None:
            object.__setattr__(self, "n_streams", ns)
        elif self.n_streams != ns:
            raise ValueError(f"n_streams must equal min(n_rf_tx, n_rf_rx) = {ns}, got {self.n_streams}")
        for name, n_rf in (("candidate_pool_tx", self.n_rf_tx), ("candidate_pool_rx", self.n_rf_rx)):
            pool = getattr(self, name)
            if pool is not None and pool < n_rf:
                raise ValueError(f"{name}={pool} is smaller than the RF chain count {n_rf}")

    def pools(self, n_rx: int, n_tx: int) -> tuple[int, int]:
        """Resolved (rx, tx) pool sizes for a channel of the given dimensions."""
        def resolve(pool, n_rf, n):
            if pool is None:
                pool = n if n <= 16 else 4 * n_rf
            if n_rf > n:
                raise ValueError(f"{n_rf} RF chains but only {n} beams")
            return min(pool, n)
        return resolve(self.candidate_pool_rx, self.n_rf_rx, n_rx), resolve(self.candidate_pool_tx, self.n_rf_tx, n_tx)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BeamSelection:
    tx_beams: tuple[int, ...]
    rx_beams: tuple[int, ...]
    n_tx: int
    n_rx: int

    def __post_init__(self):
        object.__setattr__(self, "tx_beams", tuple(int(b) for b in self.tx_beams))
        object.__setattr__(self, "rx_beams", tuple(int(b) for b in self.rx_beams))
        for beams, n, side in ((self.tx_beams, self.n_tx, "tx"), (self.rx_beams, self.n_rx, "rx")):
            if len(set(beams)) != len(beams):
                raise InvalidSelectionError(f"duplicate {side} beams: {beams}")
            if any(b < 0 or b >= n for b in beams):
                raise InvalidSelectionError(f"{side} beam index out of range [0, {n}): {beams}")

    @property
    def s_t(self) -> np.ndarray:
        return _selection_matrix(self.tx_beams, self.n_tx)

    @property
    def s_r(self) -> np.ndarray:
        return _selection_matrix(self.rx_beams, self.n_rx)

    def submatrix(self, h_b: np.ndarray) -> np.ndarray:
        """S_r^H H_b S_t without forming the selection matrices."""
        return np.asarray(h_b)[np.ix_(self.rx_beams, self.tx_beams)]


def _selection_matrix(beams, n):
    s = np.zeros((n, len(beams)))
    s[list(beams), np.arange(len(beams))] = 1.0
    return s


@dataclass(frozen=True)
class DigitalStage:
    f_bb: np.ndarray
    w_bb: np.ndarray

    @property
    def n_streams(self) -> int:
        return self.f_bb.shape[1]


def build_digital_stage(h_sel: np.ndarray, n_streams: int, rank_tol: float = 1e-10) -> DigitalStage:
    """Equal-power SVD precoder/combiner for the selected channel.

    F_BB holds the top right singular vectors (unit columns, so
    ||S_t F_BB||_F^2 = n_streams) and W_BB the matching left singular vectors.
    """
    h_sel = np.asarray(h_sel, dtype=np.complex128)
    if n_streams < 1 or n_streams > min(h_sel.shape):
        raise ValueError(f"n_streams={n_streams} incompatible with selected channel {h_sel.shape}")
    u, s, vh = np.linalg.svd(h_sel)
    if s[0] == 0 or s[n_streams - 1] <= rank_tol * s[0]:
        raise DegenerateChannelError(
            f"selected channel has numerical rank < {n_streams} (singular values {s})")
    return DigitalStage(f_bb=vh[:n_streams].conj().T, w_bb=u[:, :n_streams])


def _snr_scale(snr_db: float, n_streams: int) -> float:
    if not math.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    return 10.0 ** (snr_db / 10.0) / n_streams


def spectral_efficiency(h_b: np.ndarray, sel: BeamSelection, dig: DigitalStage, snr_db: float) -> float:
    """log2 det(I + rho/(sigma^2 Ns) R_n^-1 W^H S_r^H H_b S_t F F^H S_t^H H_b^H S_r W)."""
    h_b = np.asarray(h_b)
    s_t, s_r = sel.s_t, sel.s_r
    w, f = dig.w_bb, dig.f_bb
    ns = f.shape[1]
    if h_b.shape != (sel.n_rx, sel.n_tx) or f.shape[0] != len(sel.tx_beams) or w.shape[0] != len(sel.rx_beams):
        raise ValueError("selection, digital stage and channel dimensions disagree")
    c = _snr_scale(snr_db, ns)
    r_n = w.conj().T @ s_r.T @ s_r @ w
    try:
        r_inv = np.linalg.inv(r_n)
    except np.linalg.LinAlgError as e:
        raise InvalidSelectionError("post-combining noise covariance is singular") from e
    m = w.conj().T @ s_r.T @ h_b @ s_t @ f
    sign, logdet = np.linalg.slogdet(np.eye(ns) + c * r_inv @ m @ m.conj().T)
    return float(logdet / np.log(2))


def spectral_efficiency_reduced(h_b: np.ndarray, sel: BeamSelection, dig: DigitalStage, snr_db: float) -> float:
    """Same quantity using R_n = I, valid because selected beams are distinct unit columns."""
    ns = dig.n_streams
    c = _snr_scale(snr_db, ns)
    m = dig.w_bb.conj().T @ sel.submatrix(h_b) @ dig.f_bb
    sign, logdet = np.linalg.slogdet(np.eye(ns) + c * m @ m.conj().T)
    return float(logdet / np.log(2))


def frobenius_objective(h_b: np.ndarray, sel: BeamSelection, dig: DigitalStage) -> float:
    """||H_b - S_r W_BB F_BB^H S_t^H||_F^2 (the selection-fit objective)."""
    approx = sel.s_r @ dig.w_bb @ dig.f_bb.conj().T @ sel.s_t.T
    return float(np.linalg.norm(np.asarray(h_b) - approx) ** 2)


def beam_energy(h_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(receive row energies, transmit column energies)."""
    p = np.abs(np.asarray(h_b)) ** 2
    return p.sum(axis=1), p.sum(axis=0)


def top_beams(energy: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, ties to the lower index, returned ascending."""
    order = np.lexsort((np.arange(len(energy)), -np.asarray(energy)))
    return np.sort(order[:k])


def candidate_pool(h_b: np.ndarray, cfg: SelectionConfig) -> tuple[np.ndarray, np.ndarray]:
    """(rx pool, tx pool): the highest-energy beams eligible for selection, ascending."""
    e_r, e_t = beam_energy(h_b)
    pool_r, pool_t = cfg.pools(*np.shape(h_b))
    return top_beams(e_r, pool_r), top_beams(e_t, pool_t)


def greedy_energy_select(h_b: np.ndarray, cfg: SelectionConfig) -> BeamSelection:
    e_r, e_t = beam_energy(h_b)
    n_rx, n_tx = np.shape(h_b)
    return BeamSelection(tuple(top_beams(e_t, cfg.n_rf_tx)), tuple(top_beams(e_r, cfg.n_rf_rx)), n_tx, n_rx)


def _logdet_principal(gram: np.ndarray, rows: np.ndarray, c: float) -> np.ndarray:
    """log det(I + c G[r, r]) for every row set r, via an unpivoted LDL^H.

    `gram` is (n, n, T) Hermitian PSD, `rows` is (R, k); returns (R, T). Works on
    the lower triangle only with the batch on the trailing axis.
    """
    k = rows.shape[1]
    a = {}
    for i in range(k):
        for m in range(i + 1):
            a[i, m] = c * gram[rows[:, i], rows[:, m]]
        a[i, i] = a[i, i].real + 1.0
    out = 0.0
    for j in range(k):
        d = a[j, j].real
        out = out + np.log(d)
        for i in range(j + 1, k):
            lij = a[i, j] / d
            for m in range(j + 1, i + 1):
                a[i, m] = a[i, m] - lij * np.conj(a[m, j])
    return out


def _fast_se_table(h_b, tx_combos, rx_combos, snr_db, n_streams):
    """SE of every (tx, rx) combination with the SVD digital stage, shape (n_tx_combos, n_rx_combos)."""
    c = _snr_scale(snr_db, n_streams)
    cols = h_b[:, tx_combos]  # (n_r, T, k_t)
    if n_streams == min(tx_combos.shape[1], rx_combos.shape[1]):
        # equal-power SVD over all streams: SE = log2 det(I + c H_sel H_sel^H)
        gram = np.einsum("rtk,stk->rst", cols, cols.conj())
        return _logdet_principal(gram, rx_combos, c).T / np.log(2)
    sel = np.moveaxis(cols, 1, 0)[:, rx_combos, :]  # (T, R, k_r, k_t)
    s = np.linalg.svd(sel, compute_uv=False)[..., :n_streams]
    return np.log2(1 + c * s ** 2).sum(axis=-1)


DigBuilder = Callable[[np.ndarray, int], DigitalStage]


def oracle_select(h_b: np.ndarray, cfg: SelectionConfig, dig_builder: DigBuilder | None = None,
                  snr_db: float = 10.0, objective: str = "se") -> tuple[BeamSelection, float]:
    """Exhaustive search over the candidate pools.

    Every combination of n_rf_tx pool beams crossed with every combination of
    n_rf_rx pool beams gets a digital stage from `dig_builder` and is scored;
    the best score wins, ties to the lexicographically smallest (tx, rx) tuple.
    `objective="se"` maximizes spectral efficiency, `"frobenius"` minimizes the
    selection-fit objective. Returns the selection and its spectral efficiency.
    """
    h_b = np.asarray(h_b, dtype=np.complex128)
    n_rx, n_tx = h_b.shape
    pool_r, pool_t = candidate_pool(h_b, cfg)
    n_combos = math.comb(len(pool_t), cfg.n_rf_tx) * math.comb(len(pool_r), cfg.n_rf_rx)
    if n_combos > cfg.budget:
        raise BudgetExceededError(n_combos, cfg.budget)
    tx_combos = np.array(list(itertools.combinations(pool_t, cfg.n_rf_tx)))
    rx_combos = np.array(list(itertools.combinations(pool_r, cfg.n_rf_rx)))
    ns = cfg.n_streams

    if objective not in ("se", "frobenius"):
        raise ValueError(f"unknown objective {objective!r}")
    if dig_builder is None and objective == "se":
        table = _fast_se_table(h_b, tx_combos, rx_combos, snr_db, ns)
        table = np.where(np.isfinite(table), table, -np.inf)
        i, j = np.unravel_index(np.argmax(table), table.shape)
        sel = BeamSelection(tuple(tx_combos[i]), tuple(rx_combos[j]), n_tx, n_rx)
        dig = build_digital_stage(sel.submatrix(h_b), ns)
        return sel, spectral_efficiency(h_b, sel, dig, snr_db)

    builder = dig_builder or build_digital_stage
    best = None
    for t in tx_combos:
        for r in rx_combos:
            sel = BeamSelection(tuple(t), tuple(r), n_tx, n_rx)
            try:
                dig = builder(sel.submatrix(h_b), ns)
            except DegenerateChannelError:
                continue
            se = spectral_efficiency(h_b, sel, dig, snr_db)
            score = se if objective == "se" else -frobenius_objective(h_b, sel, dig)
            if best is None or score > best[0]:
                best = (score, sel, se)
    if best is None:
        raise DegenerateChannelError("every candidate selection is rank deficient")
    return best[1], best[2]


def selection_se(h_b: np.ndarray, sel: BeamSelection, snr_db: float, n_streams: int | None = None) -> float:
    """SE of a selection with the SVD digital stage; 0 when the selection cannot carry the streams."""
    ns = n_streams or min(len(sel.tx_beams), len(sel.rx_beams))
    try:
        dig = build_digital_stage(sel.submatrix(h_b), ns)
    except DegenerateChannelError:
        return 0.0
    return spectral_efficiency(h_b, sel, dig, snr_db)


def zf_benchmark(h_b: np.ndarray, snr_db: float, n_streams: int, rank_tol: float = 1e-10) -> float:
    """Fully digital transmission over all beams: equal-power eigen-beamforming on n_streams."""
    s = np.linalg.svd(np.asarray(h_b), compute_uv=False)
    if n_streams < 1 or n_streams > len(s):
        raise ValueError(f"n_streams={n_streams} incompatible with channel of rank <= {len(s)}")
    if s[0] == 0 or s[n_streams - 1] <= rank_tol * s[0]:
        raise DegenerateChannelError(f"channel has numerical rank < {n_streams}")
    c = _snr_scale(snr_db, n_streams)
    return float(np.log2(1 + c * s[:n_streams] ** 2).sum())


SE_COLUMNS = ("realization_id", "strategy", "snr_db", "n_streams", "tx_beams", "rx_beams", "se_bits")


def write_se_rows(path, rows: Iterable[Sequence]) -> None:
    """CSV export; beam tuples are written space-separated, SE with 12 significant digits."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SE_COLUMNS)
        for rid, strategy, snr, ns, tx, rx, se in rows:
            w.writerow([rid, strategy, f"{snr:g}", ns, " ".join(map(str, tx)), " ".join(map(str, rx)), f"{se:.12g}"])
