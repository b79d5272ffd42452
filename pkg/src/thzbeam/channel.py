"""Clustered THz channel realizations and the spatial/beamspace transform.

Narrowband Saleh-Valenzuela model with ULA responses at both ends; the
beamspace channel is obtained with the unitary DFT codebook of a lens array.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

__all__ = [
    "ChannelConfig",
    "PathComponent",
    "ChannelRealization",
    "array_response",
    "dft_codebook",
    "spatial_to_beamspace",
    "beamspace_to_spatial",
    "assemble_spatial",
    "generate_realization",
    "generate_realizations",
    "save_realization",
    "load_realization",
]


@dataclass(frozen=True)
class ChannelConfig:
    n_tx: int = 16
    n_rx: int = 8
    n_clusters: int = 4
    n_rays: int = 2
    wavelength: float = 1.36
    antenna_spacing: float | None = None  # None -> wavelength / 2
    tx_power_db: tuple[float, float] = (0.0, 30.0)
    seed: int = 0

    def __post_init__(self):
        if self.antenna_spacing is None:
            object.__setattr__(self, "antenna_spacing", self.wavelength / 2)
        object.__setattr__(self, "tx_power_db", tuple(float(v) for v in self.tx_power_db))
        if not self.n_tx >= self.n_rx >= 1:
            raise ValueError(f"need n_tx >= n_rx >= 1, got n_tx={self.n_tx}, n_rx={self.n_rx}")
        if self.n_clusters < 1 or self.n_rays < 1:
            raise ValueError("n_clusters and n_rays must be >= 1")
        if self.wavelength <= 0 or self.antenna_spacing <= 0:
            raise ValueError("wavelength and antenna_spacing must be positive")
        lo, hi = self.tx_power_db
        if hi < lo:
            raise ValueError("tx_power_db window must be (low, high) with low <= high")

    @property
    def n_paths(self) -> int:
        return self.n_clusters * self.n_rays

    @property
    def gamma(self) -> float:
        return float(np.sqrt(self.n_rx * self.n_tx / self.n_paths))

    @property
    def feature_count(self) -> int:
        return 4 * self.n_paths + 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tx_power_db"] = list(self.tx_power_db)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        return cls(**d)


@dataclass(frozen=True)
class PathComponent:
    cluster_id: int
    ray_id: int
    gain: complex
    aod_spatial: float
    aoa_spatial: float


@dataclass(frozen=True)
class ChannelRealization:
    config: ChannelConfig
    paths: tuple[PathComponent, ...]
    spatial: np.ndarray
    beamspace: np.ndarray
    tx_power: float
    realization_id: int = 0

    def __post_init__(self):
        for arr in (self.spatial, self.beamspace):
            arr.setflags(write=False)

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=np.complex128)

    @property
    def aods(self) -> np.ndarray:
        return np.array([p.aod_spatial for p in self.paths])

    @property
    def aoas(self) -> np.ndarray:
        return np.array([p.aoa_spatial for p in self.paths])

    def features(self) -> np.ndarray:
        """Raw feature row: tx power (dB), path gain, AoDs, AoAs, Re/Im of gains."""
        g = self.gains
        return np.concatenate([
            [self.tx_power, np.linalg.norm(self.spatial)],
            self.aods, self.aoas, g.real, g.imag,
        ])


def array_response(phi: float, n: int) -> np.ndarray:
    """ULA steering vector, element k = exp(-j 2 pi phi k) / sqrt(n)."""
    if n < 1:
        raise ValueError(f"antenna count must be >= 1, got {n}")
    k = np.arange(n)
    return np.exp(-2j * np.pi * phi * k) / np.sqrt(n)


def grid_angles(n: int) -> np.ndarray:
    return (np.arange(n) - (n - 1) / 2) / n


@lru_cache(maxsize=32)
def _codebook(n: int) -> np.ndarray:
    u = np.stack([array_response(phi, n) for phi in grid_angles(n)], axis=1)
    u.setflags(write=False)
    return u


def dft_codebook(n: int) -> np.ndarray:
    """Unitary n-point DFT codebook; column i steers to grid angle (i - (n-1)/2)/n."""
    if n < 1:
        raise ValueError(f"antenna count must be >= 1, got {n}")
    return _codebook(n)


def spatial_to_beamspace(h: np.ndarray) -> np.ndarray:
    # H_b = U_r^H H U_t: entry (i, j) is the gain between receive beam i and transmit beam j
    h = np.asarray(h)
    if h.ndim != 2:
        raise ValueError(f"expected a 2-D channel matrix, got shape {h.shape}")
    n_r, n_t = h.shape
    return dft_codebook(n_r).conj().T @ h @ dft_codebook(n_t)


def beamspace_to_spatial(hb: np.ndarray) -> np.ndarray:
    hb = np.asarray(hb)
    if hb.ndim != 2:
        raise ValueError(f"expected a 2-D channel matrix, got shape {hb.shape}")
    n_r, n_t = hb.shape
    return dft_codebook(n_r) @ hb @ dft_codebook(n_t).conj().T


def assemble_spatial(cfg: ChannelConfig, gains, aods, aoas) -> np.ndarray:
    """gamma * sum_p alpha_p a_r(phi_r,p) a_t(phi_t,p)^H."""
    gains = np.asarray(gains, dtype=np.complex128)
    a_t = np.exp(-2j * np.pi * np.outer(np.arange(cfg.n_tx), aods)) / np.sqrt(cfg.n_tx)
    a_r = np.exp(-2j * np.pi * np.outer(np.arange(cfg.n_rx), aoas)) / np.sqrt(cfg.n_rx)
    return cfg.gamma * (a_r * gains) @ a_t.conj().T


def _make_realization(cfg, gains, aods, aoas, tx_power, realization_id):
    h = assemble_spatial(cfg, gains, aods, aoas)
    paths = tuple(
        PathComponent(p // cfg.n_rays, p % cfg.n_rays, complex(gains[p]), float(aods[p]), float(aoas[p]))
        for p in range(cfg.n_paths)
    )
    return ChannelRealization(cfg, paths, h, spatial_to_beamspace(h), float(tx_power), realization_id)


def generate_realization(cfg: ChannelConfig, rng: np.random.Generator | int | None = None,
                         realization_id: int = 0) -> ChannelRealization:
    if rng is None:
        rng = cfg.seed
    rng = np.random.default_rng(rng)
    n = cfg.n_paths
    # spatial angles are uniform on [-1/2, 1/2] at half-wavelength spacing
    scale = 2 * cfg.antenna_spacing / cfg.wavelength
    aods = scale * rng.uniform(-0.5, 0.5, n)
    aoas = scale * rng.uniform(-0.5, 0.5, n)
    gains = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
    tx_power = rng.uniform(*cfg.tx_power_db)
    return _make_realization(cfg, gains, aods, aoas, tx_power, realization_id)


def generate_realizations(cfg: ChannelConfig, count: int, seed: int | None = None) -> list[ChannelRealization]:
    """`count` realizations, each from its own child seed so they can be built independently."""
    seed = cfg.seed if seed is None else seed
    children = np.random.SeedSequence(seed).spawn(count)
    return [generate_realization(cfg, np.random.default_rng(s), realization_id=i)
            for i, s in enumerate(children)]


def from_paths(cfg: ChannelConfig, gains, aods, aoas, tx_power: float = 0.0,
               realization_id: int = 0) -> ChannelRealization:
    """Build a realization from explicit path parameters (tests, replays)."""
    gains = np.asarray(gains, dtype=np.complex128)
    if gains.shape != (cfg.n_paths,):
        raise ValueError(f"expected {cfg.n_paths} paths, got {gains.shape}")
    return _make_realization(cfg, gains, np.asarray(aods, float), np.asarray(aoas, float),
                             tx_power, realization_id)


# --- serialization ---------------------------------------------------------
#
# BSMC record, little-endian:
#   4s   magic "BSMC"
#   u16  version (1)
#   u16  reserved (0)
#   u32  n_rx, u32 n_tx, u32 n_paths, u64 realization_id
#   f64  tx_power
#   n_paths x (u32 cluster_id, u32 ray_id, f64 gain.re, f64 gain.im, f64 aod, f64 aoa)
#   n_rx*n_tx complex128 spatial matrix, row-major
#   n_rx*n_tx complex128 beamspace matrix, row-major
# The channel config goes into a JSON sidecar `<file>.json`.

MAGIC_CHANNEL = b"BSMC"
_CH_VERSION = 1
_CH_HEADER = struct.Struct("<4sHHIIIQd")
_PATH_DTYPE = np.dtype([("cluster", "<u4"), ("ray", "<u4"), ("re", "<f8"), ("im", "<f8"),
                        ("aod", "<f8"), ("aoa", "<f8")])


def save_realization(real: ChannelRealization, path) -> None:
    path = Path(path)
    cfg = real.config
    rec = np.zeros(len(real.paths), dtype=_PATH_DTYPE)
    for i, p in enumerate(real.paths):
        rec[i] = (p.cluster_id, p.ray_id, p.gain.real, p.gain.imag, p.aod_spatial, p.aoa_spatial)
    with open(path, "wb") as f:
        f.write(_CH_HEADER.pack(MAGIC_CHANNEL, _CH_VERSION, 0, cfg.n_rx, cfg.n_tx,
                                len(real.paths), real.realization_id, real.tx_power))
        f.write(rec.tobytes())
        f.write(np.ascontiguousarray(real.spatial, dtype="<c16").tobytes())
        f.write(np.ascontiguousarray(real.beamspace, dtype="<c16").tobytes())
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


def load_realization(path) -> ChannelRealization:
    path = Path(path)
    cfg = ChannelConfig.from_dict(json.loads(path.with_suffix(path.suffix + ".json").read_text()))
    buf = path.read_bytes()
    magic, version, _, n_rx, n_tx, n_paths, rid, tx_power = _CH_HEADER.unpack_from(buf, 0)
    if magic != MAGIC_CHANNEL:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _CH_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if (n_rx, n_tx) != (cfg.n_rx, cfg.n_tx):
        raise ValueError(f"{path}: dims {n_rx}x{n_tx} disagree with sidecar config")
    off = _CH_HEADER.size
    rec = np.frombuffer(buf, dtype=_PATH_DTYPE, count=n_paths, offset=off)
    off += rec.nbytes
    m = n_rx * n_tx
    spatial = np.frombuffer(buf, dtype="<c16", count=m, offset=off).reshape(n_rx, n_tx).copy()
    beam = np.frombuffer(buf, dtype="<c16", count=m, offset=off + 16 * m).reshape(n_rx, n_tx).copy()
    paths = tuple(PathComponent(int(r["cluster"]), int(r["ray"]), complex(r["re"], r["im"]),
                                float(r["aod"]), float(r["aoa"])) for r in rec)
    return ChannelRealization(cfg, paths, spatial, beam, float(tx_power), int(rid))
