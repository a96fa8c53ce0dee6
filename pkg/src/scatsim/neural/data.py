"""On-the-fly training pairs: random-shape parameter maps simulated into
envelope patches.

Each pair samples its own PSF (variances and noise level uniform over the
training ranges), simulates on a laterally and axially extended grid and
crops the central patch, so patch pixels see the full kernel footprint just
like the interior of a large image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve, hilbert

from ..core import Grid2D, ScattererModel, coarse_axial_grid, make_rng, rf_sample_spacing_mm
from ..forward import discretize_psf
from ..core import Psf
from ..phantoms import ShapeGenConfig, generate_random_parameter_map
from .network import TOTAL_ENCODER_STRIDE

# substream tags for deterministic, independent draws
STREAM_INIT = 0
STREAM_TRAIN = 1
STREAM_VAL = 2
STREAM_REF = 3


@dataclass(frozen=True)
class DataGenConfig:
    n_lateral: int = 64
    n_axial: int = 512
    R: int = 4
    rho_s: float = 0.05
    sigma_s: float = 0.05
    mu_range: tuple[float, float] = (0.0, 1.0)
    sigma_l2_range: tuple[float, float] = (0.2, 1.0)  # mm^2
    sigma_a2_range: tuple[float, float] = (0.02, 0.05)  # mm^2
    noise_range: tuple[float, float] = (0.02, 0.20)
    fc: float = 6.0
    fs: float = 40.0
    c: float = 1540.0
    # tissue-region feature scale: one coarse shape cell per this many fine
    # px; the per-sample cell size is drawn uniformly from the range so the
    # regressor sees structures both finer and coarser than any one scale
    shape_cell_axial_px: tuple[int, int] = (64, 160)
    shape_cell_lateral_px: tuple[int, int] = (48, 120)
    threshold_count: int = 3
    axial_margin_extra: int = 32  # guards Hilbert-transform boundary effects

    def __post_init__(self):
        if self.n_axial % (TOTAL_ENCODER_STRIDE * self.R // np.gcd(TOTAL_ENCODER_STRIDE, self.R)) != 0:
            raise ValueError(
                f"n_axial must be divisible by both the encoder stride "
                f"{TOTAL_ENCODER_STRIDE} and R={self.R}"
            )

    @property
    def model(self) -> ScattererModel:
        return ScattererModel(self.rho_s, self.sigma_s, self.R)

    def shape_cfg(
        self, map_shape: tuple[int, int], rng: np.random.Generator
    ) -> ShapeGenConfig:
        """Shape generator whose coarse cells keep a per-sample pixel
        footprint drawn from the configured range, independent of the
        simulated map extent."""
        cell_ax = rng.uniform(*self.shape_cell_axial_px)
        cell_lat = rng.uniform(*self.shape_cell_lateral_px)
        rows = max(2, round(map_shape[0] * self.R / cell_ax))
        cols = max(2, round(map_shape[1] / cell_lat))
        return ShapeGenConfig(
            (rows, cols), self.threshold_count + 1, self.threshold_count, self.mu_range
        )


def _envelope_f32(rf: np.ndarray) -> np.ndarray:
    """Single-precision one-sided-spectrum envelope along axis 0."""
    n = rf.shape[0]
    spec = np.fft.fft(rf.astype(np.complex64), axis=0)
    gate = np.zeros(n, dtype=np.float32)
    gate[0] = 1.0
    if n % 2 == 0:
        gate[n // 2] = 1.0
        gate[1 : n // 2] = 2.0
    else:
        gate[1 : (n + 1) // 2] = 2.0
    return np.abs(np.fft.ifft(spec * gate[:, None], axis=0))


def make_training_pair(cfg: DataGenConfig, rng: np.random.Generator):
    """One (envelope, mu-target) pair, float32, shapes (A, L) and (A/R, L)."""
    d = rf_sample_spacing_mm(cfg.fs, cfg.c)
    sigma_l2 = rng.uniform(*cfg.sigma_l2_range)
    sigma_a2 = rng.uniform(*cfg.sigma_a2_range)
    noise_level = rng.uniform(*cfg.noise_range)
    psf = Psf(cfg.fc, sigma_l2, sigma_a2, cfg.fs, cfg.c)

    margin_l = int(np.ceil(3.0 * np.sqrt(sigma_l2) / d))
    margin_a = int(np.ceil(3.0 * np.sqrt(sigma_a2) / d)) + cfg.axial_margin_extra
    margin_a = -(-margin_a // cfg.R) * cfg.R  # round up to a multiple of R
    n_lat = cfg.n_lateral + 2 * margin_l
    n_ax = cfg.n_axial + 2 * margin_a
    fine = Grid2D(n_lat, n_ax, d, d)

    coarse = coarse_axial_grid(fine, cfg.R)
    pm = generate_random_parameter_map(cfg.shape_cfg(coarse.shape, rng), coarse, rng)
    mu_fine = np.repeat(pm.mu, cfg.R, axis=0)
    occupied = rng.random(fine.shape) < cfg.rho_s
    sc = np.zeros(fine.shape, dtype=np.float32)
    n_occ = int(occupied.sum())
    sc[occupied] = np.maximum(
        mu_fine[occupied] + cfg.sigma_s * rng.standard_normal(n_occ), 0.0
    )

    kernel = discretize_psf(psf, fine)
    rf = fftconvolve(sc, kernel.taps.astype(np.float32), mode="same")
    rf = rf[:, margin_l : margin_l + cfg.n_lateral]  # lateral crop commutes
    std = noise_level * float(np.mean(np.abs(rf)))
    if std > 0:
        rf = rf + rng.normal(0.0, std, rf.shape).astype(np.float32)
    env = _envelope_f32(rf)

    env_patch = env[margin_a : margin_a + cfg.n_axial]
    mu_patch = pm.mu[
        margin_a // cfg.R : margin_a // cfg.R + cfg.n_axial // cfg.R,
        margin_l : margin_l + cfg.n_lateral,
    ]
    return env_patch.astype(np.float32), mu_patch.astype(np.float32)


class BatchGenerator:
    """Deterministic batch source: batch (split, index) depends only on the
    seed, so regeneration (or prefetching) reproduces identical data."""

    _streams = {"train": STREAM_TRAIN, "val": STREAM_VAL, "ref": STREAM_REF}

    def __init__(self, cfg: DataGenConfig, seed: int, batch_size: int):
        self.cfg = cfg
        self.seed = seed
        self.batch_size = batch_size

    def __call__(self, split: str, index: int):
        """Returns (x, y) with network layout (B, lateral, axial, 1)."""
        stream = self._streams[split]
        xs, ys = [], []
        for b in range(self.batch_size):
            rng = make_rng(self.seed, stream, index, b)
            env, mu = make_training_pair(self.cfg, rng)
            xs.append(env.T)
            ys.append(mu.T)
        return (
            np.stack(xs)[..., None].astype(np.float32),
            np.stack(ys)[..., None].astype(np.float32),
        )


def reference_envelope_mean(cfg: DataGenConfig, seed: int, n_images: int = 100) -> float:
    """Mean envelope intensity over the training distribution, used to
    calibrate real acquisitions to training units."""
    total = 0.0
    for i in range(n_images):
        env, _ = make_training_pair(cfg, make_rng(seed, STREAM_REF, i, 0))
        total += float(env.mean())
    return total / n_images
