"""Simulation pipeline: scatterer sampling, PSF discretization, depth-dependent
convolution, additive noise, Hilbert envelope and B-mode compression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sp_fft
from scipy.signal import hilbert

from .core import (
    EnvelopeImage,
    Grid2D,
    NoiseModel,
    ParameterMap,
    Psf,
    RfImage,
    ScattererMap,
    ScattererModel,
    upsample_parameter_map,
)


@dataclass(frozen=True)
class PsfKernel:
    """Discretized PSF taps on the scatterer grid, unit l2 norm, odd dims."""

    psf: Psf
    taps: np.ndarray
    half_extents: tuple[int, int]  # (lateral px, axial px)
    spacing_mm: float

    def __post_init__(self):
        ka, kl = self.taps.shape
        if ka % 2 == 0 or kl % 2 == 0:
            raise ValueError("kernel dimensions must be odd")
        if abs(np.linalg.norm(self.taps) - 1.0) > 1e-6:
            raise ValueError("kernel taps must have unit l2 norm")


@dataclass(frozen=True)
class DepthPsfBank:
    """Ordered ((start_row, stop_row), kernel) entries partitioning image depth."""

    entries: tuple[tuple[tuple[int, int], PsfKernel], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("bank needs at least one entry")
        prev = 0
        for (start, stop), _ in self.entries:
            if start != prev or stop <= start:
                raise ValueError("depth intervals must be contiguous from row 0")
            prev = stop

    @property
    def n_axial(self) -> int:
        return self.entries[-1][0][1]

    @property
    def kernels(self) -> tuple[PsfKernel, ...]:
        return tuple(k for _, k in self.entries)


def uniform_bank(kernels, n_axial: int) -> DepthPsfBank:
    """Bank whose kernels split the depth range into equal intervals."""
    kernels = list(kernels)
    bounds = np.linspace(0, n_axial, len(kernels) + 1).round().astype(int)
    return DepthPsfBank(
        tuple(((int(bounds[i]), int(bounds[i + 1])), k) for i, k in enumerate(kernels))
    )


def discretize_psf(psf: Psf, grid: Grid2D) -> PsfKernel:
    """Sample the Gaussian-cosine PSF on the scatterer grid.

    taps[k_a, k_l] = exp(-l^2/sigma_l^2 - a^2/sigma_a^2) * cos(2*pi*(fc/fs)*k_a)
    with l, a in mm and the cosine argument in RF-sample units, then l2
    normalization. Extents cover 3 sigma per axis.
    """
    if not grid.is_isotropic:
        raise ValueError("PSF discretization requires an isotropic grid")
    d = grid.spacing_lateral
    sig_l = np.sqrt(psf.sigma_l2)
    sig_a = np.sqrt(psf.sigma_a2)
    half_l = int(np.ceil(3.0 * sig_l / d))
    half_a = int(np.ceil(3.0 * sig_a / d))
    if 2 * half_l + 1 > 4 * grid.n_lateral or 2 * half_a + 1 > 4 * grid.n_axial:
        raise ValueError(
            f"kernel {2 * half_a + 1}x{2 * half_l + 1} exceeds 4x the "
            f"{grid.n_axial}x{grid.n_lateral} image"
        )
    k_l = np.arange(-half_l, half_l + 1)
    k_a = np.arange(-half_a, half_a + 1)
    gauss_l = np.exp(-((k_l * d) ** 2) / psf.sigma_l2)
    gauss_a = np.exp(-((k_a * d) ** 2) / psf.sigma_a2)
    carrier = np.cos(2.0 * np.pi * (psf.fc / psf.fs) * k_a)
    taps = np.outer(gauss_a * carrier, gauss_l)
    taps = taps / np.linalg.norm(taps)
    return PsfKernel(psf, taps, (half_l, half_a), d)


class DepthConvOperator:
    """Matrix-free depth-dependent 'same' convolution and its adjoint.

    Forward: each axial row of the output is the zero-padded same convolution
    of the input with the kernel owning that row's depth interval. Kernel FFTs
    are precomputed once, so repeated applications (iterative solvers) cost
    one forward FFT plus one inverse FFT per distinct kernel.
    """

    def __init__(self, bank: DepthPsfBank, grid: Grid2D):
        if bank.n_axial != grid.n_axial:
            raise ValueError(
                f"bank depth {bank.n_axial} does not match grid axial size {grid.n_axial}"
            )
        for k in bank.kernels:
            if abs(k.spacing_mm - grid.spacing_lateral) > 1e-9:
                raise ValueError("kernel grid spacing does not match image grid")
        self.grid = grid
        self.bank = bank
        ka = max(k.taps.shape[0] for k in bank.kernels)
        kl = max(k.taps.shape[1] for k in bank.kernels)
        self._full = (grid.n_axial + ka - 1, grid.n_lateral + kl - 1)
        self._fshape = tuple(sp_fft.next_fast_len(n) for n in self._full)
        self._kfft = []
        self._kfft_flip = []
        self._crops = []
        for k in bank.kernels:
            taps = k.taps
            self._kfft.append(sp_fft.rfft2(taps, self._fshape))
            self._kfft_flip.append(sp_fft.rfft2(taps[::-1, ::-1], self._fshape))
            ca, cl = (taps.shape[0] - 1) // 2, (taps.shape[1] - 1) // 2
            self._crops.append((ca, cl))

    def _same(self, spectrum, crop):
        full = sp_fft.irfft2(spectrum, self._fshape)
        ca, cl = crop
        na, nl = self.grid.shape
        return full[ca : ca + na, cl : cl + nl]

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        xf = sp_fft.rfft2(x, self._fshape)
        out = np.empty(self.grid.shape)
        for ((start, stop), _), hf, crop in zip(self.bank.entries, self._kfft, self._crops):
            out[start:stop] = self._same(xf * hf, crop)[start:stop]
        return out

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        acc = None
        for ((start, stop), _), hf, crop in zip(
            self.bank.entries, self._kfft_flip, self._crops
        ):
            masked = np.zeros(self.grid.shape)
            masked[start:stop] = y[start:stop]
            term = sp_fft.rfft2(masked, self._fshape) * hf
            # flipped odd kernels share the same centered crop geometry
            full = sp_fft.irfft2(term, self._fshape)
            ca, cl = crop
            na, nl = self.grid.shape
            part = full[ca : ca + na, cl : cl + nl]
            acc = part if acc is None else acc + part
        return acc


def sample_scatterers(
    pm: ParameterMap, model: ScattererModel, grid: Grid2D, rng: np.random.Generator
) -> ScattererMap:
    """Bernoulli(rho_s) occupancy with Normal(mu, sigma_s) amplitudes, clamped
    to be nonnegative. The parameter map is replicated onto the fine grid first
    if the grids differ."""
    if pm.grid.shape != grid.shape:
        pm = upsample_parameter_map(pm, grid)
    occupied = rng.random(grid.shape) < model.rho_s
    amps = rng.normal(loc=pm.mu, scale=model.sigma_s)
    amplitudes = np.where(occupied, np.maximum(amps, 0.0), 0.0)
    return ScattererMap(grid, amplitudes)


def convolve(sc: ScattererMap, bank: DepthPsfBank) -> RfImage:
    op = DepthConvOperator(bank, sc.grid)
    return RfImage(sc.grid, op.apply(sc.amplitudes))


def add_noise(rf: RfImage, noise: NoiseModel, rng: np.random.Generator) -> RfImage:
    """Additive i.i.d. Gaussian noise with std = level * mean(|rf|).

    An all-zero image yields zero noise std and is returned unchanged (no
    draws are consumed in that case).
    """
    std = noise.level * np.mean(np.abs(rf.values))
    if std == 0.0:
        return RfImage(rf.grid, rf.values.copy())
    return RfImage(rf.grid, rf.values + rng.normal(0.0, std, rf.values.shape))


def envelope(rf: RfImage) -> EnvelopeImage:
    """Magnitude of the axial analytic signal (one-sided-spectrum Hilbert)."""
    if rf.grid.n_axial < 2:
        raise ValueError("envelope detection needs at least 2 axial samples")
    return EnvelopeImage(rf.grid, np.abs(hilbert(rf.values, axis=0)))


def bmode(env: EnvelopeImage, dynamic_range_db: float = 50.0) -> np.ndarray:
    """Log-compress the envelope to [0, 1] over the given dynamic range."""
    peak = env.values.max()
    if peak <= 0:
        raise ValueError("b-mode requires a positive envelope maximum")
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(env.values / peak)
    db = np.clip(db, -dynamic_range_db, 0.0)
    return (db + dynamic_range_db) / dynamic_range_db


def fine_grid_of(pm_grid: Grid2D, R: int) -> Grid2D:
    """Isotropic scatterer grid underlying a coarse-axial parameter grid."""
    d = pm_grid.spacing_axial / R
    if abs(d - pm_grid.spacing_lateral) > 1e-9:
        raise ValueError("parameter grid is not an axially coarsened isotropic grid")
    return Grid2D(pm_grid.n_lateral, pm_grid.n_axial * R, d, d, pm_grid.origin)


def simulate(
    pm: ParameterMap,
    model: ScattererModel,
    bank: DepthPsfBank,
    noise: NoiseModel,
    rng: np.random.Generator,
    grid: Grid2D | None = None,
) -> tuple[ScattererMap, RfImage, EnvelopeImage]:
    """Sample scatterers, convolve, add noise, detect the envelope."""
    if grid is None:
        grid = fine_grid_of(pm.grid, model.R)
    sc = sample_scatterers(pm, model, grid, rng)
    rf = add_noise(convolve(sc, bank), noise, rng)
    return sc, rf, envelope(rf)
