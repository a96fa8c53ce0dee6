"""Grids, scatterer/parameter maps, PSF parametrization and the RNG contract.

Array layout convention used across the package: axis 0 is axial (depth,
increasing downwards), axis 1 is lateral. A map of shape (n_axial, n_lateral)
therefore has one row per depth sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericError(RuntimeError):
    """Raised when a numeric routine cannot produce a valid result."""


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator (Philox); equal (seed, stream) => equal draws.

    Extra integers in `stream` derive independent substreams deterministically,
    e.g. make_rng(seed, iteration) inside a training loop.
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Grid2D:
    """Regular 2D grid; spacings in mm, origin at index (0, 0)."""

    n_lateral: int
    n_axial: int
    spacing_lateral: float
    spacing_axial: float
    origin: tuple[float, float] = (0.0, 0.0)  # (lateral mm, axial mm)

    def __post_init__(self):
        if self.n_lateral < 1 or self.n_axial < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.spacing_lateral <= 0 or self.spacing_axial <= 0:
            raise ValueError("grid spacings must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_axial, self.n_lateral)

    @property
    def is_isotropic(self) -> bool:
        return np.isclose(self.spacing_lateral, self.spacing_axial, rtol=1e-9)

    def lateral_coords(self) -> np.ndarray:
        return self.origin[0] + self.spacing_lateral * np.arange(self.n_lateral)

    def axial_coords(self) -> np.ndarray:
        return self.origin[1] + self.spacing_axial * np.arange(self.n_axial)

    def index_to_physical(self, i_axial, j_lateral):
        """Physical (lateral mm, axial mm) of integer or fractional indices."""
        return (
            self.origin[0] + np.asarray(j_lateral) * self.spacing_lateral,
            self.origin[1] + np.asarray(i_axial) * self.spacing_axial,
        )

    def physical_to_index(self, lateral_mm, axial_mm):
        """Fractional (i_axial, j_lateral) indices of physical coordinates."""
        return (
            (np.asarray(axial_mm) - self.origin[1]) / self.spacing_axial,
            (np.asarray(lateral_mm) - self.origin[0]) / self.spacing_lateral,
        )

    @property
    def extent(self) -> tuple[float, float]:
        """(lateral, axial) physical size in mm, node-to-node."""
        return (
            (self.n_lateral - 1) * self.spacing_lateral,
            (self.n_axial - 1) * self.spacing_axial,
        )

    def center(self) -> tuple[float, float]:
        return (
            self.origin[0] + 0.5 * (self.n_lateral - 1) * self.spacing_lateral,
            self.origin[1] + 0.5 * (self.n_axial - 1) * self.spacing_axial,
        )


def rf_sample_spacing_mm(fs_mhz: float, c_m_per_s: float) -> float:
    """Axial sample pitch c/(2*fs) of pulse-echo RF data, in mm."""
    if fs_mhz <= 0 or c_m_per_s <= 0:
        raise ValueError("fs and c must be positive")
    return c_m_per_s / (2.0 * fs_mhz * 1000.0)


def make_scatterer_grid(
    n_lateral: int, n_axial: int, fs_mhz: float, c_m_per_s: float = 1540.0
) -> Grid2D:
    """Isotropic scatterer grid at the native axial resolution of the RF data."""
    if n_lateral < 1 or n_axial < 1:
        raise ValueError("grid dimensions must be >= 1")
    d = rf_sample_spacing_mm(fs_mhz, c_m_per_s)
    return Grid2D(n_lateral, n_axial, d, d)


def _check_array(values: np.ndarray, grid: Grid2D, name: str) -> np.ndarray:
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise ValueError(
            f"{name} shape {values.shape} does not match grid shape {grid.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite values")
    return values


@dataclass(frozen=True)
class ScattererMap:
    """Point-scatterer amplitudes (>= 0) on a fine isotropic grid."""

    grid: Grid2D
    amplitudes: np.ndarray

    def __post_init__(self):
        a = _check_array(self.amplitudes, self.grid, "amplitudes")
        if a.size and a.min() < 0:
            raise ValueError("scatterer amplitudes must be nonnegative")
        object.__setattr__(self, "amplitudes", a)


@dataclass(frozen=True)
class TrfMap:
    """Signed tissue-reflectivity field on the image grid."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_array(self.values, self.grid, "values"))


@dataclass(frozen=True)
class ParameterMap:
    """Per-pixel Gaussian mean of scattering strength, in [0, 1].

    Lives on a grid whose axial spacing is R times the scatterer spacing
    (coarse axially, full resolution laterally).
    """

    grid: Grid2D
    mu: np.ndarray

    def __post_init__(self):
        m = _check_array(self.mu, self.grid, "mu")
        if m.size and (m.min() < 0 or m.max() > 1):
            raise ValueError("parameter map values must lie in [0, 1]")
        object.__setattr__(self, "mu", m)


@dataclass(frozen=True)
class ScattererModel:
    """Bernoulli density, amplitude std-dev and axial coarsening factor."""

    rho_s: float
    sigma_s: float = 0.05
    R: int = 4

    def __post_init__(self):
        if not 0.0 <= self.rho_s <= 1.0:
            raise ValueError("rho_s must lie in [0, 1]")
        if self.sigma_s < 0:
            raise ValueError("sigma_s must be >= 0")
        if self.R < 1 or int(self.R) != self.R:
            raise ValueError("R must be a positive integer")


def check_rayleigh_density(model: ScattererModel, grid: Grid2D) -> tuple[float, bool]:
    """Scatterer density rho_s/spacing^2 in 1/mm^2 and whether it reaches the
    fully-developed-speckle minimum of 100/mm^2."""
    if not grid.is_isotropic:
        raise ValueError("Rayleigh density check requires an isotropic grid")
    density = model.rho_s / grid.spacing_lateral**2
    return density, density >= 100.0


@dataclass(frozen=True)
class Psf:
    """Parametric Gaussian-cosine pulse-echo kernel.

    fc and fs in MHz, variances in mm^2, speed of sound in m/s.
    """

    fc: float
    sigma_l2: float
    sigma_a2: float
    fs: float = 40.0
    c: float = 1540.0

    def __post_init__(self):
        if self.fc <= 0 or self.sigma_l2 <= 0 or self.sigma_a2 <= 0:
            raise ValueError("fc and variances must be positive")
        if self.fc >= self.fs / 2:
            raise ValueError("fc must be below the Nyquist frequency fs/2")


@dataclass(frozen=True)
class RfImage:
    """Signed radio-frequency image."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_array(self.values, self.grid, "values"))


@dataclass(frozen=True)
class EnvelopeImage:
    """Nonnegative demodulated envelope image."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = _check_array(self.values, self.grid, "values")
        if v.size and v.min() < 0:
            raise ValueError("envelope values must be nonnegative")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian noise level as a fraction of mean |RF|."""

    level: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.level < 1.0:
            raise ValueError("noise level must lie in [0, 1)")


def upsample_parameter_map(pm: ParameterMap, target: Grid2D) -> ParameterMap:
    """Nearest-neighbor replication of a coarse map onto a finer grid.

    The target spacing must divide the source spacing by an integer factor
    per axis (axially that factor is R; laterally it is usually 1).
    """
    fa = pm.grid.spacing_axial / target.spacing_axial
    fl = pm.grid.spacing_lateral / target.spacing_lateral
    ra, rl = int(round(fa)), int(round(fl))
    if ra < 1 or abs(fa - ra) > 1e-6 * ra or rl < 1 or abs(fl - rl) > 1e-6 * rl:
        raise ValueError(
            f"target spacing must divide map spacing by integer factors, got {fa}, {fl}"
        )
    if pm.grid.n_axial * ra != target.n_axial or pm.grid.n_lateral * rl != target.n_lateral:
        raise ValueError("target grid dimensions incompatible with replication factors")
    mu = np.repeat(np.repeat(pm.mu, ra, axis=0), rl, axis=1)
    return ParameterMap(target, mu)


def coarse_axial_grid(fine: Grid2D, R: int) -> Grid2D:
    """Grid of the parameter map matching a fine grid under axial coarsening R."""
    if fine.n_axial % R != 0:
        raise ValueError(f"axial size {fine.n_axial} not divisible by R={R}")
    return Grid2D(
        fine.n_lateral,
        fine.n_axial // R,
        fine.spacing_lateral,
        fine.spacing_axial * R,
        fine.origin,
    )
