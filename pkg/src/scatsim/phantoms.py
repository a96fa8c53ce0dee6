"""Random-shape training parameter maps and the circular-inclusion phantom."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import Grid2D, ParameterMap


@dataclass(frozen=True)
class ShapeGenConfig:
    """Coarse-noise shape generator settings.

    A coarse uniform-noise pattern is interpolated bilinearly to the target
    grid and cut at `threshold_count` random quantiles, giving `n_levels`
    nested gray levels whose connected components become tissue regions.
    """

    coarse_dims: tuple[int, int] = (8, 8)
    n_levels: int = 4
    threshold_count: int = 3
    mu_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if min(self.coarse_dims) < 2:
            raise ValueError("coarse pattern must be at least 2x2")
        if self.n_levels != self.threshold_count + 1 or self.n_levels < 1:
            raise ValueError("n_levels must equal threshold_count + 1")
        lo, hi = self.mu_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("mu_range must be an interval within [0, 1]")


def _bilinear_resize(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    rows = np.linspace(0, img.shape[0] - 1, shape[0])
    cols = np.linspace(0, img.shape[1] - 1, shape[1])
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(img, [rr, cc], order=1, mode="nearest")


def generate_random_parameter_map(
    cfg: ShapeGenConfig, out_grid: Grid2D, rng: np.random.Generator
) -> ParameterMap:
    """Piecewise-constant map of overlapping irregular regions, each region
    assigned an independent uniform mean from cfg.mu_range."""
    coarse = rng.random(cfg.coarse_dims)
    field = _bilinear_resize(coarse, out_grid.shape)
    if cfg.threshold_count > 0:
        qs = np.sort(rng.random(cfg.threshold_count))
        thresholds = np.quantile(field, qs)
        levels = np.searchsorted(thresholds, field, side="right")
    else:
        levels = np.zeros(out_grid.shape, dtype=int)
    mu = np.empty(out_grid.shape)
    for level in range(cfg.threshold_count + 1):
        mask = levels == level
        if not mask.any():
            continue
        labeled, n_comp = ndimage.label(mask)
        for comp in range(1, n_comp + 1):
            mu[labeled == comp] = rng.uniform(*cfg.mu_range)
    return ParameterMap(out_grid, mu)


@dataclass(frozen=True)
class InclusionPhantomConfig:
    """Square phantom with one circular inclusion (dimensions in mm)."""

    side: float = 15.0
    inclusion_radius: float = 1.5
    inclusion_center: tuple[float, float] | None = None  # None = phantom center
    mu_background: float = 0.35
    mu_inclusion: float = 0.7

    def __post_init__(self):
        if self.inclusion_radius <= 0 or self.side <= 0:
            raise ValueError("side and inclusion radius must be positive")
        cx, cy = self.center_mm
        r = self.inclusion_radius
        if cx - r < 0 or cy - r < 0 or cx + r > self.side or cy + r > self.side:
            raise ValueError("inclusion does not fit inside the phantom")
        if not (0 <= self.mu_background <= 1 and 0 <= self.mu_inclusion <= 1):
            raise ValueError("phantom means must lie in [0, 1]")

    @property
    def center_mm(self) -> tuple[float, float]:
        if self.inclusion_center is not None:
            return self.inclusion_center
        return (self.side / 2.0, self.side / 2.0)


def inclusion_masks(
    cfg: InclusionPhantomConfig,
    grid: Grid2D,
    transform=None,
    margin_mm: float = 0.0,
) -> dict[str, np.ndarray]:
    """Analytic inclusion/background masks, optionally under a geometric
    transform (the masks follow the deformed geometry exactly). A positive
    margin excludes a band around the boundary from both regions."""
    lat = grid.lateral_coords()
    ax = grid.axial_coords()
    ll, aa = np.meshgrid(lat, ax)
    if transform is not None:
        from .geo import inverse_map_points

        ll, aa = inverse_map_points(transform, ll, aa)
    cx, ca = cfg.center_mm
    dist = np.hypot(ll - cx, aa - ca)
    return {
        "inclusion": dist <= cfg.inclusion_radius - margin_mm,
        "background": dist > cfg.inclusion_radius + margin_mm,
    }


def make_inclusion_phantom(
    cfg: InclusionPhantomConfig, grid: Grid2D
) -> tuple[ParameterMap, dict[str, np.ndarray]]:
    """Two-valued parameter map plus boolean region masks for CNR evaluation."""
    ext_l, ext_a = grid.extent
    cx, ca = cfg.center_mm
    r = cfg.inclusion_radius
    o_l, o_a = grid.origin
    if (
        cx - r < o_l
        or ca - r < o_a
        or cx + r > o_l + ext_l
        or ca + r > o_a + ext_a
    ):
        raise ValueError("inclusion lies outside the grid")
    masks = inclusion_masks(cfg, grid)
    mu = np.where(masks["inclusion"], cfg.mu_inclusion, cfg.mu_background)
    return ParameterMap(grid, mu), masks
