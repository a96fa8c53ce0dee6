"""Envelope-image mismatch metrics, histogram tooling and Rayleigh fit.

All functions operate on plain 2D intensity arrays. The convention follows
the evaluation protocol: delta_intensity is computed on raw envelopes, while
delta_snr, delta_cnr and the patchwise KL divergence are computed after
brightness equalization of the simulated image against the ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sp_fft

from .core import Psf

RAYLEIGH_SNR = np.sqrt(np.pi / (4.0 - np.pi))  # mean/std of any Rayleigh law


@dataclass(frozen=True)
class RegionPair:
    """Two disjoint, nonempty boolean masks of contrasting regions."""

    mask1: np.ndarray
    mask2: np.ndarray

    def __post_init__(self):
        if not self.mask1.any() or not self.mask2.any():
            raise ValueError("both region masks must be nonempty")
        if (self.mask1 & self.mask2).any():
            raise ValueError("region masks must be disjoint")


@dataclass(frozen=True)
class HistogramConfig:
    """Shared-bin histograms; edges span the pooled min-max of both inputs."""

    bins: int = 50
    epsilon: float = 1e-10

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("need at least 2 histogram bins")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def brightness_equalize(sim: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Scale sim by sum(truth)/sum(sim) so the mean intensities match."""
    s = float(np.sum(sim))
    if s <= 0:
        raise ValueError("cannot equalize an image with nonpositive total intensity")
    return sim * (float(np.sum(truth)) / s)


def delta_intensity(truth: np.ndarray, sim: np.ndarray) -> float:
    """|mean(truth) - mean(sim)| / mean(truth)."""
    it = float(np.mean(truth))
    if it == 0:
        raise ValueError("ground-truth mean intensity is zero")
    return abs(it - float(np.mean(sim))) / it


def delta_snr(truth: np.ndarray, sim: np.ndarray) -> float:
    """Relative mismatch of the global mean/std ratios."""
    st = float(np.std(truth))
    ss = float(np.std(sim))
    if st == 0 or ss == 0:
        raise ValueError("SNR undefined for a constant image")
    snr_t = float(np.mean(truth)) / st
    snr_s = float(np.mean(sim)) / ss
    return abs(snr_t - snr_s) / snr_t


def _cnr(img: np.ndarray, regions: RegionPair) -> float:
    v1 = img[regions.mask1]
    v2 = img[regions.mask2]
    denom = float(v1.std()) + float(v2.std())
    if denom == 0:
        raise ValueError("CNR undefined: both regions are constant")
    return abs(float(v1.mean()) - float(v2.mean())) / denom


def delta_cnr(truth: np.ndarray, sim: np.ndarray, regions: RegionPair) -> float:
    """Relative mismatch of contrast-to-noise ratios over two regions."""
    cnr_t = _cnr(truth, regions)
    if cnr_t == 0:
        raise ValueError("ground-truth CNR is zero; delta undefined")
    return abs(cnr_t - _cnr(sim, regions)) / cnr_t


def histogram_kl(sim_values, truth_values, cfg: HistogramConfig = HistogramConfig()) -> float:
    """KL(h_sim || h_truth) of epsilon-smoothed normalized histograms over
    shared bin edges spanning the pooled value range."""
    sim_values = np.ravel(sim_values)
    truth_values = np.ravel(truth_values)
    lo = min(sim_values.min(), truth_values.min())
    hi = max(sim_values.max(), truth_values.max())
    if hi <= lo:
        hi = lo + 1.0  # both images constant; histograms coincide
    edges = np.linspace(lo, hi, cfg.bins + 1)
    hs, _ = np.histogram(sim_values, bins=edges)
    ht, _ = np.histogram(truth_values, bins=edges)
    hs = hs + cfg.epsilon
    ht = ht + cfg.epsilon
    hs = hs / hs.sum()
    ht = ht / ht.sum()
    return float(np.sum(hs * np.log(hs / ht)))


def kl_patchwise(
    truth: np.ndarray,
    sim: np.ndarray,
    patch_mm: float,
    spacing_mm: tuple[float, float],
    cfg: HistogramConfig = HistogramConfig(),
) -> tuple[float, np.ndarray]:
    """Mean and per-patch KL over non-overlapping square patches of
    patch_mm x patch_mm; partial patches at the edges are dropped.
    spacing_mm is (axial, lateral)."""
    if truth.shape != sim.shape:
        raise ValueError("images must share a shape")
    pa = int(round(patch_mm / spacing_mm[0]))
    pl = int(round(patch_mm / spacing_mm[1]))
    na, nl = truth.shape[0] // pa, truth.shape[1] // pl
    if pa < 1 or pl < 1 or na < 1 or nl < 1:
        raise ValueError("image smaller than one patch")
    kls = []
    for i in range(na):
        for j in range(nl):
            st = np.s_[i * pa : (i + 1) * pa, j * pl : (j + 1) * pl]
            kls.append(histogram_kl(sim[st], truth[st], cfg))
    kls = np.asarray(kls)
    return float(kls.mean()), kls


def rayleigh_fit(values) -> tuple[float, float]:
    """Maximum-likelihood Rayleigh scale and the KS statistic of the fit.

    Requires at least 100 nonnegative samples; zeros are tolerated (they sit
    at the support boundary) but negative values are rejected.
    """
    v = np.ravel(np.asarray(values, dtype=float))
    if v.size < 100:
        raise ValueError("need at least 100 samples for a Rayleigh fit")
    if v.min() < 0:
        raise ValueError("Rayleigh fit requires nonnegative values")
    n = v.size
    sigma = np.sqrt(np.sum(v**2) / (2.0 * n))
    if sigma == 0:
        raise ValueError("all-zero sample; Rayleigh scale undefined")
    v = np.sort(v)
    cdf = 1.0 - np.exp(-(v**2) / (2.0 * sigma**2))
    i = np.arange(1, n + 1)
    ks = max(float(np.max(i / n - cdf)), float(np.max(cdf - (i - 1) / n)))
    return float(sigma), ks


def psf_band_edge(psf: Psf, spacing_mm: float, n_sigmas: float = 3.0) -> float:
    """Upper edge (cycles/pixel) of the PSF's axial carrier band: the carrier
    frequency plus n_sigmas spectral standard deviations of its Gaussian."""
    spectral_std = spacing_mm / (np.sqrt(2.0) * np.pi * np.sqrt(psf.sigma_a2))
    return psf.fc / psf.fs + n_sigmas * spectral_std


def axial_band_excess(values: np.ndarray, edge_cycles_per_px: float) -> float:
    """Fraction of axial spectral power above a band edge; used to flag
    compression-induced carrier shifts (aliasing) in reflectivity fields."""
    spec = np.abs(sp_fft.rfft(values, axis=0)) ** 2
    freqs = sp_fft.rfftfreq(values.shape[0])
    total = float(spec.sum())
    if total == 0:
        return 0.0
    return float(spec[freqs > edge_cycles_per_px].sum()) / total
