"""Scatterer-recovery methods: envelope sampling, Wiener deconvolution,
sparse nonnegative reconstruction (least absolute deviations) and the learned
parameter-map regressor, plus parametric PSF fitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize

from .core import (
    EnvelopeImage,
    Grid2D,
    NumericError,
    ParameterMap,
    Psf,
    RfImage,
    ScattererMap,
    ScattererModel,
    TrfMap,
    coarse_axial_grid,
    make_rng,
    rf_sample_spacing_mm,
)
from .forward import DepthConvOperator, DepthPsfBank, PsfKernel, sample_scatterers
from .neural.network import NetworkWeights, axial_stride, predict_raw


def sample_env(
    env: EnvelopeImage, model: ScattererModel, grid: Grid2D, rng: np.random.Generator
) -> ScattererMap:
    """Scatterers at Bernoulli(rho_s) positions whose amplitudes copy the
    envelope intensity at those positions (bilinearly interpolated if the
    grids differ); amplitudes are fixed thereafter."""
    if env.grid.shape == grid.shape and env.grid == grid:
        values = env.values
    else:
        ll, aa = np.meshgrid(grid.lateral_coords(), grid.axial_coords())
        fi, fj = env.grid.physical_to_index(ll, aa)
        values = ndimage.map_coordinates(env.values, [fi, fj], order=1, mode="nearest")
    occupied = rng.random(grid.shape) < model.rho_s
    return ScattererMap(grid, np.where(occupied, values, 0.0))


@dataclass(frozen=True)
class WienerConfig:
    """Noise-to-signal regularization; None selects 1e-2 * max|H|^2."""

    nsr: float | None = None

    def __post_init__(self):
        if self.nsr is not None and self.nsr < 0:
            raise ValueError("nsr must be nonnegative")


def nsr_from_noise_level(level: float) -> float:
    return level**2


def _centered_kernel_fft(taps: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """DFT of the kernel embedded circularly with its center at index (0, 0)."""
    ka, kl = taps.shape
    ca, cl = (ka - 1) // 2, (kl - 1) // 2
    emb = np.zeros(shape)
    rows = (np.arange(ka) - ca) % shape[0]
    cols = (np.arange(kl) - cl) % shape[1]
    np.add.at(emb, (rows[:, None], cols[None, :]), taps)
    return np.fft.fft2(emb)


def wiener_trf(rf: RfImage, kernel: PsfKernel, cfg: WienerConfig = WienerConfig()) -> TrfMap:
    """Frequency-domain regularized deconvolution at the RF image resolution:
    X = conj(H) B / (|H|^2 + nsr)."""
    h = _centered_kernel_fft(kernel.taps, rf.grid.shape)
    h2 = np.abs(h) ** 2
    nsr = cfg.nsr if cfg.nsr is not None else 1e-2 * float(h2.max())
    if nsr == 0.0 and h2.min() <= 1e-12 * h2.max():
        raise NumericError(
            "unregularized inversion rejected: |H| vanishes on the frequency grid"
        )
    b = np.fft.fft2(rf.values)
    x = np.fft.ifft2(np.conj(h) * b / (h2 + nsr)).real
    return TrfMap(rf.grid, x)


@dataclass(frozen=True)
class RladConfig:
    """First-order solver settings for ||Ax-b||_1 + lambda ||x||_1, x >= 0.

    lambda = lambda_rel * max|A^T b|; step sizes come from a power-method
    estimate of ||A||; convergence is declared when the relative primal-dual
    gap drops below tol.
    """

    lambda_rel: float = 0.1
    max_iters: int = 500
    tol: float = 1e-4
    power_iters: int = 20
    gap_every: int = 10

    def __post_init__(self):
        if self.lambda_rel <= 0:
            raise ValueError("lambda_rel must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class RladResult:
    scatterers: ScattererMap
    objective_trace: np.ndarray  # objective of the incumbent best iterate
    converged: bool
    lam: float


class _DecimatedOperator:
    """Depth convolution on a fine grid followed by lateral column decimation."""

    def __init__(self, conv: DepthConvOperator, factor: int):
        self.conv = conv
        self.factor = factor

    def apply(self, x):
        return self.conv.apply(x)[:, :: self.factor]

    def apply_adjoint(self, y):
        stuffed = np.zeros(self.conv.grid.shape)
        stuffed[:, :: self.factor] = y
        return self.conv.apply_adjoint(stuffed)


def _operator_norm(op, shape, iters: int, rng) -> float:
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    s = 1.0
    for _ in range(iters):
        w = op.apply_adjoint(op.apply(v))
        s = np.linalg.norm(w)
        if s == 0:
            return 1.0
        v = w / s
    return float(np.sqrt(s))


def _rlad_objective(op, x, b, lam) -> float:
    return float(np.abs(op.apply(x) - b).sum() + lam * x.sum())


def scat_rec(
    rf: RfImage,
    bank: DepthPsfBank,
    out_grid: Grid2D | None = None,
    cfg: RladConfig = RladConfig(),
) -> RladResult:
    """Sparse nonnegative scatterer reconstruction via a Chambolle-Pock
    primal-dual iteration on the least-absolute-deviations objective.

    The returned trace holds, per iteration, the objective of the best
    iterate found so far (the solver's incumbent, which is also the iterate
    returned). A warning flag (converged=False) is set when the primal-dual
    gap never reached cfg.tol.
    """
    if out_grid is None or out_grid == rf.grid:
        out_grid = rf.grid
        op = DepthConvOperator(bank, rf.grid)
    else:
        if out_grid.n_axial != rf.grid.n_axial:
            raise ValueError("output grid must match the RF grid axially")
        ratio = rf.grid.spacing_lateral / out_grid.spacing_lateral
        factor = int(round(ratio))
        if abs(ratio - factor) > 1e-9 or out_grid.n_lateral != rf.grid.n_lateral * factor:
            raise ValueError("output grid must refine the RF grid laterally by an integer factor")
        op = _DecimatedOperator(DepthConvOperator(bank, out_grid), factor)
    b = rf.values
    atb = op.apply_adjoint(b)
    lam = cfg.lambda_rel * float(np.abs(atb).max())
    norm = _operator_norm(op, out_grid.shape, cfg.power_iters, make_rng(0, 7))
    step = 1.0 / (1.05 * norm)
    sigma = tau = step

    x = np.zeros(out_grid.shape)
    x_bar = x
    p = np.zeros(b.shape)
    best_x = x
    best_obj = _rlad_objective(op, x, b, lam)
    trace = np.empty(cfg.max_iters)
    converged = False
    for it in range(cfg.max_iters):
        p = np.clip(p + sigma * (op.apply(x_bar) - b), -1.0, 1.0)
        x_new = np.maximum(x - tau * op.apply_adjoint(p) - tau * lam, 0.0)
        x_bar = 2.0 * x_new - x
        x = x_new
        obj = _rlad_objective(op, x, b, lam)
        if obj < best_obj:
            best_obj = obj
            best_x = x
        trace[it] = best_obj
        if (it + 1) % cfg.gap_every == 0:
            gap = _duality_gap(op, b, lam, best_obj, p)
            if gap <= cfg.tol * max(best_obj, 1e-30):
                trace = trace[: it + 1]
                converged = True
                break
    return RladResult(ScattererMap(out_grid, best_x), trace, converged, lam)


def _duality_gap(op, b, lam, primal_obj, p) -> float:
    """Primal-dual gap with p scaled into the dual-feasible set."""
    atp = op.apply_adjoint(p)
    worst = float(-atp.min())
    if worst > lam > 0:
        p = p * (lam / worst)
    elif worst > 0 and lam == 0:
        return primal_obj
    dual = -float(np.sum(p * b))
    return primal_obj - dual


def scat_param(
    env: EnvelopeImage,
    weights: NetworkWeights,
    model: ScattererModel,
    rng: np.random.Generator,
) -> tuple[ParameterMap, ScattererMap]:
    """Network parameter-map regression followed by scatterer sampling.

    The network output is clamped to [0, 1]; only the sampling step consumes
    randomness.
    """
    stride = axial_stride(weights.specs)
    if env.grid.n_axial % stride != 0 or env.grid.n_axial % weights.R != 0:
        raise ValueError(
            f"axial size {env.grid.n_axial} incompatible with encoder stride {stride} / R"
        )
    raw = predict_raw(weights, env.values)
    mu = np.clip(raw.astype(np.float64), 0.0, 1.0)
    pm = ParameterMap(coarse_axial_grid(env.grid, weights.R), mu)
    sc = sample_scatterers(pm, model, env.grid, rng)
    return pm, sc


def calibrate_intensity(env: EnvelopeImage, reference_mean: float) -> EnvelopeImage:
    """Scale an envelope so its mean matches the training-distribution mean."""
    m = float(env.values.mean())
    if m <= 0:
        raise ValueError("cannot calibrate an envelope with nonpositive mean")
    return EnvelopeImage(env.grid, env.values * (reference_mean / m))


def _psf_correlation(measured: np.ndarray, d: float, fs: float, fc, sigma_l2, sigma_a2):
    """Normalized correlation of `measured` with the unit-norm model kernel."""
    ka, kl = measured.shape
    half_a, half_l = (ka - 1) // 2, (kl - 1) // 2
    k_l = np.arange(-half_l, half_l + 1)
    k_a = np.arange(-half_a, half_a + 1)
    gl = np.exp(-((k_l * d) ** 2) / sigma_l2)
    ga = np.exp(-((k_a * d) ** 2) / sigma_a2) * np.cos(2.0 * np.pi * (fc / fs) * k_a)
    norm = np.linalg.norm(ga) * np.linalg.norm(gl)
    if norm == 0:
        return 0.0
    return float(ga @ measured @ gl) / norm


def fit_psf_params(
    measured: np.ndarray, grid: Grid2D, c_m_per_s: float = 1540.0
) -> tuple[Psf, float]:
    """Least-squares projection of a measured kernel onto the parametric
    Gaussian-cosine family; returns the fitted Psf and the relative residual.

    Grid search over (fc, sigma_l2, sigma_a2) followed by Nelder-Mead
    refinement; the optimal amplitude scale is solved in closed form, so the
    objective reduces to maximizing normalized correlation.
    """
    measured = np.asarray(measured, dtype=float)
    if measured.ndim != 2 or measured.shape[0] % 2 == 0 or measured.shape[1] % 2 == 0:
        raise ValueError("measured kernel must be 2D with odd dimensions")
    scale = np.linalg.norm(measured)
    if scale == 0:
        raise ValueError("measured kernel is all zero")
    m = measured / scale
    d = grid.spacing_lateral
    if not grid.is_isotropic:
        raise ValueError("PSF fitting requires an isotropic grid")
    fs = c_m_per_s / (2.0 * d * 1000.0)
    half_a, half_l = (measured.shape[0] - 1) // 2, (measured.shape[1] - 1) // 2

    fc_grid = np.linspace(0.02, 0.48, 47) * fs
    sl_grid = np.geomspace((0.5 * d) ** 2, (half_l * d) ** 2, 14)
    sa_grid = np.geomspace((0.5 * d) ** 2, (half_a * d) ** 2, 14)
    best = (-np.inf, None)
    for fc in fc_grid:
        for sl in sl_grid:
            for sa in sa_grid:
                corr = _psf_correlation(m, d, fs, fc, sl, sa)
                if corr > best[0]:
                    best = (corr, (fc, sl, sa))
    fc0, sl0, sa0 = best[1]

    def neg_corr(q):
        fc, lsl, lsa = q
        if not 0 < fc < fs / 2:
            return 1.0
        return -_psf_correlation(m, d, fs, fc, np.exp(lsl), np.exp(lsa))

    res = optimize.minimize(
        neg_corr,
        [fc0, np.log(sl0), np.log(sa0)],
        method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 2000},
    )
    fc, sigma_l2, sigma_a2 = res.x[0], float(np.exp(res.x[1])), float(np.exp(res.x[2]))
    corr = -res.fun
    residual = float(np.sqrt(max(0.0, 1.0 - corr**2)))
    return Psf(fc=float(fc), sigma_l2=sigma_l2, sigma_a2=sigma_a2, fs=fs, c=c_m_per_s), residual
