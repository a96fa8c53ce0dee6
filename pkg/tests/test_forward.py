import numpy as np
import pytest
from scipy.signal import convolve2d

from scatsim.core import (
    Grid2D,
    NoiseModel,
    ParameterMap,
    Psf,
    RfImage,
    ScattererMap,
    ScattererModel,
    coarse_axial_grid,
    make_rng,
    make_scatterer_grid,
)
from scatsim.forward import (
    DepthConvOperator,
    add_noise,
    bmode,
    convolve,
    discretize_psf,
    envelope,
    sample_scatterers,
    simulate,
    uniform_bank,
)
from scatsim.metrics import rayleigh_fit


@pytest.fixture(scope="module")
def grid():
    return make_scatterer_grid(64, 512, 40.0, 1540.0)


def reference_taps(psf, d, half_l, half_a):
    """Direct evaluation of the Gaussian-cosine form (test-side oracle)."""
    k_l = np.arange(-half_l, half_l + 1) * d
    k_a = np.arange(-half_a, half_a + 1)
    g = np.exp(
        -(k_l[None, :] ** 2) / psf.sigma_l2 - ((k_a[:, None] * d) ** 2) / psf.sigma_a2
    )
    return g * np.cos(2 * np.pi * psf.fc / psf.fs * k_a)[:, None]


class TestDiscretizePsf:
    def test_matches_closed_form_and_center_tap(self, grid):
        psf = Psf(6.0, 0.2, 0.03)
        k = discretize_psf(psf, grid)
        hl, ha = k.half_extents
        ref = reference_taps(psf, grid.spacing_lateral, hl, ha)
        assert ref[ha, hl] == 1.0  # cos(0) * exp(0) before normalization
        assert np.allclose(k.taps, ref / np.linalg.norm(ref), atol=1e-12)

    def test_axial_modulation_period(self, grid):
        k = discretize_psf(Psf(6.0, 0.2, 0.05), grid)
        hl, _ = k.half_extents
        col = k.taps[:, hl]
        spec = np.abs(np.fft.rfft(col, n=4096))
        f_peak = np.fft.rfftfreq(4096)[np.argmax(spec)]
        assert f_peak == pytest.approx(6.0 / 40.0, abs=0.005)  # period fs/fc ~ 6.67 px

    def test_lateral_half_extent_3sigma(self, grid):
        k = discretize_psf(Psf(6.0, 0.2, 0.03), grid)
        assert k.half_extents[0] == int(np.ceil(3 * np.sqrt(0.2) / 0.01925)) == 70

    def test_unit_l2_norm_and_odd_dims(self, grid):
        k = discretize_psf(Psf(6.0, 0.5, 0.02), grid)
        assert abs(np.linalg.norm(k.taps) - 1.0) < 1e-6
        assert k.taps.shape[0] % 2 == 1 and k.taps.shape[1] % 2 == 1

    def test_oversized_kernel_rejected(self):
        small = make_scatterer_grid(16, 16, 40.0)
        with pytest.raises(ValueError, match="exceeds 4x"):
            discretize_psf(Psf(6.0, 1.0, 0.05), small)


class TestConvolve:
    def small_kernel(self, grid):
        return discretize_psf(Psf(6.0, 0.005, 0.005), grid)

    def test_delta_response(self):
        g = make_scatterer_grid(64, 64, 40.0)
        k = self.small_kernel(g)
        amps = np.zeros(g.shape)
        amps[32, 32] = 1.0
        rf = convolve(ScattererMap(g, amps), uniform_bank([k], 64))
        ka, kl = k.taps.shape
        ca, cl = ka // 2, kl // 2
        patch = rf.values[32 - ca : 32 + ca + 1, 32 - cl : 32 + cl + 1]
        assert np.allclose(patch, k.taps, atol=1e-12)
        outside = rf.values.copy()
        outside[32 - ca : 32 + ca + 1, 32 - cl : 32 + cl + 1] = 0
        assert np.max(np.abs(outside)) < 1e-12

    def test_linearity_exact_power_of_two(self):
        g = make_scatterer_grid(32, 48, 40.0)
        k = self.small_kernel(g)
        bank = uniform_bank([k], 48)
        amps = make_rng(3).random(g.shape)
        r1 = convolve(ScattererMap(g, amps), bank).values
        r2 = convolve(ScattererMap(g, 2.0 * amps), bank).values
        assert np.array_equal(r2, 2.0 * r1)

    def test_two_interval_bank_matches_per_row_oracle(self):
        g = make_scatterer_grid(48, 64, 40.0)
        k1 = discretize_psf(Psf(6.0, 0.004, 0.004), g)
        k2 = discretize_psf(Psf(5.0, 0.009, 0.006), g)
        bank = uniform_bank([k1, k2], 64)
        amps = make_rng(11).random(g.shape)
        out = convolve(ScattererMap(g, amps), bank).values
        full1 = convolve2d(amps, k1.taps, mode="same")
        full2 = convolve2d(amps, k2.taps, mode="same")
        assert np.allclose(out[:32], full1[:32], atol=1e-10)
        assert np.allclose(out[32:], full2[32:], atol=1e-10)

    def test_frequency_domain_equals_direct_spatial(self):
        g = make_scatterer_grid(32, 32, 40.0)
        k = discretize_psf(Psf(6.0, 0.01, 0.008), g)
        amps = make_rng(5).standard_normal(g.shape)
        amps -= amps.min()
        op = DepthConvOperator(uniform_bank([k], 32), g)
        direct = convolve2d(amps, k.taps, mode="same")
        rel = np.abs(op.apply(amps) - direct).max() / np.abs(direct).max()
        assert rel < 1e-8

    def test_adjoint_dot_product(self):
        g = make_scatterer_grid(24, 40, 40.0)
        k1 = discretize_psf(Psf(6.0, 0.004, 0.004), g)
        k2 = discretize_psf(Psf(7.0, 0.006, 0.003), g)
        op = DepthConvOperator(uniform_bank([k1, k2], 40), g)
        rng = make_rng(9)
        x = rng.standard_normal(g.shape)
        y = rng.standard_normal(g.shape)
        lhs = np.sum(op.apply(x) * y)
        rhs = np.sum(x * op.apply_adjoint(y))
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_grid_mismatch_rejected(self):
        g = make_scatterer_grid(16, 16, 40.0)
        k = self.small_kernel(g)
        with pytest.raises(ValueError):
            DepthConvOperator(uniform_bank([k], 32), g)


class TestSampleScatterers:
    def test_zero_density_empty(self, grid):
        pm = ParameterMap(coarse_axial_grid(grid, 4), np.full((128, 64), 0.5))
        sc = sample_scatterers(pm, ScattererModel(0.0), grid, make_rng(0))
        assert not sc.amplitudes.any()

    def test_deterministic_limit(self, grid):
        pm = ParameterMap(coarse_axial_grid(grid, 4), np.full((128, 64), 0.5))
        sc = sample_scatterers(pm, ScattererModel(1.0, sigma_s=0.0), grid, make_rng(0))
        assert np.all(sc.amplitudes == 0.5)

    def test_count_within_binomial_bound(self, grid):
        pm = ParameterMap(coarse_axial_grid(grid, 4), np.full((128, 64), 0.5))
        sc = sample_scatterers(pm, ScattererModel(0.05), grid, make_rng(1))
        n = grid.n_axial * grid.n_lateral
        mean = 0.05 * n
        std = np.sqrt(n * 0.05 * 0.95)
        count = np.count_nonzero(sc.amplitudes)
        assert abs(count - mean) <= 3 * std

    def test_amplitudes_clamped_nonnegative(self, grid):
        pm = ParameterMap(coarse_axial_grid(grid, 4), np.zeros((128, 64)))
        sc = sample_scatterers(pm, ScattererModel(1.0, sigma_s=0.3), grid, make_rng(2))
        assert sc.amplitudes.min() >= 0.0


class TestAddNoise:
    def test_zero_level_identity(self):
        g = Grid2D(10, 10, 1.0, 1.0)
        rf = RfImage(g, make_rng(0).standard_normal(g.shape))
        out = add_noise(rf, NoiseModel(0.0), make_rng(1))
        assert np.array_equal(out.values, rf.values)

    def test_noise_std_matches_level(self):
        g = Grid2D(400, 300, 1.0, 1.0)
        rf = RfImage(g, np.ones(g.shape))  # mean |rf| = 1
        out = add_noise(rf, NoiseModel(0.1), make_rng(3))
        std = np.std(out.values - rf.values)
        assert std == pytest.approx(0.1, rel=0.02)

    def test_all_zero_rf_stays_zero(self):
        g = Grid2D(8, 8, 1.0, 1.0)
        out = add_noise(RfImage(g, np.zeros(g.shape)), NoiseModel(0.2), make_rng(0))
        assert not out.values.any()


class TestEnvelope:
    def test_cosine_has_unit_envelope_interior(self):
        g = Grid2D(4, 512, 1.0, 1.0)
        a = np.arange(512)
        rf = np.cos(2 * np.pi * 0.15 * a)[:, None] * np.ones((1, 4))
        env = envelope(RfImage(g, rf))
        interior = env.values[64:-64]
        assert np.max(np.abs(interior - 1.0)) < 0.01

    def test_zero_rf_zero_envelope(self):
        g = Grid2D(4, 16, 1.0, 1.0)
        assert not envelope(RfImage(g, np.zeros(g.shape))).values.any()

    def test_sign_symmetry(self):
        g = Grid2D(6, 64, 1.0, 1.0)
        rf = make_rng(4).standard_normal(g.shape)
        e1 = envelope(RfImage(g, rf)).values
        e2 = envelope(RfImage(g, -rf)).values
        assert np.allclose(e1, e2, atol=1e-12)


class TestBmode:
    def grid(self, shape):
        return Grid2D(shape[1], shape[0], 1.0, 1.0)

    def test_constant_maps_to_one(self):
        from scatsim.core import EnvelopeImage

        env = EnvelopeImage(self.grid((4, 4)), np.full((4, 4), 3.3))
        assert np.all(bmode(env, 50.0) == 1.0)

    def test_tenth_of_max_at_50db(self):
        from scatsim.core import EnvelopeImage

        values = np.ones((2, 2))
        values[0, 0] = 0.1
        out = bmode(EnvelopeImage(self.grid((2, 2)), values), 50.0)
        assert out[0, 0] == pytest.approx((50.0 - 20.0) / 50.0, abs=1e-12)

    def test_clipping_below_dynamic_range(self):
        from scatsim.core import EnvelopeImage

        values = np.ones((2, 2))
        values[0, 0] = 1e-6
        out = bmode(EnvelopeImage(self.grid((2, 2)), values), 50.0)
        assert out[0, 0] == 0.0

    def test_zero_envelope_rejected(self):
        from scatsim.core import EnvelopeImage

        with pytest.raises(ValueError):
            bmode(EnvelopeImage(self.grid((2, 2)), np.zeros((2, 2))), 50.0)


class TestSimulate:
    def setup_method(self):
        # compact PSF packs many speckle cells into the interior, which keeps
        # single-realization envelope statistics tight
        self.grid = make_scatterer_grid(512, 512, 40.0)
        self.pm = ParameterMap(
            coarse_axial_grid(self.grid, 4), np.full((128, 512), 0.6)
        )
        self.model = ScattererModel(0.05)
        self.kernel = discretize_psf(Psf(6.0, 0.05, 0.02), self.grid)
        self.bank = uniform_bank([self.kernel], 512)

    def interior(self, env):
        # exclude the kernel-truncation border, where speckle is not stationary
        ml, ma = self.kernel.half_extents
        return env.values[ma + 32 : -(ma + 32), ml:-ml]

    def test_deterministic_given_seed(self):
        a = simulate(self.pm, self.model, self.bank, NoiseModel(0.05), make_rng(42))
        b = simulate(self.pm, self.model, self.bank, NoiseModel(0.05), make_rng(42))
        assert np.array_equal(a[0].amplitudes, b[0].amplitudes)
        assert np.array_equal(a[1].values, b[1].values)
        assert np.array_equal(a[2].values, b[2].values)

    def test_zero_map_zero_output(self):
        pm = ParameterMap(coarse_axial_grid(self.grid, 4), np.zeros((128, 512)))
        model = ScattererModel(0.05, sigma_s=0.0)
        sc, rf, env = simulate(pm, model, self.bank, NoiseModel(0.1), make_rng(0))
        # zero signal implies zero noise std, hence an all-zero envelope
        assert not sc.amplitudes.any() and not rf.values.any() and not env.values.any()

    def test_envelope_snr_is_rayleigh(self):
        _, _, env = simulate(self.pm, self.model, self.bank, NoiseModel(0.0), make_rng(7))
        interior = self.interior(env)
        assert interior.size >= 10**4
        snr = interior.mean() / interior.std()
        assert snr == pytest.approx(np.sqrt(np.pi / (4 - np.pi)), abs=0.1)

    def test_fully_developed_speckle_ks(self):
        _, _, env = simulate(self.pm, self.model, self.bank, NoiseModel(0.0), make_rng(8))
        _, ks = rayleigh_fit(self.interior(env))
        assert ks < 0.05
