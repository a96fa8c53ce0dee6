import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scatsim.core import Psf, make_rng
from scatsim.metrics import (
    RAYLEIGH_SNR,
    HistogramConfig,
    RegionPair,
    axial_band_excess,
    brightness_equalize,
    delta_cnr,
    delta_intensity,
    delta_snr,
    histogram_kl,
    kl_patchwise,
    psf_band_edge,
    rayleigh_fit,
)


@pytest.fixture
def speckle_pair():
    rng = make_rng(0)
    truth = rng.rayleigh(1.0, (120, 120))
    sim = rng.rayleigh(1.0, (120, 120))
    return truth, sim


class TestBrightnessEqualize:
    def test_double_is_undone(self):
        truth = make_rng(1).random((8, 8)) + 0.5
        out = brightness_equalize(2.0 * truth, truth)
        assert np.allclose(out, truth, atol=1e-12)

    def test_means_match_after(self, speckle_pair):
        truth, sim = speckle_pair
        out = brightness_equalize(sim, truth)
        assert out.mean() == pytest.approx(truth.mean(), abs=1e-12)

    def test_factor_value(self):
        sim = np.full((4, 4), 0.5)
        truth = np.full((4, 4), 1.0)
        out = brightness_equalize(sim, truth)
        assert np.allclose(out / sim, 2.0)

    def test_zero_sim_rejected(self):
        with pytest.raises(ValueError):
            brightness_equalize(np.zeros((3, 3)), np.ones((3, 3)))


class TestDeltaIntensity:
    def test_identical_zero(self, speckle_pair):
        truth, _ = speckle_pair
        assert delta_intensity(truth, truth) == 0.0

    def test_half_scale(self, speckle_pair):
        truth, _ = speckle_pair
        assert delta_intensity(truth, 0.5 * truth) == pytest.approx(0.5, rel=1e-12)

    def test_zero_truth_rejected(self):
        with pytest.raises(ValueError):
            delta_intensity(np.zeros((2, 2)), np.ones((2, 2)))


class TestDeltaSnr:
    def test_identical_zero(self, speckle_pair):
        truth, _ = speckle_pair
        assert delta_snr(truth, truth) == 0.0

    def test_scale_invariance(self, speckle_pair):
        truth, sim = speckle_pair
        assert delta_snr(truth, sim) == pytest.approx(delta_snr(truth, 7.3 * sim), abs=1e-12)

    def test_same_law_speckle_small(self, speckle_pair):
        truth, sim = speckle_pair
        assert truth.size >= 10**4
        assert delta_snr(truth, sim) < 0.05

    def test_constant_image_rejected(self):
        with pytest.raises(ValueError):
            delta_snr(np.ones((4, 4)), np.ones((4, 4)))


class TestDeltaCnr:
    def regions(self, shape):
        m1 = np.zeros(shape, dtype=bool)
        m2 = np.zeros(shape, dtype=bool)
        m1[: shape[0] // 2] = True
        m2[shape[0] // 2 :] = True
        return RegionPair(m1, m2)

    def contrast_image(self, seed=3, hi=2.0):
        rng = make_rng(seed)
        img = rng.rayleigh(1.0, (64, 64))
        img[:32] *= hi
        return img

    def test_identical_zero(self):
        img = self.contrast_image()
        assert delta_cnr(img, img.copy(), self.regions(img.shape)) == 0.0

    def test_affine_scale_invariance(self):
        img = self.contrast_image()
        assert delta_cnr(img, 3.1 * img, self.regions(img.shape)) == pytest.approx(0.0, abs=1e-12)

    def test_erased_contrast_gives_one(self):
        truth = self.contrast_image()
        sim = make_rng(5).rayleigh(np.mean(truth), (64, 64))  # contrast erased
        d = delta_cnr(truth, sim, self.regions(truth.shape))
        assert d == pytest.approx(1.0, abs=0.15)

    def test_zero_truth_cnr_rejected(self):
        flat = make_rng(6).rayleigh(1.0, (64, 64))
        regions = self.regions(flat.shape)
        truth = np.ones((64, 64))
        truth[:32] = 1.0  # identical region means -> zero CNR
        with pytest.raises(ValueError):
            delta_cnr(truth, flat, regions)

    def test_region_pair_validation(self):
        m = np.ones((4, 4), dtype=bool)
        with pytest.raises(ValueError):
            RegionPair(m, m)  # overlap
        with pytest.raises(ValueError):
            RegionPair(np.zeros((4, 4), dtype=bool), m)  # empty


class TestHistogramKl:
    def test_identical_images_zero(self, speckle_pair):
        truth, _ = speckle_pair
        assert histogram_kl(truth, truth.copy()) == 0.0

    def test_default_bins_is_50(self):
        assert HistogramConfig().bins == 50

    def test_same_distribution_small(self):
        rng = make_rng(7)
        a = rng.rayleigh(1.0, 4096)
        b = rng.rayleigh(1.0, 4096)
        assert histogram_kl(a, b) < 0.05

    def test_disjoint_support_large(self):
        a = make_rng(8).uniform(0, 1, 2000)
        b = make_rng(9).uniform(10, 11, 2000)
        assert histogram_kl(a, b) > 1.0

    @given(
        arrays(np.float64, st.integers(60, 200), elements=st.floats(0, 100)),
        arrays(np.float64, st.integers(60, 200), elements=st.floats(0, 100)),
    )
    @settings(max_examples=40, deadline=None)
    def test_nonnegative(self, a, b):
        assert histogram_kl(a, b) >= 0.0


class TestKlPatchwise:
    def test_identical_every_patch_zero(self, speckle_pair):
        truth, _ = speckle_pair
        mean, per_patch = kl_patchwise(truth, truth.copy(), 3.0, (0.1, 0.1))
        assert mean == 0.0
        assert not per_patch.any()
        assert per_patch.size == (120 // 30) ** 2

    def test_partial_patches_dropped(self):
        rng = make_rng(10)
        img = rng.rayleigh(1.0, (70, 50))
        _, per_patch = kl_patchwise(img, img.copy(), 3.0, (0.1, 0.1))
        assert per_patch.size == 2 * 1  # 70//30 x 50//30

    def test_image_smaller_than_patch_rejected(self):
        img = np.ones((10, 10))
        with pytest.raises(ValueError):
            kl_patchwise(img, img, 3.0, (0.1, 0.1))


class TestRayleighFit:
    def test_recovers_scale_and_small_ks(self):
        v = make_rng(11).rayleigh(1.0, 10**5)
        sigma, ks = rayleigh_fit(v)
        assert 0.99 <= sigma <= 1.01
        assert ks < 0.01

    def test_constant_sample_degenerate(self):
        sigma, ks = rayleigh_fit(np.full(200, 2.0))
        assert ks > 0.5

    def test_rayleigh_snr_closed_form(self):
        # mean/std of any Rayleigh law
        assert RAYLEIGH_SNR == pytest.approx(np.sqrt(np.pi / (4 - np.pi)), rel=1e-12)
        assert RAYLEIGH_SNR == pytest.approx(1.913, abs=5e-4)
        v = make_rng(12).rayleigh(3.0, 10**5)
        assert v.mean() / v.std() == pytest.approx(RAYLEIGH_SNR, abs=0.02)

    def test_negative_values_rejected(self):
        with pytest.raises(ValueError):
            rayleigh_fit(np.linspace(-1, 1, 200))

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            rayleigh_fit(np.ones(50))


class TestBandExcess:
    def test_low_frequency_has_no_excess(self):
        a = np.arange(256)
        values = np.cos(2 * np.pi * 0.05 * a)[:, None] * np.ones((1, 8))
        assert axial_band_excess(values, 0.2) < 0.01

    def test_high_frequency_all_excess(self):
        a = np.arange(256)
        values = np.cos(2 * np.pi * 0.35 * a)[:, None] * np.ones((1, 8))
        assert axial_band_excess(values, 0.2) > 0.95

    def test_band_edge_from_psf(self):
        psf = Psf(6.0, 0.2, 0.03)
        edge = psf_band_edge(psf, 0.01925)
        carrier = 6.0 / 40.0
        assert edge > carrier
        spectral_std = 0.01925 / (np.sqrt(2) * np.pi * np.sqrt(0.03))
        assert edge == pytest.approx(carrier + 3 * spectral_std, rel=1e-12)

    def test_zero_field(self):
        assert axial_band_excess(np.zeros((64, 4)), 0.2) == 0.0


class TestMetricZeroIdentity:
    def test_all_four_metrics_zero_on_identical(self, speckle_pair):
        truth, _ = speckle_pair
        sim = truth.copy()
        regions = RegionPair(truth > np.median(truth), truth <= np.median(truth))
        assert delta_intensity(truth, sim) <= 1e-12
        sim_eq = brightness_equalize(sim, truth)
        assert delta_snr(truth, sim_eq) <= 1e-12
        assert delta_cnr(truth, sim_eq, regions) <= 1e-12
        assert kl_patchwise(truth, sim_eq, 3.0, (0.1, 0.1))[0] <= 1e-12
