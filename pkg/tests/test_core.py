import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatsim.core import (
    Grid2D,
    NoiseModel,
    ParameterMap,
    Psf,
    ScattererMap,
    ScattererModel,
    check_rayleigh_density,
    coarse_axial_grid,
    make_rng,
    make_scatterer_grid,
    rf_sample_spacing_mm,
    upsample_parameter_map,
)


class TestScattererGrid:
    def test_native_rf_spacing(self):
        g = make_scatterer_grid(64, 512, 40.0, 1540.0)
        assert g.spacing_lateral == pytest.approx(0.01925, abs=1e-12)
        assert g.spacing_axial == pytest.approx(0.01925, abs=1e-12)
        assert g.shape == (512, 64)

    def test_minimal_grid(self):
        g = make_scatterer_grid(1, 1, 40.0, 1540.0)
        assert g.shape == (1, 1)
        assert g.spacing_lateral == pytest.approx(0.01925, abs=1e-12)

    def test_lower_sampling_rate(self):
        # c/(2 fs) arithmetic
        assert rf_sample_spacing_mm(20.0, 1540.0) == pytest.approx(0.0385, abs=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            make_scatterer_grid(0, 10, 40.0)
        with pytest.raises(ValueError):
            make_scatterer_grid(10, 10, -1.0)


class TestRayleighDensity:
    def test_paper_density(self):
        g = make_scatterer_grid(64, 64, 40.0, 1540.0)
        density, ok = check_rayleigh_density(ScattererModel(0.05), g)
        assert density == pytest.approx(0.05 / 0.01925**2, rel=1e-12)
        assert density == pytest.approx(134.93, abs=0.01)
        assert ok

    def test_zero_density_fails(self):
        g = make_scatterer_grid(8, 8, 40.0)
        density, ok = check_rayleigh_density(ScattererModel(0.0), g)
        assert density == 0.0 and not ok

    def test_sparse_fails(self):
        g = make_scatterer_grid(8, 8, 40.0)
        density, ok = check_rayleigh_density(ScattererModel(0.01), g)
        assert density == pytest.approx(0.01 / 0.01925**2, rel=1e-12)
        assert density < 100 and not ok

    def test_anisotropic_rejected(self):
        g = Grid2D(8, 8, 0.02, 0.04)
        with pytest.raises(ValueError):
            check_rayleigh_density(ScattererModel(0.05), g)


class TestUpsampleParameterMap:
    def test_replication_64x128(self):
        rng = make_rng(0)
        coarse = Grid2D(64, 128, 0.01925, 4 * 0.01925)
        pm = ParameterMap(coarse, rng.random((128, 64)))
        fine = Grid2D(64, 512, 0.01925, 0.01925)
        up = upsample_parameter_map(pm, fine)
        assert up.mu.shape == (512, 64)
        ii = np.arange(512)
        assert np.array_equal(up.mu, pm.mu[ii // 4, :])

    def test_constant_preserved(self):
        coarse = Grid2D(8, 8, 1.0, 2.0)
        pm = ParameterMap(coarse, np.full((8, 8), 0.7))
        up = upsample_parameter_map(pm, Grid2D(8, 16, 1.0, 1.0))
        assert np.all(up.mu == 0.7)

    def test_checkerboard_blocks(self):
        coarse = Grid2D(2, 2, 1.0, 3.0)
        pm = ParameterMap(coarse, np.array([[0.0, 1.0], [1.0, 0.0]]))
        up = upsample_parameter_map(pm, Grid2D(2, 6, 1.0, 1.0))
        expected = np.array(
            [[0, 1], [0, 1], [0, 1], [1, 0], [1, 0], [1, 0]], dtype=float
        )
        assert np.array_equal(up.mu, expected)

    def test_non_integer_ratio_rejected(self):
        pm = ParameterMap(Grid2D(4, 4, 1.0, 1.5), np.zeros((4, 4)))
        with pytest.raises(ValueError):
            upsample_parameter_map(pm, Grid2D(4, 6, 1.0, 1.0))

    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_values_stay_in_unit_interval(self, r, seed):
        rng = make_rng(seed)
        coarse = Grid2D(5, 7, 1.0, float(r))
        pm = ParameterMap(coarse, rng.random((7, 5)))
        up = upsample_parameter_map(pm, Grid2D(5, 7 * r, 1.0, 1.0))
        assert up.mu.min() >= 0.0 and up.mu.max() <= 1.0
        assert set(np.unique(up.mu)) == set(np.unique(pm.mu))


class TestGridCoordinates:
    @given(
        st.integers(1, 50),
        st.integers(1, 50),
        st.floats(0.01, 5.0, allow_nan=False),
        st.floats(0.01, 5.0, allow_nan=False),
    )
    @settings(max_examples=50, deadline=None)
    def test_index_physical_round_trip(self, nl, na, dl, da):
        g = Grid2D(nl, na, dl, da, origin=(0.3, -1.2))
        ii, jj = np.meshgrid(np.arange(na), np.arange(nl), indexing="ij")
        lat, ax = g.index_to_physical(ii, jj)
        ri, rj = g.physical_to_index(lat, ax)
        assert np.allclose(ri, ii, atol=1e-9)
        assert np.allclose(rj, jj, atol=1e-9)

    def test_center_of_odd_grid_is_a_node(self):
        g = Grid2D(5, 5, 1.0, 1.0)
        assert g.center() == (2.0, 2.0)


class TestRng:
    def test_equal_seeds_equal_streams(self):
        a = make_rng(1234)
        b = make_rng(1234)
        assert np.array_equal(a.random(10**6), b.random(10**6))

    def test_substreams_differ(self):
        assert not np.array_equal(make_rng(7, 1).random(100), make_rng(7, 2).random(100))

    def test_counter_based_algorithm(self):
        assert type(make_rng(0).bit_generator).__name__ == "Philox"


class TestTypeInvariants:
    def test_scatterer_map_rejects_negative(self):
        g = Grid2D(2, 2, 1.0, 1.0)
        with pytest.raises(ValueError):
            ScattererMap(g, np.array([[0.0, -1.0], [0.0, 0.0]]))

    def test_parameter_map_rejects_out_of_range(self):
        g = Grid2D(2, 2, 1.0, 1.0)
        with pytest.raises(ValueError):
            ParameterMap(g, np.array([[0.0, 1.5], [0.0, 0.0]]))

    def test_shape_mismatch_rejected(self):
        g = Grid2D(3, 2, 1.0, 1.0)
        with pytest.raises(ValueError):
            ScattererMap(g, np.zeros((3, 3)))

    def test_psf_nyquist(self):
        with pytest.raises(ValueError):
            Psf(fc=25.0, sigma_l2=0.2, sigma_a2=0.02, fs=40.0)

    def test_noise_level_bounds(self):
        with pytest.raises(ValueError):
            NoiseModel(-0.1)
        with pytest.raises(ValueError):
            NoiseModel(1.0)

    def test_model_bounds(self):
        with pytest.raises(ValueError):
            ScattererModel(rho_s=1.5)
        with pytest.raises(ValueError):
            ScattererModel(rho_s=0.5, R=0)

    def test_coarse_axial_grid(self):
        fine = make_scatterer_grid(64, 512, 40.0)
        coarse = coarse_axial_grid(fine, 4)
        assert coarse.shape == (128, 64)
        assert coarse.spacing_axial == pytest.approx(4 * fine.spacing_axial)
        with pytest.raises(ValueError):
            coarse_axial_grid(make_scatterer_grid(8, 10, 40.0), 4)
