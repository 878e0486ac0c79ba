import itertools

import numpy as np
import pytest

from modip.models.volume import GridSpec, Mask, ScalarVolume
from modip.services.dipole import (
    apply_A,
    build_kernel,
    fidelity_gradient,
    fidelity_residual,
    fidelity_value,
)
from modip.services.fourier import dot, norm
from modip.services.loss import laplacian


class TestBuildKernel:
    def test_axial_kernel_values(self):
        kern = build_kernel(GridSpec(matrix=(4, 4, 4)), np.float64)
        assert kern.d[0, 0, 1] == pytest.approx(-2.0 / 3.0, abs=1e-12)
        assert kern.d[1, 0, 0] == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert kern.d[1, 1, 1] == pytest.approx(0.0, abs=1e-12)
        assert kern.d[0, 0, 0] == 0.0

    def test_kernel_range(self, oblique_grid):
        d = build_kernel(oblique_grid, np.float64).d
        assert d.min() >= -2.0 / 3.0 - 1e-12
        assert d.max() <= 1.0 / 3.0 + 1e-12

    def test_oblique_kernel_is_even(self, oblique_grid):
        d = build_kernel(oblique_grid, np.float64).d
        mirrored = np.roll(np.flip(d), shift=1, axis=(0, 1, 2))
        np.testing.assert_array_equal(d, mirrored)

    def test_non_nyquist_bins_follow_the_formula(self, oblique_grid):
        d = build_kernel(oblique_grid, np.float64).d
        # bin (1, 2, 3) in an 8^3 grid with 1x1x2 mm voxels
        k = np.array([1 / 8, 2 / 8, 3 / 16])
        p = np.array(oblique_grid.b0_dir)
        expected = 1 / 3 - (p @ k) ** 2 / (k @ k)
        assert d[1, 2, 3] == pytest.approx(expected, abs=1e-12)

    def test_kernels_are_cached_per_grid_and_precision(self, grid8):
        assert build_kernel(grid8, np.float64) is build_kernel(grid8, np.float64)
        single = build_kernel(grid8, np.float32)
        assert single.d.dtype == np.float32
        assert single is not build_kernel(grid8, np.float64)

    def test_kernel_is_read_only(self, grid8):
        with pytest.raises(ValueError):
            build_kernel(grid8, np.float64).d[0, 0, 1] = 1.0


class TestForwardModel:
    def test_constant_volume_has_no_field(self, oblique_grid):
        kern = build_kernel(oblique_grid, np.float64)
        field = apply_A(ScalarVolume.full(oblique_grid, 0.3), kern)
        assert np.max(np.abs(field.values)) <= 1e-12

    def test_zero_volume_gives_zero_field(self, grid8):
        kern = build_kernel(grid8, np.float64)
        assert not np.any(apply_A(ScalarVolume.zeros(grid8, np.float64), kern).values)

    def test_odd_oblique_grid_output_is_real(self, random_volume):
        grid = GridSpec(matrix=(7, 6, 5), b0_dir=(0.3, 0.2, 0.9))
        kern = build_kernel(grid, np.float64)
        field = apply_A(random_volume(grid), kern)
        assert field.values.dtype == np.float64
        assert np.all(np.isfinite(field.values))

    def test_operator_is_self_adjoint(self, oblique_grid, random_volume):
        kern = build_kernel(oblique_grid, np.float64)
        for _ in range(100):
            x, y = random_volume(oblique_grid), random_volume(oblique_grid)
            gap = abs(dot(apply_A(x, kern), y) - dot(x, apply_A(y, kern)))
            assert gap <= 1e-10 * norm(x) * norm(y)

    def test_laplacian_is_self_adjoint(self, oblique_grid, random_volume):
        for _ in range(100):
            x, y = random_volume(oblique_grid), random_volume(oblique_grid)
            gap = abs(dot(laplacian(x), y) - dot(x, laplacian(y)))
            assert gap <= 1e-10 * norm(x) * norm(y)

    def test_single_precision_forward(self, grid8, random_volume):
        chi = random_volume(grid8).astype(np.float32)
        field = apply_A(chi, build_kernel(grid8, np.float32))
        reference = apply_A(chi.astype(np.float64), build_kernel(grid8, np.float64))
        np.testing.assert_allclose(field.values, reference.values, atol=1e-5)


    def test_operator_norm_is_two_thirds(self, oblique_grid, random_volume):
        kern = build_kernel(oblique_grid, np.float64)
        for _ in range(5):
            x = random_volume(oblique_grid)
            assert norm(apply_A(x, kern)) <= 2.0 / 3.0 * norm(x) * (1 + 1e-12)

    def test_impulse_response_at_origin_is_the_kernel_mean(self, oblique_grid):
        kern = build_kernel(oblique_grid, np.float64)
        impulse = np.zeros(oblique_grid.shape)
        impulse[0, 0, 0] = 1.0
        response = apply_A(ScalarVolume(oblique_grid, impulse), kern)
        assert response.values[0, 0, 0] == pytest.approx(np.mean(kern.d), abs=1e-14)


class TestFidelity:
    def test_exact_field_has_zero_fidelity(self, problem):
        truth, _, kern, mask = problem
        phi = apply_A(truth, kern)
        assert fidelity_value(truth, phi, kern, mask) == pytest.approx(0.0, abs=1e-20)

    def test_residual_is_masked(self, problem):
        chi, phi, kern, mask = problem
        residual = fidelity_residual(chi * 0.5, phi, kern, mask)
        assert not np.any(residual.values[~mask.selected])

    def test_gradient_formula(self, problem):
        chi, phi, kern, mask = problem
        grad = fidelity_gradient(chi * 0.5, phi, kern, mask)
        expected = 2.0 * apply_A((apply_A(chi * 0.5, kern) - phi) * mask, kern).values
        np.testing.assert_allclose(grad.values, expected, atol=1e-12)

    def test_full_mask_value(self, problem):
        chi, phi, kern, _ = problem
        full = Mask.ones(chi.grid, np.float64)
        r = apply_A(chi, kern).values - phi.values
        assert fidelity_value(chi, phi, kern, full) == pytest.approx(np.sum(r * r))

    def test_value_matches_a_scalar_loop(self, rng, random_mask):
        grid = GridSpec(matrix=(4, 4, 4), voxel_mm=(1.0, 1.0, 2.0), b0_dir=(0.5, 0.5, 0.71))
        kern = build_kernel(grid, np.float64)
        chi = rng.standard_normal(grid.shape)
        phi = rng.standard_normal(grid.shape)
        mask = random_mask(grid)
        # circular convolution with the spatial kernel, one voxel at a time
        h = np.fft.ifftn(kern.d).real
        voxels = list(itertools.product(range(4), repeat=3))
        expected = 0.0
        for r in voxels:
            if not mask.selected[r]:
                continue
            field = 0.0
            for s in voxels:
                offset = tuple((r[i] - s[i]) % 4 for i in range(3))
                field += chi[s] * h[offset]
            expected += (field - phi[r]) ** 2
        value = fidelity_value(ScalarVolume(grid, chi), ScalarVolume(grid, phi), kern, mask)
        assert value == pytest.approx(expected, rel=1e-10)
