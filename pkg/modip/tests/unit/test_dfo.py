import numpy as np
import pytest
from pydantic import ValidationError

from modip.models.configs import DfoConfig
from modip.models.volume import GridSpec, Mask, ScalarVolume
from modip.services.dfo import dfo_iterates, dfo_run, dfo_step, dfo_vjp
from modip.services.dipole import (
    apply_A,
    build_kernel,
    fidelity_gradient,
    fidelity_value,
)
from modip.services.fourier import norm


class TestDfoConfig:
    def test_defaults(self):
        cfg = DfoConfig()
        assert cfg.alpha == 1.2
        assert cfg.n_steps == 10

    @pytest.mark.parametrize("alpha", [2.3, 2.25, 0.0, -1.0])
    def test_unstable_alpha_is_rejected(self, alpha):
        with pytest.raises(ValidationError, match="stability bound"):
            DfoConfig(alpha=alpha)

    def test_negative_steps_are_rejected(self):
        with pytest.raises(ValidationError):
            DfoConfig(n_steps=-1)


class TestDfoRun:
    def test_single_step(self, problem):
        chi, phi, kern, mask = problem
        step = dfo_step(chi, phi, kern, mask, 1.2)
        expected = chi.values - 1.2 * fidelity_gradient(chi, phi, kern, mask).values
        np.testing.assert_allclose(step.values, expected, atol=1e-12)

    def test_zero_steps_is_identity(self, problem):
        chi, phi, kern, mask = problem
        out = dfo_run(chi, phi, kern, mask, DfoConfig(n_steps=0))
        np.testing.assert_array_equal(out.values, chi.values)

    def test_iterates_end_at_run_result(self, problem):
        chi, phi, kern, mask = problem
        cfg = DfoConfig(n_steps=4)
        iterates = list(dfo_iterates(chi, phi, kern, mask, cfg))
        assert len(iterates) == 4
        np.testing.assert_array_equal(
            iterates[-1].values, dfo_run(chi, phi, kern, mask, cfg).values
        )

    def test_fidelity_is_non_increasing(self, rng, random_mask):
        grid = GridSpec(
            matrix=(16, 16, 16), voxel_mm=(1.0, 1.0, 2.0), b0_dir=(0.5, 0.5, 0.71)
        )
        kern = build_kernel(grid, np.float64)
        cfg = DfoConfig(alpha=1.2, n_steps=10)
        for _ in range(100):
            chi = ScalarVolume(grid, rng.standard_normal(grid.shape))
            phi = ScalarVolume(grid, rng.standard_normal(grid.shape))
            mask = random_mask(grid)
            values = [fidelity_value(chi, phi, kern, mask)]
            for chi_i in dfo_iterates(chi, phi, kern, mask, cfg):
                values.append(fidelity_value(chi_i, phi, kern, mask))
            assert all(b <= a * (1 + 1e-12) for a, b in zip(values, values[1:]))

    def test_exact_field_is_a_fixed_point(self, problem):
        truth, _, kern, mask = problem
        phi = apply_A(truth, kern)
        out = dfo_run(truth, phi, kern, mask, DfoConfig(n_steps=5))
        np.testing.assert_allclose(out.values, truth.values, atol=1e-12)


class TestDfoVjp:
    @pytest.fixture
    def small(self, random_mask):
        grid = GridSpec(
            matrix=(4, 4, 4), voxel_mm=(1.0, 1.0, 2.0), b0_dir=(0.5, 0.5, 0.71)
        )
        return grid, build_kernel(grid, np.float64), random_mask(grid)

    @pytest.mark.parametrize("n_steps", [1, 2, 5])
    def test_matches_dense_jacobian_transpose(self, small, rng, n_steps):
        grid, kern, mask = small
        cfg = DfoConfig(alpha=1.2, n_steps=n_steps)
        zero = ScalarVolume.zeros(grid, np.float64)
        # with phi = 0 the DFO map is linear: column i is the image of e_i
        columns = []
        for i in range(grid.n_voxels):
            e = np.zeros(grid.n_voxels)
            e[i] = 1.0
            basis = ScalarVolume(grid, e.reshape(grid.shape))
            columns.append(dfo_run(basis, zero, kern, mask, cfg).values.ravel())
        jacobian = np.stack(columns, axis=1)

        g = ScalarVolume(grid, rng.standard_normal(grid.shape))
        vjp = dfo_vjp(g, kern, mask, cfg).values.ravel()
        oracle = jacobian.T @ g.values.ravel()
        assert np.max(np.abs(vjp - oracle)) <= 1e-10 * np.max(np.abs(oracle))

    def test_jacobian_is_symmetric(self, small):
        grid, kern, mask = small
        cfg = DfoConfig(alpha=1.2, n_steps=3)
        columns = []
        for i in range(grid.n_voxels):
            e = np.zeros(grid.n_voxels)
            e[i] = 1.0
            basis = ScalarVolume(grid, e.reshape(grid.shape))
            columns.append(dfo_vjp(basis, kern, mask, cfg).values.ravel())
        jacobian = np.stack(columns, axis=1)
        np.testing.assert_allclose(jacobian, jacobian.T, atol=1e-12)

    def test_zero_steps_passes_gradient_through(self, small, rng):
        grid, kern, mask = small
        g = ScalarVolume(grid, rng.standard_normal(grid.shape))
        out = dfo_vjp(g, kern, mask, DfoConfig(n_steps=0))
        np.testing.assert_array_equal(out.values, g.values)

    @pytest.mark.parametrize("alpha", [0.5, 1.2, 2.2])
    def test_adjoint_map_never_amplifies(self, small, rng, alpha):
        grid, kern, mask = small
        cfg = DfoConfig(alpha=alpha, n_steps=4)
        for _ in range(5):
            g = ScalarVolume(grid, rng.standard_normal(grid.shape))
            assert norm(dfo_vjp(g, kern, mask, cfg)) <= norm(g) * (1 + 1e-12)

    def test_constant_gradient_passes_through_with_a_full_mask(self, small):
        grid, kern, _ = small
        g = ScalarVolume.full(grid, 0.3)
        out = dfo_vjp(g, kern, Mask.ones(grid, np.float64), DfoConfig(n_steps=5))
        np.testing.assert_allclose(out.values, g.values, atol=1e-12)
