import logging

import numpy as np
import pytest

from modip.models.configs import NetworkConfig
from modip.services import gradcheck, network


class TestHelpers:
    def test_sample_indices(self):
        assert list(gradcheck.sample_indices(5, None, 0)) == [0, 1, 2, 3, 4]
        assert list(gradcheck.sample_indices(5, 10, 0)) == [0, 1, 2, 3, 4]
        picked = gradcheck.sample_indices(100, 10, 3)
        assert len(set(picked)) == 10
        assert list(picked) == sorted(picked)
        np.testing.assert_array_equal(picked, gradcheck.sample_indices(100, 10, 3))

    def test_central_differences_of_a_quadratic(self):
        x = np.array([[1.0, -2.0], [0.5, 3.0]])
        numeric = gradcheck.central_differences(
            lambda v: float(np.sum(v**2)), x, np.arange(4), h=1e-3
        )
        np.testing.assert_allclose(numeric, 2 * x.ravel(), rtol=1e-10)

    def test_central_differences_leave_the_input(self):
        x = np.ones(3)
        gradcheck.central_differences(lambda v: float(v.sum()), x, np.arange(3), h=0.1)
        np.testing.assert_array_equal(x, np.ones(3))

    def test_relative_error(self):
        assert gradcheck.relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0
        assert gradcheck.relative_error(
            np.array([1.1, 2.0]), np.array([1.0, 2.0])
        ) == pytest.approx(0.05)

    def test_instances_are_seeded(self):
        a, b = gradcheck.make_instance(4, seed=2), gradcheck.make_instance(4, seed=2)
        np.testing.assert_array_equal(a.chi.values, b.chi.values)
        np.testing.assert_array_equal(a.phi.values, b.phi.values)


class TestSuites:
    def test_fidelity_gradient(self):
        assert gradcheck.check_fidelity_gradient(gradcheck.make_instance(8)).passed

    def test_dfo_vjp(self):
        result = gradcheck.check_dfo_vjp(gradcheck.make_instance(8, seed=1))
        assert result.passed, result
        assert result.threshold == gradcheck.DFO_VJP_TOL

    def test_run_all_small(self):
        results = gradcheck.run_all(size=4, base_channels=1, probes=40)
        assert [r.name for r in results] == [
            "fidelity_gradient",
            "dfo_vjp",
            "outer_loss_grad",
            "network_gradient",
        ]
        assert all(r.passed for r in results), results
        assert all(r.probes <= 40 for r in results[:3])

    def test_failed_check_is_reported(self):
        result = gradcheck.CheckResult(
            name="x", max_rel_error=1e-3, threshold=1e-4, probes=10
        )
        assert not result.passed

    def test_network_errors_are_reported_per_tensor(self, caplog):
        cfg = NetworkConfig(depth=1, base_channels=1, seed=0)
        with caplog.at_level(logging.DEBUG, logger="modip.gradcheck"):
            result = gradcheck.check_network_gradient(gradcheck.make_instance(4), cfg)
        names = list(network.init_params(cfg))
        assert list(result.per_tensor) == names
        assert result.passed, result
        for name in names:
            if name.endswith(".weight"):
                assert result.per_tensor[name] <= gradcheck.NETWORK_TOL
        assert f"{names[0]} max relative error" in caplog.text

    def test_volume_checks_have_no_tensor_breakdown(self):
        assert gradcheck.check_fidelity_gradient(gradcheck.make_instance(4)).per_tensor == {}
