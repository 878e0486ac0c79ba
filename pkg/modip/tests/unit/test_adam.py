import logging

import numpy as np
import pytest

from modip.errors import ConfigError
from modip.models.configs import AdamConfig
from modip.services.adam import AdamState, adam_step
from modip.services.network import ParameterSet


@pytest.fixture
def params(rng):
    return ParameterSet(
        [("a.weight", rng.standard_normal((2, 3))), ("a.bias", rng.standard_normal(2))]
    )


def alternating(t: np.ndarray) -> np.ndarray:
    return np.where(np.arange(t.size).reshape(t.shape) % 2, 3.0, -0.5)


class TestSchedule:
    @pytest.mark.parametrize(
        "step, expected",
        [(0, 5e-4), (49, 5e-4), (50, 4e-4), (99, 4e-4), (100, 3.2e-4)],
    )
    def test_step_decay(self, params, step, expected):
        state = AdamState.create(params)
        assert state.effective_lr(step) == pytest.approx(expected, rel=1e-12)

    def test_uses_current_step_by_default(self, params):
        cfg = AdamConfig(base_lr=1e-3, decay=0.5, decay_every=1)
        state = AdamState.create(params, cfg)
        grads = params.map(np.ones_like)
        _, state = adam_step(params, grads, state)
        _, state = adam_step(params, grads, state)
        assert state.step == 2
        assert state.effective_lr() == pytest.approx(2.5e-4)


class TestAdamStep:
    def test_first_step_moves_by_lr_against_the_sign(self, params):
        grads = params.map(alternating)
        state = AdamState.create(params)
        updated, state = adam_step(params, grads, state)
        for name in params:
            delta = updated[name] - params[name]
            np.testing.assert_allclose(delta, -5e-4 * np.sign(grads[name]), rtol=1e-6)
        assert state.step == 1

    def test_zero_gradient_keeps_parameters(self, params):
        state = AdamState.create(params)
        updated, state = adam_step(params, params.zeros_like(), state)
        for name in params:
            np.testing.assert_array_equal(updated[name], params[name])
        assert state.step == 1

    def test_zero_gradient_decays_moments(self, params):
        state = AdamState.create(params)
        _, state = adam_step(params, params.map(np.ones_like), state)
        first_m, first_v = state.m.copy(), state.v.copy()
        _, state = adam_step(params, params.zeros_like(), state)
        for name in params:
            np.testing.assert_allclose(state.m[name], 0.9 * first_m[name])
            np.testing.assert_allclose(state.v[name], 0.999 * first_v[name])

    def test_inputs_are_not_modified(self, params):
        before = params.copy()
        adam_step(params, params.map(np.ones_like), AdamState.create(params))
        for name in params:
            np.testing.assert_array_equal(params[name], before[name])

    def test_non_finite_gradient_skips_the_update(self, params, caplog):
        grads = params.map(np.ones_like)
        grads["a.bias"][0] = np.nan
        state = AdamState.create(params)
        with caplog.at_level(logging.WARNING, logger="modip.adam"):
            updated, new_state = adam_step(params, grads, state)
        assert updated is params
        assert new_state.step == 0
        assert new_state.skipped == 1
        assert "Non-finite gradient" in caplog.text

    def test_shape_mismatch(self, params):
        grads = params.copy()
        grads["a.bias"] = np.zeros(3)
        with pytest.raises(ConfigError):
            adam_step(params, grads, AdamState.create(params))

    def test_name_mismatch(self, params):
        grads = ParameterSet([("a.weight", np.zeros((2, 3)))])
        with pytest.raises(ConfigError):
            adam_step(params, grads, AdamState.create(params))
