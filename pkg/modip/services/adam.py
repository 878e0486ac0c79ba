"""Bias-corrected Adam with a step-decay learning-rate schedule"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from modip.models.configs import AdamConfig
from modip.services.network import ParameterSet

logger = logging.getLogger("modip.adam")


@dataclass(frozen=True)
class AdamState:
    config: AdamConfig
    m: ParameterSet
    v: ParameterSet
    step: int = 0
    skipped: int = 0

    @classmethod
    def create(cls, params: ParameterSet, config: AdamConfig | None = None):
        return cls(config or AdamConfig(), params.zeros_like(), params.zeros_like())

    def effective_lr(self, step: int | None = None) -> float:
        step = self.step if step is None else step
        cfg = self.config
        return cfg.base_lr * cfg.decay ** (step // cfg.decay_every)


def adam_step(
    params: ParameterSet, grads: ParameterSet, state: AdamState
) -> tuple[ParameterSet, AdamState]:
    """One update; the learning rate of update t (0-based) is lr * decay^(t // every).

    A non-finite gradient skips the update and leaves the step counter unchanged.
    """
    params.check_shapes(grads)
    params.check_shapes(state.m)
    if not grads.all_finite():
        logger.warning(f"Non-finite gradient at Adam step {state.step}, skipping update")
        return params, replace(state, skipped=state.skipped + 1)

    cfg = state.config
    lr = state.effective_lr()
    t = state.step + 1
    correction1 = 1.0 - cfg.beta1**t
    correction2 = 1.0 - cfg.beta2**t
    new_params, new_m, new_v = ParameterSet(), ParameterSet(), ParameterSet()
    for name, value in params.items():
        g = grads[name]
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new_m[name], new_v[name] = m, v
    return new_params, replace(state, m=new_m, v=new_v, step=t)
