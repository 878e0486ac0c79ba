"""Untrained encoder-decoder network f_theta with hand-derived gradients.

Layout for depth d and base width b (level l has b * 2**l channels):

    enc{l}.conv1, enc{l}.conv2 (skip tap), maxpool     for l = 0 .. d-1
    bottom.conv1, bottom.conv2                          at width b * 2**d
    upsample, dec{l}.up, concat(skip, up), dec{l}.conv1, dec{l}.conv2
                                                        for l = d-1 .. 0
    out (1x1x1, linear, b -> 1)

Every 3x3x3 convolution is followed by instance normalization (when enabled)
and ReLU. Depth 1 gives 8 convolutions and one concatenation.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from modip.errors import ConfigError, DivisibilityError, StaleCacheError
from modip.models.configs import NetworkConfig
from modip.models.volume import ScalarVolume, working_dtype
from modip.services import layers
from modip.utils.rng import PortableRandom

logger = logging.getLogger("modip.network")


@dataclass(frozen=True)
class ConvSpec:
    name: str
    c_in: int
    c_out: int
    kernel: int
    norm: bool

    @property
    def weight_shape(self) -> tuple[int, ...]:
        k = self.kernel
        return self.c_out, self.c_in, k, k, k

    @property
    def fan_in(self) -> int:
        return self.c_in * self.kernel**3

    @property
    def n_params(self) -> int:
        count = self.fan_in * self.c_out + self.c_out
        if self.norm:
            count += 2 * self.c_out
        return count


def layer_table(cfg: NetworkConfig) -> list[ConvSpec]:
    norm = cfg.norm_enabled
    width = [cfg.base_channels * 2**level for level in range(cfg.depth + 1)]
    table = []
    c_in = 1
    for level in range(cfg.depth):
        table.append(ConvSpec(f"enc{level}.conv1", c_in, width[level], 3, norm))
        table.append(ConvSpec(f"enc{level}.conv2", width[level], width[level], 3, norm))
        c_in = width[level]
    bottom = width[cfg.depth]
    table.append(ConvSpec("bottom.conv1", c_in, bottom, 3, norm))
    table.append(ConvSpec("bottom.conv2", bottom, bottom, 3, norm))
    for level in reversed(range(cfg.depth)):
        table.append(ConvSpec(f"dec{level}.up", width[level + 1], width[level], 3, norm))
        table.append(
            ConvSpec(f"dec{level}.conv1", 2 * width[level], width[level], 3, norm)
        )
        table.append(ConvSpec(f"dec{level}.conv2", width[level], width[level], 3, norm))
    table.append(ConvSpec("out", width[0], 1, 1, False))
    return table


def count_params(cfg: NetworkConfig) -> int:
    return sum(spec.n_params for spec in layer_table(cfg))


class ParameterSet(OrderedDict[str, np.ndarray]):
    """Named parameter tensors in layer-table order.

    Names are ``<layer>.weight``, ``<layer>.bias`` and, for normalized layers,
    ``<layer>.scale`` and ``<layer>.shift``.
    """

    @property
    def size(self) -> int:
        return sum(t.size for t in self.values())

    def copy(self) -> "ParameterSet":
        return ParameterSet((name, t.copy()) for name, t in self.items())

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet((name, np.zeros_like(t)) for name, t in self.items())

    def map(self, fn) -> "ParameterSet":
        return ParameterSet((name, fn(t)) for name, t in self.items())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.values()])

    def check_shapes(self, other: "ParameterSet"):
        if list(self.keys()) != list(other.keys()):
            raise ConfigError("parameter names do not match")
        for name, t in self.items():
            if t.shape != other[name].shape:
                raise ConfigError(
                    f"parameter {name}: shape {t.shape} != {other[name].shape}"
                )


ParamGrads = ParameterSet


def init_params(cfg: NetworkConfig, dtype=None) -> ParameterSet:
    """He-scaled Gaussian weights, zero biases, unit scales, zero shifts"""
    dtype = dtype or working_dtype()
    rng = PortableRandom(cfg.seed)
    params = ParameterSet()
    for spec in layer_table(cfg):
        std = np.sqrt(2.0 / spec.fan_in)
        params[f"{spec.name}.weight"] = rng.normal(0.0, std, spec.weight_shape).astype(
            dtype
        )
        params[f"{spec.name}.bias"] = np.zeros(spec.c_out, dtype=dtype)
        if spec.norm:
            params[f"{spec.name}.scale"] = np.ones(spec.c_out, dtype=dtype)
            params[f"{spec.name}.shift"] = np.zeros(spec.c_out, dtype=dtype)
    return params


def check_params(params: ParameterSet, cfg: NetworkConfig):
    expected = []
    for spec in layer_table(cfg):
        expected.append((f"{spec.name}.weight", spec.weight_shape))
        expected.append((f"{spec.name}.bias", (spec.c_out,)))
        if spec.norm:
            expected.append((f"{spec.name}.scale", (spec.c_out,)))
            expected.append((f"{spec.name}.shift", (spec.c_out,)))
    actual = [(name, t.shape) for name, t in params.items()]
    if actual != expected:
        raise ConfigError("parameter set does not match the network configuration")


def check_divisible(shape, cfg: NetworkConfig):
    if any(m % cfg.divisor for m in shape):
        raise DivisibilityError(
            f"grid {tuple(shape)} is not divisible by 2^depth = {cfg.divisor}"
        )


@dataclass
class BlockCache:
    conv: layers.ConvCache
    norm: layers.NormCache | None
    active: np.ndarray


@dataclass
class ForwardCache:
    cfg: NetworkConfig
    param_id: int
    blocks: dict[str, BlockCache] = field(default_factory=dict)
    pools: list[np.ndarray] = field(default_factory=list)
    out: layers.ConvCache | None = None
    consumed: bool = False


def _block_forward(x, spec: ConvSpec, params: ParameterSet, cache: ForwardCache):
    y, conv_cache = layers.conv3d_forward(
        x, params[f"{spec.name}.weight"], params[f"{spec.name}.bias"]
    )
    norm_cache = None
    if spec.norm:
        y, norm_cache = layers.instance_norm_forward(
            y, params[f"{spec.name}.scale"], params[f"{spec.name}.shift"]
        )
    y, active = layers.relu_forward(y)
    cache.blocks[spec.name] = BlockCache(conv_cache, norm_cache, active)
    return y


def _block_backward(g, spec: ConvSpec, params, cache: ForwardCache, grads, first=False):
    block = cache.blocks[spec.name]
    g = layers.relu_backward(g, block.active)
    if spec.norm:
        g, grads[f"{spec.name}.scale"], grads[f"{spec.name}.shift"] = (
            layers.instance_norm_backward(g, block.norm, params[f"{spec.name}.scale"])
        )
    g, grads[f"{spec.name}.weight"], grads[f"{spec.name}.bias"] = (
        layers.conv3d_backward(
            g, block.conv, params[f"{spec.name}.weight"], need_input_grad=not first
        )
    )
    return g


def forward(
    phi_in: ScalarVolume, params: ParameterSet, cfg: NetworkConfig
) -> tuple[ScalarVolume, ForwardCache]:
    check_divisible(phi_in.grid.shape, cfg)
    check_params(params, cfg)
    specs = {spec.name: spec for spec in layer_table(cfg)}
    cache = ForwardCache(cfg=cfg, param_id=id(params))

    x = phi_in.values[None].astype(params["out.weight"].dtype, copy=False)
    skips = []
    for level in range(cfg.depth):
        x = _block_forward(x, specs[f"enc{level}.conv1"], params, cache)
        x = _block_forward(x, specs[f"enc{level}.conv2"], params, cache)
        skips.append(x)
        x, argmax = layers.maxpool_forward(x)
        cache.pools.append(argmax)
    x = _block_forward(x, specs["bottom.conv1"], params, cache)
    x = _block_forward(x, specs["bottom.conv2"], params, cache)
    for level in reversed(range(cfg.depth)):
        x = layers.upsample_forward(x)
        x = _block_forward(x, specs[f"dec{level}.up"], params, cache)
        x = np.concatenate([skips[level], x], axis=0)
        x = _block_forward(x, specs[f"dec{level}.conv1"], params, cache)
        x = _block_forward(x, specs[f"dec{level}.conv2"], params, cache)
    y, cache.out = layers.conv3d_forward(x, params["out.weight"], params["out.bias"])
    return ScalarVolume(phi_in.grid, np.ascontiguousarray(y[0])), cache


def backward(
    grad_chi0: ScalarVolume,
    cache: ForwardCache,
    params: ParameterSet,
    cfg: NetworkConfig,
) -> ParamGrads:
    """Reverse-mode gradients of every parameter for the forward that made cache"""
    if cache.consumed:
        raise StaleCacheError("forward cache was already consumed by a backward pass")
    if cache.cfg != cfg or cache.param_id != id(params):
        raise StaleCacheError("forward cache belongs to another network evaluation")
    cache.consumed = True
    specs = {spec.name: spec for spec in layer_table(cfg)}
    grads = {}

    g = grad_chi0.values[None].astype(params["out.weight"].dtype, copy=False)
    g, grads["out.weight"], grads["out.bias"] = layers.conv3d_backward(
        g, cache.out, params["out.weight"]
    )
    skip_grads = [None] * cfg.depth
    for level in range(cfg.depth):
        g = _block_backward(g, specs[f"dec{level}.conv2"], params, cache, grads)
        g = _block_backward(g, specs[f"dec{level}.conv1"], params, cache, grads)
        width = specs[f"enc{level}.conv2"].c_out
        skip_grads[level], g = g[:width], g[width:]
        g = _block_backward(g, specs[f"dec{level}.up"], params, cache, grads)
        g = layers.upsample_backward(g)
    g = _block_backward(g, specs["bottom.conv2"], params, cache, grads)
    g = _block_backward(g, specs["bottom.conv1"], params, cache, grads)
    for level in reversed(range(cfg.depth)):
        g = layers.maxpool_backward(g, cache.pools[level]) + skip_grads[level]
        g = _block_backward(g, specs[f"enc{level}.conv2"], params, cache, grads)
        g = _block_backward(
            g, specs[f"enc{level}.conv1"], params, cache, grads, first=level == 0
        )
    return ParameterSet((name, grads[name]) for name in params)
