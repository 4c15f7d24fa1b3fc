"""Riemannian Adam with tangent-space clipping and a warmup-cosine schedule.

Euclidean parameters follow plain Adam. Manifold parameters convert the
Euclidean gradient to a Riemannian one, clip it, update Adam moments in
ambient tangent coordinates (no parallel transport) and move along the
exponential map. Both kinds are clipped per parameter tensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from . import manifold as mf
from .autodiff import Tensor
from .errors import ConfigError
from .manifold import ManifoldParams


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    warmup_steps: Optional[int] = None
    total_steps: Optional[int] = None
    bias_correction: bool = True

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError("betas must be two values in [0, 1)")
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be non-negative")
        if self.total_steps is not None and self.total_steps < 0:
            raise ConfigError("total_steps must be non-negative")

    def resolved(self, total_steps: int) -> "OptimizerConfig":
        """Copy with ``total_steps`` filled in and warmup defaulted to 5% of it."""
        total = self.total_steps if self.total_steps is not None else total_steps
        warm = self.warmup_steps if self.warmup_steps is not None else int(round(0.05 * total))
        return OptimizerConfig(self.lr, self.betas, self.adam_eps, self.clip_norm, min(warm, total),
                               total, self.bias_correction)


@dataclass
class ParamState:
    m: np.ndarray
    v: np.ndarray


@dataclass
class OptimizerState:
    moments: Dict[str, ParamState] = field(default_factory=dict)
    t: int = 0


_ULP_SLACK = 1.0 + 8 * np.finfo(np.float64).eps


def clip_gradient(g: np.ndarray, v: float) -> np.ndarray:
    """Rescale ``g`` to norm ``v`` if it is longer.

    Norms within a few ulps of ``v`` count as already clipped, which makes
    the operation exactly idempotent despite rounding in the rescale.
    """
    g = np.asarray(g, dtype=np.float64)
    n = float(np.sqrt(np.sum(g * g)))
    if n <= v * _ULP_SLACK:
        return g
    return g * (v / n)


def lr_schedule(t: int, cfg: OptimizerConfig) -> float:
    """Linear warmup to ``lr`` then cosine decay to zero at ``total_steps``."""
    total = cfg.total_steps or 0
    warm = cfg.warmup_steps or 0
    t = min(max(t, 0), total)
    if t < warm:
        return cfg.lr * t / warm
    if total <= warm:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * (t - warm) / (total - warm)))


def _moments(state: ParamState, g: np.ndarray, cfg: OptimizerConfig, t: int) -> np.ndarray:
    b1, b2 = cfg.betas
    state.m = b1 * state.m + (1.0 - b1) * g
    state.v = b2 * state.v + (1.0 - b2) * g * g
    m_hat, v_hat = state.m, state.v
    if cfg.bias_correction:
        m_hat = m_hat / (1.0 - b1 ** t)
        v_hat = v_hat / (1.0 - b2 ** t)
    return m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def adam_step_euclidean(param: np.ndarray, g: np.ndarray, state: ParamState, cfg: OptimizerConfig,
                        t: int, lr: Optional[float] = None) -> np.ndarray:
    lr = cfg.lr if lr is None else lr
    direction = _moments(state, clip_gradient(g, cfg.clip_norm), cfg, t)
    return param - lr * direction


def adam_step_manifold(param: np.ndarray, g: np.ndarray, state: ParamState, cfg: OptimizerConfig,
                       m: ManifoldParams, t: int, lr: Optional[float] = None) -> np.ndarray:
    lr = cfg.lr if lr is None else lr
    rgrad = clip_gradient(mf.egrad_to_rgrad(param, g, m), cfg.clip_norm)
    u = -lr * _moments(state, rgrad, cfg, t)
    with ad.no_grad():
        return mf.project(mf.exp_at(param, u, m), m).data


def new_param_state(shape) -> ParamState:
    return ParamState(np.zeros(shape), np.zeros(shape))


class RiemannianAdam:
    """Steps every parameter of a model according to its role."""

    def __init__(self, params: Dict[str, Tensor], roles: Dict[str, str], cfg: OptimizerConfig,
                 m: Optional[ManifoldParams] = None, state: Optional[OptimizerState] = None):
        self.params = params
        self.roles = roles
        self.cfg = cfg
        self.m = m or ManifoldParams()
        self.state = state or OptimizerState()
        for name, p in params.items():
            self.state.moments.setdefault(name, new_param_state(p.shape))

    @property
    def lr(self) -> float:
        return lr_schedule(self.state.t, self.cfg)

    def step(self, m: Optional[ManifoldParams] = None) -> float:
        """Advance the step counter, update all parameters, return the lr used.

        ``m`` overrides the geometry for this step (learned curvature).
        """
        m = m or self.m
        self.state.t += 1
        t = self.state.t
        lr = lr_schedule(t, self.cfg)
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            st = self.state.moments[name]
            if self.roles[name] == "manifold":
                p.data = adam_step_manifold(p.data, g, st, self.cfg, m, t, lr)
            else:
                p.data = adam_step_euclidean(p.data, g, st, self.cfg, t, lr)
        return lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
