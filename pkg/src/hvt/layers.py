"""Layer-level building blocks living on the Poincare ball.

Learnable positive scalars (positional curvature, attention temperatures)
are stored raw and passed through softplus when used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import manifold as mf
from .autodiff import Tensor, as_tensor
from .errors import ConfigError, ShapeError
from .manifold import ManifoldParams

LN_EPS = 1e-5


@dataclass
class HypLinearParams:
    W: Tensor  # out x in, Euclidean
    b: Tensor  # out, ball point


@dataclass
class LayerScale:
    beta: Tensor


@dataclass
class PositionalEmbedding:
    e0: Tensor  # 1 x N x E, ball points
    c_raw: Tensor

    @property
    def c_pos(self) -> Tensor:
        return ad.softplus(self.c_raw)


@dataclass
class DropConnectConfig:
    p: float = 0.0
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ConfigError(f"DropConnect probability must lie in [0, 1), got {self.p}")


def _check_in_dim(x: Tensor, W: Tensor, name: str) -> None:
    if x.shape[-1] != W.shape[-1]:
        raise ShapeError(f"{name}: input dim {x.shape[-1]} does not match weight {W.shape}")


def hyp_linear(x, W, b, m: ManifoldParams = mf.DEFAULT) -> Tensor:
    """``(W (x)_M x) (+) b`` row-wise."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    _check_in_dim(x, W, "hyp_linear")
    if b.shape[-1] != W.shape[0]:
        raise ShapeError(f"hyp_linear: bias {b.shape} does not match weight {W.shape}")
    return mf.mobius_add(mf.mobius_matvec(W, x, m), b, m)


def linear(x, W, b) -> Tensor:
    x, W = as_tensor(x), as_tensor(W)
    _check_in_dim(x, W, "linear")
    return ad.matmul(x, ad.transpose(W)) + b


def tangent_linear(x, W, b, m: ManifoldParams = mf.DEFAULT) -> Tensor:
    """Euclidean affine map applied in the tangent space at the origin."""
    return mf.exp0(linear(mf.log0(x, m), W, b), m)


def hyp_relu(x, m: ManifoldParams = mf.DEFAULT) -> Tensor:
    return mf.exp0(ad.relu(mf.log0(x, m)), m)


def layer_norm(x, gamma, shift, eps: float = LN_EPS) -> Tensor:
    x = as_tensor(x)
    mu = ad.reduce_mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ad.reduce_mean(xc * xc, axis=-1, keepdims=True)
    return xc / ad.sqrt(var + eps) * gamma + shift


def hyp_layernorm(x, gamma, shift, m: ManifoldParams = mf.DEFAULT) -> Tensor:
    return mf.exp0(layer_norm(mf.log0(x, m), gamma, shift), m)


def layer_scaled_residual(x, o, beta, m: ManifoldParams = mf.DEFAULT) -> Tensor:
    x, o = as_tensor(x), as_tensor(o)
    if x.shape != o.shape:
        raise ShapeError(f"residual shapes differ: {x.shape} vs {o.shape}")
    return mf.mobius_add(x, mf.mobius_scalar(beta, o, m), m)


def add_positional(x, e0, c_pos, m: ManifoldParams = mf.DEFAULT) -> Tensor:
    """``x (+) (c_pos (x) E0)`` with E0 broadcast over the batch."""
    x, e0 = as_tensor(x), as_tensor(e0)
    if x.shape[-2:] != e0.shape[-2:]:
        raise ShapeError(f"positional embedding {e0.shape} does not fit tokens {x.shape}")
    return mf.mobius_add(x, mf.mobius_scalar(c_pos, e0, m), m)


def dropconnect_mask(weights, cfg: DropConnectConfig, training: bool) -> Tensor:
    """Bernoulli(1-p) mask with inverted 1/(1-p) scaling; identity outside training."""
    weights = as_tensor(weights)
    if not training or cfg.p == 0.0:
        return weights
    if cfg.rng is None:
        raise ConfigError("DropConnect in training mode needs a seeded rng")
    keep = cfg.rng.random(weights.shape) >= cfg.p
    return weights * (keep / (1.0 - cfg.p))
