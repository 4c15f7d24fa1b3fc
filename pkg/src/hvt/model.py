"""Hyperbolic Vision Transformer: configuration, parameters and forward pass.

Three switches select which parts run on the ball, mirroring the usual
ablation ladder:

* ``hyperbolic_embeddings``: patch tokens, class token and positional
  embeddings are ball points combined with Mobius addition.
* ``hyperbolic_attention``: distance-scored attention with Mobius
  aggregation (otherwise dot-product attention in the tangent space).
* ``hyperbolic_linear``: Mobius linear layers (otherwise Euclidean affine
  maps conjugated by log0/exp0).

With the last two both off the encoder runs as an ordinary Euclidean ViT.
Parameter shapes never depend on the switches.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from . import manifold as mf
from .attention import (
    HEAD_MERGE_MODES,
    AttentionParams,
    attention_block,
    euclidean_attention_block,
)
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .layers import (
    DropConnectConfig,
    HypLinearParams,
    LayerScale,
    add_positional,
    hyp_layernorm,
    hyp_linear,
    hyp_relu,
    layer_norm,
    layer_scaled_residual,
    linear,
    tangent_linear,
)
from .manifold import ManifoldParams

EUCLIDEAN = "euclidean"
MANIFOLD = "manifold"

VARIANTS = {
    "hyperbolic": (True, True, True),
    "euclidean_attention": (True, False, False),
    "euclidean": (False, False, False),
}


@dataclass
class HvtConfig:
    image_size: int = 16
    patch_size: int = 4
    channels: int = 1
    layers: int = 2
    heads: int = 4
    embed_dim: int = 32
    mlp_dim: Optional[int] = None
    num_classes: int = 4
    dropconnect_p: float = 0.1
    head_merge: str = "tangent_concat"
    curvature_learnable: bool = False
    curvature: float = 1.0
    hyperbolic_embeddings: bool = True
    hyperbolic_attention: bool = True
    hyperbolic_linear: bool = True
    # training loop
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.mlp_dim is None:
            self.mlp_dim = 4 * self.embed_dim
        self.validate()

    def validate(self) -> None:
        if self.image_size <= 0 or self.patch_size <= 0 or self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} must be a positive multiple of patch_size {self.patch_size}")
        if self.heads <= 0 or self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} must be divisible by heads {self.heads}")
        for name in ("channels", "layers", "embed_dim", "mlp_dim", "num_classes", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not 0.0 <= self.dropconnect_p < 1.0:
            raise ConfigError("dropconnect_p must lie in [0, 1)")
        if self.head_merge not in HEAD_MERGE_MODES:
            raise ConfigError(f"unknown head_merge '{self.head_merge}', expected one of {HEAD_MERGE_MODES}")
        if self.curvature <= 0:
            raise ConfigError("curvature must be positive")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def hyperbolic_stream(self) -> bool:
        return self.hyperbolic_attention or self.hyperbolic_linear

    def with_variant(self, name: str) -> "HvtConfig":
        try:
            emb, att, lin = VARIANTS[name]
        except KeyError:
            raise ConfigError(f"unknown variant '{name}'") from None
        return dataclasses.replace(self, hyperbolic_embeddings=emb, hyperbolic_attention=att,
                                   hyperbolic_linear=lin)


@dataclass
class ModelState:
    params: Dict[str, Tensor]
    roles: Dict[str, str]

    def names(self) -> List[str]:
        return list(self.params)

    def tensors(self) -> List[Tensor]:
        return list(self.params.values())

    def count(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def clone(self) -> "ModelState":
        return ModelState({k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()},
                          dict(self.roles))


@dataclass
class ParamSpec:
    name: str
    shape: Tuple[int, ...]
    role: str
    init: str  # xavier | ball | zeros | ones | softplus_one


def param_specs(cfg: HvtConfig) -> List[ParamSpec]:
    """Ordered parameter manifest; a pure function of the config."""
    E, P, C, k = cfg.embed_dim, cfg.patch_size, cfg.channels, cfg.num_classes
    ball_emb = MANIFOLD if cfg.hyperbolic_embeddings else EUCLIDEAN
    ball_lin = MANIFOLD if cfg.hyperbolic_linear else EUCLIDEAN
    specs = [
        ParamSpec("patch_proj", (P * P * C, E), EUCLIDEAN, "xavier"),
        ParamSpec("patch_bias", (E,), EUCLIDEAN, "zeros"),
        ParamSpec("class_token", (E,), ball_emb, "ball"),
        ParamSpec("pos_embed", (1, cfg.seq_len, E), ball_emb, "ball"),
        ParamSpec("pos_curvature_raw", (), EUCLIDEAN, "softplus_one"),
    ]
    if cfg.curvature_learnable:
        specs.append(ParamSpec("curvature_raw", (), EUCLIDEAN, "softplus_c"))
    o_in = cfg.head_dim if cfg.head_merge == "mobius_fold" else E
    for layer in range(cfg.layers):
        pre = f"blocks.{layer}."
        for proj, fan_in in (("q", E), ("k", E), ("v", E), ("o", o_in)):
            specs.append(ParamSpec(f"{pre}attn.{proj}.W", (E, fan_in), EUCLIDEAN, "xavier"))
            specs.append(ParamSpec(f"{pre}attn.{proj}.b", (E,), ball_lin, "ball"))
        specs.append(ParamSpec(f"{pre}attn.alpha_raw", (cfg.heads,), EUCLIDEAN, "softplus_one"))
        specs.append(ParamSpec(f"{pre}attn.beta", (), EUCLIDEAN, "ones"))
        specs.append(ParamSpec(f"{pre}ffn.fc1.W", (cfg.mlp_dim, E), EUCLIDEAN, "xavier"))
        specs.append(ParamSpec(f"{pre}ffn.fc1.b", (cfg.mlp_dim,), ball_lin, "ball"))
        specs.append(ParamSpec(f"{pre}ffn.fc2.W", (E, cfg.mlp_dim), EUCLIDEAN, "xavier"))
        specs.append(ParamSpec(f"{pre}ffn.fc2.b", (E,), ball_lin, "ball"))
        specs.append(ParamSpec(f"{pre}ffn.beta", (), EUCLIDEAN, "ones"))
        specs.append(ParamSpec(f"{pre}norm.gamma", (E,), EUCLIDEAN, "ones"))
        specs.append(ParamSpec(f"{pre}norm.shift", (E,), EUCLIDEAN, "zeros"))
    specs.append(ParamSpec("head.W", (E, k), EUCLIDEAN, "xavier"))
    specs.append(ParamSpec("head.b", (k,), EUCLIDEAN, "zeros"))
    return specs


def count_parameters(cfg: HvtConfig) -> int:
    return int(sum(np.prod(s.shape, dtype=np.int64) for s in param_specs(cfg)))


def xavier_bound(shape: Tuple[int, ...]) -> float:
    fan_a, fan_b = shape
    return float(np.sqrt(6.0 / (fan_a + fan_b)))


def init_params(cfg: HvtConfig, seed: int = 0, ball_std: float = 0.02) -> ModelState:
    rng = np.random.default_rng(seed)
    m = ManifoldParams(c=cfg.curvature)
    params, roles = {}, {}
    for s in param_specs(cfg):
        if s.init == "xavier":
            bound = xavier_bound(s.shape)
            value = rng.uniform(-bound, bound, size=s.shape)
        elif s.init == "ball":
            tangent = rng.normal(0.0, ball_std, size=s.shape)
            value = mf.exp0(tangent, m).data if s.role == MANIFOLD else tangent
        elif s.init == "zeros":
            value = np.zeros(s.shape)
        elif s.init == "ones":
            value = np.ones(s.shape)
        elif s.init == "softplus_one":
            value = np.full(s.shape, ad.inverse_softplus(1.0))
        elif s.init == "softplus_c":
            value = np.full(s.shape, ad.inverse_softplus(cfg.curvature))
        else:  # pragma: no cover - manifest is internal
            raise ValueError(s.init)
        params[s.name] = Tensor(value, requires_grad=True)
        roles[s.name] = s.role
    return ModelState(params, roles)


def manifold_for(cfg: HvtConfig, state: ModelState, base: Optional[ManifoldParams] = None) -> ManifoldParams:
    base = base or ManifoldParams(c=cfg.curvature)
    if cfg.curvature_learnable:
        return dataclasses.replace(base, c=ad.softplus(state.params["curvature_raw"]))
    return base


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """B x C x H x W -> B x N x (C*p*p), patches in row-major grid order."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ShapeError(f"images must be B x C x H x W, got {images.shape}")
    B, C, Hh, Ww = images.shape
    if Hh % patch or Ww % patch:
        raise ShapeError(f"image {Hh}x{Ww} not divisible into {patch}x{patch} patches")
    nh, nw = Hh // patch, Ww // patch
    x = images.reshape(B, C, nh, patch, nw, patch).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(B, nh * nw, C * patch * patch)


def _check_images(images: np.ndarray, cfg: HvtConfig) -> None:
    expect = (cfg.channels, cfg.image_size, cfg.image_size)
    if images.ndim != 4 or images.shape[1:] != expect:
        raise ShapeError(f"images must be B x {expect}, got {images.shape}")


def patch_embed(images, state: ModelState, cfg: HvtConfig, m: ManifoldParams) -> Tensor:
    """Flattened patches -> Euclidean projection -> exp0 (B x N x E ball points)."""
    images = np.asarray(images.data if isinstance(images, Tensor) else images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    _check_images(images, cfg)
    u = ad.matmul(Tensor(patchify(images, cfg.patch_size)), state.params["patch_proj"]) + state.params["patch_bias"]
    return mf.exp0(u, m) if cfg.hyperbolic_embeddings else u


def _attention_params(state: ModelState, layer: int, dropconnect: DropConnectConfig) -> AttentionParams:
    p = state.params
    pre = f"blocks.{layer}.attn."

    def lin(name):
        return HypLinearParams(p[pre + name + ".W"], p[pre + name + ".b"])

    return AttentionParams(lin("q"), lin("k"), lin("v"), lin("o"), p[pre + "alpha_raw"],
                           LayerScale(p[pre + "beta"]), dropconnect)


def encoder_forward(x: Tensor, state: ModelState, cfg: HvtConfig, layer: int, m: ManifoldParams,
                    training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    p = state.params
    pre = f"blocks.{layer}."
    dc = DropConnectConfig(cfg.dropconnect_p if training else 0.0, rng)
    attn = _attention_params(state, layer, dc)
    fc1 = (p[pre + "ffn.fc1.W"], p[pre + "ffn.fc1.b"])
    fc2 = (p[pre + "ffn.fc2.W"], p[pre + "ffn.fc2.b"])
    beta = p[pre + "ffn.beta"]
    gamma, shift = p[pre + "norm.gamma"], p[pre + "norm.shift"]
    if not cfg.hyperbolic_stream:
        x1 = euclidean_attention_block(x, attn, training)
        h = linear(ad.relu(linear(x1, *fc1)), *fc2)
        return layer_norm(x1 + beta * h, gamma, shift)
    x1 = attention_block(x, attn, m, training, cfg.head_merge, cfg.hyperbolic_attention, cfg.hyperbolic_linear)
    lin = hyp_linear if cfg.hyperbolic_linear else tangent_linear
    h3 = lin(hyp_relu(lin(x1, *fc1, m), m), *fc2, m)
    return hyp_layernorm(layer_scaled_residual(x1, h3, beta, m), gamma, shift, m)


def embed_tokens(images, state: ModelState, cfg: HvtConfig, m: ManifoldParams) -> Tensor:
    p = state.params
    tokens = patch_embed(images, state, cfg, m)
    B = tokens.shape[0]
    E = cfg.embed_dim
    cls = ad.broadcast_to(ad.reshape(p["class_token"], (1, 1, E)), (B, 1, E))
    x = ad.concat([cls, tokens], axis=1)
    c_pos = ad.softplus(p["pos_curvature_raw"])
    if cfg.hyperbolic_embeddings:
        x = add_positional(x, p["pos_embed"], c_pos, m)
        return x if cfg.hyperbolic_stream else mf.log0(x, m)
    x = x + c_pos * p["pos_embed"]
    return mf.exp0(x, m) if cfg.hyperbolic_stream else x


def forward(images, state: ModelState, cfg: HvtConfig, m: Optional[ManifoldParams] = None,
            training: bool = False, rng: Optional[np.random.Generator] = None,
            trace: Optional[list] = None) -> Tuple[Tensor, Tensor]:
    """Return ``(logits B x k, class-token ball points B x E)``.

    When ``trace`` is a list, the token tensor after the embedding stage and
    after every encoder block is appended to it.
    """
    m = manifold_for(cfg, state, m)
    x = embed_tokens(images, state, cfg, m)
    if trace is not None:
        trace.append(x)
    for layer in range(cfg.layers):
        x = encoder_forward(x, state, cfg, layer, m, training, rng)
        if trace is not None:
            trace.append(x)
    tok = x[:, 0, :]
    W, b = state.params["head.W"], state.params["head.b"]
    if cfg.hyperbolic_stream:
        return ad.matmul(mf.log0(tok, m), W) + b, tok
    return ad.matmul(tok, W) + b, mf.exp0(tok, m)
