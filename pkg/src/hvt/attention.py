"""Multi-head self-attention scored by negative squared hyperbolic distance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import manifold as mf
from .autodiff import Tensor, as_tensor
from .errors import ConfigError
from .layers import (
    DropConnectConfig,
    HypLinearParams,
    LayerScale,
    dropconnect_mask,
    hyp_linear,
    layer_scaled_residual,
    linear,
    tangent_linear,
)
from .manifold import ManifoldParams

HEAD_MERGE_MODES = ("tangent_concat", "mobius_fold")


@dataclass
class AttentionParams:
    q: HypLinearParams
    k: HypLinearParams
    v: HypLinearParams
    o: HypLinearParams
    alpha_raw: Tensor  # (H,), softplus -> alpha_h
    ls: LayerScale
    dropconnect: DropConnectConfig = field(default_factory=DropConnectConfig)

    @property
    def heads(self) -> int:
        return self.alpha_raw.shape[0]

    @property
    def alpha(self) -> Tensor:
        return ad.softplus(self.alpha_raw)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, N, E = x.shape
    if E % heads:
        raise ConfigError(f"embedding dim {E} is not divisible by {heads} heads")
    return ad.transpose(ad.reshape(x, (B, N, heads, E // heads)), (0, 2, 1, 3))


def _join_heads(x: Tensor) -> Tensor:
    B, H, N, D = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (B, N, H * D))


def project_qkv(x, params: AttentionParams, m: ManifoldParams = mf.DEFAULT, hyper_linear: bool = True):
    """Q, K, V as ``B x H x N x D`` ball points, each head slice re-projected."""
    x = as_tensor(x)
    if x.shape[-1] % params.heads:
        raise ConfigError(f"embedding dim {x.shape[-1]} is not divisible by {params.heads} heads")
    lin = hyp_linear if hyper_linear else tangent_linear
    out = []
    for p in (params.q, params.k, params.v):
        out.append(mf.project(_split_heads(lin(x, p.W, p.b, m), params.heads), m))
    return tuple(out)


def _head_scale(alpha: Tensor, D: int) -> Tensor:
    return ad.reshape(alpha, (1, -1, 1, 1)) * float(np.sqrt(D))


def attention_scores(Q, K, alpha, m: ManifoldParams = mf.DEFAULT) -> Tensor:
    """``-d(Q_i, K_j)^2 / (alpha_h sqrt(D))`` for every query/key pair."""
    Q, K, alpha = as_tensor(Q), as_tensor(K), as_tensor(alpha)
    B, H, N, D = Q.shape
    d = mf.pairwise_distance(Q, K, m)
    return -(d * d) / _head_scale(alpha, D)


def attention_weights(scores, dropconnect: DropConnectConfig | None = None, training: bool = False) -> Tensor:
    w = ad.softmax(scores, axis=-1)
    if dropconnect is None:
        return w
    return dropconnect_mask(w, dropconnect, training)


def aggregate_heads(weights, V, m: ManifoldParams = mf.DEFAULT) -> Tensor:
    """Per query, fold ``w_ij (x) V_j`` over keys j in ascending order.

    ``w_ij (x) V_j`` is a scalar multiple of ``V_j``, so only the
    ``B x H x N x N`` coefficients are materialized; the fold itself runs on
    ``B x H x N x D`` accumulators.
    """
    weights, V = as_tensor(weights), as_tensor(V)
    B, H, N, D = V.shape
    sc = m.sqrt_c
    vn = ad.clamp_min(ad.norm2(V, axis=-1), m.eps)  # B x H x N
    vn_row = ad.reshape(vn, (B, H, 1, N))
    t = ad.tanh(weights * ad.artanh(sc * vn_row, m.delta))
    coef = ad.clamp_max(t, m.max_norm_factor) / (sc * vn_row)  # B x H x N(query) x N(key)
    acc = None
    for j in range(N):
        term = ad.reshape(coef[:, :, :, j], (B, H, N, 1)) * ad.reshape(V[:, :, j, :], (B, H, 1, D))
        acc = term if acc is None else mf.mobius_add(acc, term, m)
    return acc


def merge_heads(heads_out, params: AttentionParams, m: ManifoldParams = mf.DEFAULT,
                mode: str = "tangent_concat", hyper_linear: bool = True) -> Tensor:
    heads_out = as_tensor(heads_out)
    lin = hyp_linear if hyper_linear else tangent_linear
    if mode == "tangent_concat":
        merged = mf.exp0(_join_heads(mf.log0(heads_out, m)), m)
    elif mode == "mobius_fold":
        merged = mf.mobius_fold([heads_out[:, h] for h in range(heads_out.shape[1])], m)
    else:
        raise ConfigError(f"unknown head merge mode '{mode}'")
    return lin(merged, params.o.W, params.o.b, m)


def _dot_attention(q: Tensor, k: Tensor, v: Tensor, alpha: Tensor, dropconnect, training) -> Tensor:
    D = q.shape[-1]
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) / _head_scale(alpha, D)
    w = attention_weights(scores, dropconnect, training)
    return ad.matmul(w, v)


def attention_block(x, params: AttentionParams, m: ManifoldParams = mf.DEFAULT, training: bool = False,
                    head_merge: str = "tangent_concat", hyper_attention: bool = True,
                    hyper_linear: bool = True) -> Tensor:
    """``X (+) beta (x) O`` with O the merged multi-head output.

    With ``hyper_attention=False`` the heads use dot-product attention on the
    log0 images of Q, K, V and map the result back with exp0.
    """
    x = as_tensor(x)
    Q, K, V = project_qkv(x, params, m, hyper_linear)
    if hyper_attention:
        scores = attention_scores(Q, K, params.alpha, m)
        w = attention_weights(scores, params.dropconnect, training)
        heads_out = aggregate_heads(w, V, m)
    else:
        t = _dot_attention(mf.log0(Q, m), mf.log0(K, m), mf.log0(V, m), params.alpha,
                           params.dropconnect, training)
        heads_out = mf.exp0(t, m)
    o = merge_heads(heads_out, params, m, head_merge, hyper_linear)
    return layer_scaled_residual(x, o, params.ls.beta, m)


def euclidean_attention_block(x, params: AttentionParams, training: bool = False) -> Tensor:
    """Standard scaled dot-product block with the same parameter shapes."""
    x = as_tensor(x)
    H = params.heads
    q, k, v = (_split_heads(linear(x, p.W, p.b), H) for p in (params.q, params.k, params.v))
    t = _dot_attention(q, k, v, params.alpha, params.dropconnect, training)
    merged = ad.reduce_sum(t, axis=1) if params.o.W.shape[1] == t.shape[-1] else _join_heads(t)
    o = linear(merged, params.o.W, params.o.b)
    return x + params.ls.beta * o
