"""Finite-difference checks of the analytic gradients, grouped by module.

Each check reduces an operation's output with fixed random weights to a
scalar and compares :func:`analytic_grad` against a central difference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import attention as at
from . import autodiff as ad
from . import layers as ly
from . import manifold as mf
from .autodiff import Tensor
from .layers import DropConnectConfig, LayerScale
from .losses import LossConfig, total_loss
from .manifold import ManifoldParams
from .model import HvtConfig, forward, init_params

OP_TOL = 1e-4
MODEL_TOL = 1e-3
MODULES = ("manifold", "layers", "attention", "model")


@dataclass
class GradCheck:
    name: str
    module: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tol)


def ball_points(rng: np.random.Generator, shape, max_norm: float = 0.6, m: ManifoldParams = mf.DEFAULT):
    """Random points with norm uniform in ``[0, max_norm / sqrt(c)]``."""
    v = rng.normal(size=shape)
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    r = rng.uniform(0.0, max_norm, size=shape[:-1] + (1,)) / np.sqrt(m.c_value)
    return v * r


def gradient_error(f: Callable[[Tensor], Tensor], x, h: float = 1e-6) -> float:
    return ad.max_rel_error(ad.analytic_grad(f, x), ad.finite_diff_grad(f, x, h))


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return ad.reduce_sum(out * w)


def _manifold_checks(rng) -> Dict[str, tuple]:
    m = ManifoldParams(c=0.7)
    x, y = ball_points(rng, (4, 5), m=m), ball_points(rng, (4, 5), m=m)
    W = rng.normal(size=(3, 5)) * 0.5
    w5, w3, w4 = rng.normal(size=(4, 5)), rng.normal(size=(4, 3)), rng.normal(size=4)
    w44 = rng.normal(size=(4, 4))
    return {
        "mobius_add[x]": (lambda t: _weighted(mf.mobius_add(t, y, m), w5), x),
        "mobius_add[y]": (lambda t: _weighted(mf.mobius_add(x, t, m), w5), y),
        "mobius_scalar": (lambda t: _weighted(mf.mobius_scalar(0.7, t, m), w5), x),
        "mobius_matvec[x]": (lambda t: _weighted(mf.mobius_matvec(W, t, m), w3), x),
        "mobius_matvec[W]": (lambda t: _weighted(mf.mobius_matvec(t, x, m), w3), W),
        "log0": (lambda t: _weighted(mf.log0(t, m), w5), x),
        "exp0": (lambda t: _weighted(mf.exp0(t, m), w5), x),
        "exp_at": (lambda t: _weighted(mf.exp_at(x, t, m), w5), y * 0.5),
        "distance[x]": (lambda t: _weighted(mf.distance(t, y, m), w4), x),
        "distance[y]": (lambda t: _weighted(mf.distance(x, t, m), w4), y),
        "pairwise_distance": (lambda t: _weighted(mf.pairwise_distance(t, y, m), w44), x),
    }


def _layer_checks(rng) -> Dict[str, tuple]:
    m = mf.DEFAULT
    x = ball_points(rng, (3, 6))
    W, b = rng.normal(size=(4, 6)) * 0.4, ball_points(rng, (4,), 0.3)
    gamma, shift = 1.0 + 0.1 * rng.normal(size=6), 0.1 * rng.normal(size=6)
    o = ball_points(rng, (3, 6))
    e0 = ball_points(rng, (3, 6), 0.3)
    w4, w6 = rng.normal(size=(3, 4)), rng.normal(size=(3, 6))
    return {
        "hyp_linear[x]": (lambda t: _weighted(ly.hyp_linear(t, W, b, m), w4), x),
        "hyp_linear[W]": (lambda t: _weighted(ly.hyp_linear(x, t, b, m), w4), W),
        "hyp_linear[b]": (lambda t: _weighted(ly.hyp_linear(x, W, t, m), w4), b),
        "hyp_relu": (lambda t: _weighted(ly.hyp_relu(t, m), w6), x),
        "hyp_layernorm[x]": (lambda t: _weighted(ly.hyp_layernorm(t, gamma, shift, m), w6), x),
        "hyp_layernorm[gamma]": (lambda t: _weighted(ly.hyp_layernorm(x, t, shift, m), w6), gamma),
        "layer_scaled_residual[beta]": (lambda t: _weighted(ly.layer_scaled_residual(x, o, t, m), w6),
                                        np.array(0.8)),
        "add_positional[c_pos]": (lambda t: _weighted(ly.add_positional(x, e0, t, m), w6), np.array(1.3)),
    }


def _attention_params(rng, E: int, H: int) -> at.AttentionParams:
    def lin(fan_in=E):
        return ly.HypLinearParams(Tensor(rng.normal(size=(E, fan_in)) * 0.4),
                                  Tensor(ball_points(rng, (E,), 0.2)))

    return at.AttentionParams(lin(), lin(), lin(), lin(), Tensor(rng.normal(size=H) * 0.3),
                              LayerScale(Tensor(np.array(0.9))), DropConnectConfig())


def _attention_checks(rng) -> Dict[str, tuple]:
    m = mf.DEFAULT
    E, H, N = 6, 2, 3
    x = ball_points(rng, (2, N, E))
    p = _attention_params(rng, E, H)
    wout = rng.normal(size=(2, N, E))
    Q, K = ball_points(rng, (2, H, N, 3)), ball_points(rng, (2, H, N, 3))
    V = ball_points(rng, (2, H, N, 3))
    weights = ad.softmax(Tensor(rng.normal(size=(2, H, N, N)))).data
    wscore, wagg = rng.normal(size=(2, H, N, N)), rng.normal(size=V.shape)

    def block_wrt(name):
        def f(t):
            lin = getattr(p, name)
            q = at.AttentionParams(**{**p.__dict__, name: ly.HypLinearParams(t, lin.b)})
            return _weighted(at.attention_block(x, q, m), wout)
        return f

    def alpha_f(t):
        q = at.AttentionParams(**{**p.__dict__, "alpha_raw": t})
        return _weighted(at.attention_block(x, q, m), wout)

    return {
        "attention_scores[Q]": (lambda t: _weighted(at.attention_scores(t, K, ad.softplus(p.alpha_raw), m), wscore), Q),
        "aggregate_heads[w]": (lambda t: _weighted(at.aggregate_heads(t, V, m), wagg), weights),
        "aggregate_heads[V]": (lambda t: _weighted(at.aggregate_heads(weights, t, m), wagg), V),
        "attention_block[x]": (lambda t: _weighted(at.attention_block(t, p, m), wout), x),
        "attention_block[Wq]": (block_wrt("q"), p.q.W.data),
        "attention_block[Wo]": (block_wrt("o"), p.o.W.data),
        "attention_block[alpha]": (alpha_f, p.alpha_raw.data),
    }


def tiny_config(**overrides) -> HvtConfig:
    """L=1, H=2, E=8, four 2x2 patches, 3 classes."""
    base = dict(image_size=4, patch_size=2, channels=1, layers=1, heads=2, embed_dim=8, mlp_dim=16,
                num_classes=3)
    base.update(overrides)
    return HvtConfig(**base)


def model_checks(rng, cfg: HvtConfig | None = None, lambda_reg: float = 0.5) -> Dict[str, tuple]:
    """Full forward + total_loss, one check per parameter tensor.

    ``lambda_reg`` is raised well above its default so the geodesic term's
    gradient is not swamped by the cross-entropy gradient.
    """
    cfg = cfg or tiny_config()
    state = init_params(cfg, int(rng.integers(1 << 30)), ball_std=0.2)
    images = rng.uniform(size=(4, cfg.channels, cfg.image_size, cfg.image_size))
    labels = np.array([0, 1, 2, 1]) % cfg.num_classes
    loss_cfg = LossConfig(lambda_reg=lambda_reg, geo_sign=-1)
    out = {}
    for name in state.params:
        def f(t, name=name):
            params = dict(state.params)
            params[name] = t
            s = type(state)(params, state.roles)
            logits, emb = forward(images, s, cfg)
            return total_loss(logits, emb, labels, loss_cfg)
        out[f"forward+total_loss[{name}]"] = (f, state.params[name].data)
    return out


_BUILDERS = {"manifold": _manifold_checks, "layers": _layer_checks, "attention": _attention_checks,
             "model": model_checks}


def run(module: str = "all", seed: int = 0) -> List[GradCheck]:
    mods = MODULES if module == "all" else (module,)
    results = []
    for mod in mods:
        if mod not in _BUILDERS:
            raise ValueError(f"unknown gradcheck module '{mod}'")
        rng = np.random.default_rng([seed, MODULES.index(mod)])
        tol = MODEL_TOL if mod == "model" else OP_TOL
        for name, (f, x) in _BUILDERS[mod](rng).items():
            results.append(GradCheck(name, mod, gradient_error(f, x), tol))
    return results
