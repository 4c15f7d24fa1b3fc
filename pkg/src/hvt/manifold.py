"""Poincare-ball geometry: Mobius algebra, maps at the origin, distance.

All functions act on the last axis and broadcast over leading axes. The
ball has radius ``1/sqrt(c)``; inputs and outputs may be :class:`Tensor`
objects or array-likes, and ``c`` itself may be a Tensor when curvature is
learned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ConfigError, NumericError

Scalar = Union[float, Tensor]


@dataclass(frozen=True)
class ManifoldParams:
    c: Scalar = 1.0
    eps: float = 1e-15
    delta: float = 1e-7
    max_norm_factor: float = 1.0 - 1e-5

    def __post_init__(self):
        c = self.c.data if isinstance(self.c, Tensor) else self.c
        if not np.all(np.asarray(c) > 0):
            raise ConfigError(f"curvature must be positive, got {c}")
        if not 0.0 < self.max_norm_factor < 1.0:
            raise ConfigError("max_norm_factor must lie in (0, 1)")

    @property
    def c_value(self) -> float:
        return float(self.c.data) if isinstance(self.c, Tensor) else float(self.c)

    @property
    def sqrt_c(self) -> Scalar:
        return ad.sqrt(self.c) if isinstance(self.c, Tensor) else float(np.sqrt(self.c))

    @property
    def radius(self) -> float:
        """Largest norm any returned point may have."""
        return self.max_norm_factor / np.sqrt(self.c_value)


DEFAULT = ManifoldParams()


def _sqnorm(x: Tensor) -> Tensor:
    return ad.reduce_sum(x * x, axis=-1, keepdims=True)


def _safe_norm(x: Tensor, m: ManifoldParams) -> Tensor:
    return ad.clamp_min(ad.norm2(x, axis=-1, keepdims=True), m.eps)


_INSIDE = 1.0 - 4 * np.finfo(np.float64).eps


def project(x, m: ManifoldParams = DEFAULT) -> Tensor:
    """Pull points on or beyond the radius back to ``max_norm_factor/sqrt(c)``."""
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise NumericError("project", "NaN input to project")
    norm = _safe_norm(x, m)
    # a few ulps inside the radius so the rescaled norm cannot round past it
    limit = m.max_norm_factor * _INSIDE / m.sqrt_c
    scale = ad.clamp_max(limit / norm, 1.0)
    return x * scale


def _mobius_add(x: Tensor, y: Tensor, m: ManifoldParams) -> Tensor:
    c = m.c
    xy = ad.reduce_sum(x * y, axis=-1, keepdims=True)
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    return ad.div(num, den, eps=m.eps)


def mobius_add(x, y, m: ManifoldParams = DEFAULT) -> Tensor:
    return project(_mobius_add(as_tensor(x), as_tensor(y), m), m)


def mobius_scalar(r, x, m: ManifoldParams = DEFAULT) -> Tensor:
    """``r (x) x``; ``r`` may be a scalar or a tensor broadcasting against ``x[..., :1]``."""
    x = as_tensor(x)
    sc = m.sqrt_c
    n = _safe_norm(x, m)
    t = ad.tanh(r * ad.artanh(sc * n, m.delta))
    return project(t * x / (sc * n), m)


def mobius_matvec(W, x, m: ManifoldParams = DEFAULT) -> Tensor:
    """Apply the ``out x in`` matrix ``W`` to ball points ``x[..., in]``."""
    W, x = as_tensor(W), as_tensor(x)
    wx = ad.matmul(x, ad.transpose(W)) if x.ndim >= 2 else None
    if wx is None:
        wx = ad.reshape(ad.matmul(ad.reshape(x, (1, -1)), ad.transpose(W)), (-1,))
    sc = m.sqrt_c
    xn = _safe_norm(x, m)
    wxn = _safe_norm(wx, m)
    t = ad.tanh(wxn / xn * ad.artanh(sc * xn, m.delta))
    return project(t * wx / (sc * wxn), m)


def mobius_fold(points: Sequence, m: ManifoldParams = DEFAULT, dim: int | None = None) -> Tensor:
    """Left-to-right ``x1 (+) x2 (+) ... (+) xn``; the empty fold is the origin."""
    points = list(points)
    if not points:
        if dim is None:
            raise ValueError("empty fold needs an explicit dim")
        return Tensor(np.zeros(dim))
    acc = as_tensor(points[0])
    for p in points[1:]:
        acc = mobius_add(acc, p, m)
    return acc


def log0(x, m: ManifoldParams = DEFAULT) -> Tensor:
    x = as_tensor(x)
    sc = m.sqrt_c
    n = _safe_norm(x, m)
    return 2.0 * ad.artanh(sc * n, m.delta) * x / (sc * n)


def exp0(v, m: ManifoldParams = DEFAULT) -> Tensor:
    v = as_tensor(v)
    sc = m.sqrt_c
    n = _safe_norm(v, m)
    return project(ad.tanh(0.5 * sc * n) * v / (sc * n), m)


def conformal_factor(x, m: ManifoldParams = DEFAULT) -> Tensor:
    return 2.0 / (1.0 - m.c * _sqnorm(as_tensor(x)))


def exp_at(x, v, m: ManifoldParams = DEFAULT) -> Tensor:
    """Exponential map at ``x`` for a tangent vector ``v`` in ambient coordinates."""
    x, v = as_tensor(x), as_tensor(v)
    sc = m.sqrt_c
    lam = conformal_factor(x, m)
    n = _safe_norm(v, m)
    step = ad.tanh(0.5 * sc * lam * n) * v / (sc * n)
    return mobius_add(x, step, m)


def _acosh_clamped(arg: Tensor, m: ManifoldParams) -> Tensor:
    arg = ad.clamp_min(arg, 1.0 + m.delta)
    return ad.log(arg + ad.sqrt(arg * arg - 1.0))


def _distance_arg(d2: Tensor, x2: Tensor, y2: Tensor, xy: Tensor, m: ManifoldParams) -> Tensor:
    """acosh argument from ``|x - y|^2``, ``|x|^2``, ``|y|^2`` and ``<x, y>``.

    ``|x (+) (-y)|^2`` is evaluated through the identity
    ``|x - y|^2 * D / (D + eps)^2`` with ``D = 1 - 2c<x,y> + c^2 |x|^2 |y|^2``,
    which equals the explicit Mobius difference (including its ``+eps``
    denominator) and is symmetric in ``x`` and ``y`` bit for bit.
    """
    c = m.c
    D = 1.0 - 2.0 * c * xy + c * c * (x2 * y2)
    diff_sq = d2 * D / ((D + m.eps) * (D + m.eps))
    conf = (1.0 - c * x2) * (1.0 - c * y2)
    return 1.0 + ad.div(2.0 * c * diff_sq, conf, eps=m.eps)


def distance(x, y, m: ManifoldParams = DEFAULT) -> Tensor:
    """``acosh(1 + 2c|x (+) (-y)|^2 / ((1 - c|x|^2)(1 - c|y|^2) + eps))``.

    The acosh argument is floored at ``1 + delta``, so ``distance(x, x)`` is
    about ``sqrt(2*delta)`` rather than zero. Away from the origin this
    differs from the textbook Poincare distance, which uses ``|x - y|`` in
    the numerator; both agree when either point is the origin.
    """
    x, y = as_tensor(x), as_tensor(y)
    d = x - y
    arg = _distance_arg(ad.reduce_sum(d * d, axis=-1), ad.reduce_sum(x * x, axis=-1),
                        ad.reduce_sum(y * y, axis=-1), ad.reduce_sum(x * y, axis=-1), m)
    return _acosh_clamped(arg, m)


def pairwise_distance(x, y, m: ManifoldParams = DEFAULT) -> Tensor:
    """``distance(x[..., i, :], y[..., j, :])`` for all i, j, without forming pair vectors.

    ``|x_i - y_j|^2`` comes from the Gram matrix, so memory stays ``O(N*M)``
    instead of ``O(N*M*D)``.
    """
    x, y = as_tensor(x), as_tensor(y)
    x2 = ad.reduce_sum(x * x, axis=-1, keepdims=True)
    y2 = ad.transpose_last2(ad.reduce_sum(y * y, axis=-1, keepdims=True))
    xy = ad.matmul(x, ad.transpose_last2(y))
    d2 = ad.clamp_min(x2 + y2 - 2.0 * xy, 0.0)
    return _acosh_clamped(_distance_arg(d2, x2, y2, xy, m), m)


def distance_floor(m: ManifoldParams = DEFAULT) -> float:
    """Value of :func:`distance` at coincident points."""
    a = 1.0 + m.delta
    return float(np.log(a + np.sqrt(a * a - 1.0)))


def egrad_to_rgrad(x, egrad, m: ManifoldParams = DEFAULT) -> np.ndarray:
    """Rescale a Euclidean gradient by the inverse metric, ``(1 - c|x|^2)^2 / 4``."""
    x = np.asarray(as_tensor(x).data)
    g = np.asarray(as_tensor(egrad).data)
    c = m.c_value
    factor = (1.0 - c * np.sum(x * x, axis=-1, keepdims=True)) ** 2 / 4.0
    return g * factor


def inside_ball(x, m: ManifoldParams = DEFAULT) -> bool:
    x = np.asarray(as_tensor(x).data)
    return bool(np.all(np.linalg.norm(x, axis=-1) < 1.0 / np.sqrt(m.c_value)))
