"""Classification loss plus the geodesic inter-class distance term."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import manifold as mf
from .autodiff import Tensor, as_tensor
from .errors import ConfigError, DataError
from .manifold import ManifoldParams

log = logging.getLogger(__name__)

PAIR_STRATEGIES = ("all_pairs",)


@dataclass
class LossConfig:
    lambda_reg: float = 0.001
    geo_sign: int = 1
    pair_strategy: str = "all_pairs"

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ConfigError("lambda_reg must be non-negative")
        if self.geo_sign not in (1, -1):
            raise ConfigError("geo_sign must be +1 or -1")
        if self.pair_strategy not in PAIR_STRATEGIES:
            raise ConfigError(f"unknown pair_strategy '{self.pair_strategy}'")

    def warn_if_literal_sign(self) -> None:
        if self.geo_sign == 1 and self.lambda_reg > 0:
            log.warning("geo_sign=+1: minimizing the geodesic term pulls different-class "
                        "embeddings together; use geo_sign=-1 to push them apart")


def _labels(labels, k: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise DataError(f"labels must lie in [0, {k}), got range [{y.min()}, {y.max()}]")
    return y


def cross_entropy(logits, labels) -> Tensor:
    logits = as_tensor(logits)
    B, k = logits.shape
    y = _labels(labels, k)
    if y.shape[0] != B:
        raise DataError(f"{y.shape[0]} labels for a batch of {B}")
    onehot = np.zeros((B, k))
    onehot[np.arange(B), y] = 1.0
    return -ad.reduce_sum(ad.log_softmax(logits, axis=-1) * onehot) / float(B)


def geodesic_regularizer(embeddings, labels, cfg: LossConfig, m: ManifoldParams = mf.DEFAULT) -> Tensor:
    """``sign * lambda * mean_{i<j} [y_i != y_j] d(x_i, x_j)`` over all unordered pairs."""
    emb = as_tensor(embeddings)
    B = emb.shape[0]
    y = np.asarray(labels)
    if B < 2 or cfg.lambda_reg == 0.0:
        return Tensor(0.0)
    mask = np.triu(y[:, None] != y[None, :], k=1).astype(np.float64)
    if not mask.any():
        return Tensor(0.0)
    d = mf.pairwise_distance(emb, emb, m)
    pairs = B * (B - 1) / 2.0
    return ad.reduce_sum(d * mask) * (cfg.geo_sign * cfg.lambda_reg / pairs)


def total_loss(logits, embeddings, labels, cfg: LossConfig, m: ManifoldParams = mf.DEFAULT) -> Tensor:
    return cross_entropy(logits, labels) + geodesic_regularizer(embeddings, labels, cfg, m)
