"""Train and evaluate loops, per-epoch metrics, checkpoint conversion."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt_io
from .autodiff import Tensor
from .checkpoint import Checkpoint
from .config import RunConfig
from .data import Dataset, augment_batch
from .errors import DataError, FormatError, NumericError
from .losses import total_loss
from .manifold import ManifoldParams
from .model import EUCLIDEAN, MANIFOLD, HvtConfig, ModelState, forward, init_params, manifold_for
from .optim import OptimizerState, ParamState, RiemannianAdam

log = logging.getLogger(__name__)

# role spelling inside checkpoint files
_FILE_ROLE = {EUCLIDEAN: "Euclidean", MANIFOLD: "Manifold"}
_MEM_ROLE = {v: k for k, v in _FILE_ROLE.items()}
_M, _V = "adam.m/", "adam.v/"
_BEST, _FINAL, _METRICS = "best.hvt", "checkpoint.hvt", "metrics.jsonl"


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    eval_top1: Optional[float]
    eval_top5: Optional[float]
    learning_rate: float
    wall_time: float  # seconds since the start of training


@dataclass
class RunMetrics:
    records: List[EpochRecord] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError(f"epoch {rec.epoch} does not follow {self.records[-1].epoch}")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> List:
        return [getattr(r, name) for r in self.records]


@dataclass
class TrainResult:
    metrics: RunMetrics
    checkpoint: Checkpoint
    state: ModelState


# ---------------------------------------------------------------------------
# checkpoint conversion
# ---------------------------------------------------------------------------

def to_checkpoint(cfg: RunConfig, state: ModelState, opt: Optional[OptimizerState] = None,
                  **metadata) -> Checkpoint:
    tensors = {k: t.data.copy() for k, t in state.params.items()}
    roles = {k: _FILE_ROLE[r] for k, r in state.roles.items()}
    meta = dict(metadata)
    if opt is not None:
        meta["step"] = opt.t
        for k, ps in opt.moments.items():
            tensors[_M + k], tensors[_V + k] = ps.m.copy(), ps.v.copy()
            roles[_M + k] = roles[_V + k] = roles[k]
    return Checkpoint(cfg.to_dict(), tensors, roles, meta)


def from_checkpoint(ck: Checkpoint) -> Tuple[RunConfig, ModelState, OptimizerState]:
    cfg = RunConfig.from_dict(ck.config)
    params, roles, moments = {}, {}, {}
    for name, arr in ck.tensors.items():
        if ck.roles.get(name) not in _MEM_ROLE:
            raise FormatError(f"tensor {name} has unknown role {ck.roles.get(name)!r}")
        if name.startswith((_M, _V)):
            continue
        params[name] = Tensor(arr.copy(), requires_grad=True)
        roles[name] = _MEM_ROLE[ck.roles[name]]
        if _M + name in ck.tensors:
            moments[name] = ParamState(ck.tensors[_M + name].copy(), ck.tensors[_V + name].copy())
    state = ModelState(params, roles)
    expected = init_params(cfg.model, 0)
    for name, t in expected.params.items():
        if name not in params or params[name].shape != t.shape:
            raise FormatError(f"checkpoint tensor {name} missing or mis-shaped for its config")
    return cfg, state, OptimizerState(moments, int(ck.metadata.get("step", 0)))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _check_dataset(ds: Dataset, cfg: HvtConfig) -> None:
    want = (cfg.channels, cfg.image_size, cfg.image_size)
    if ds.images.shape[1:] != want:
        raise DataError(f"dataset images are {ds.images.shape[1:]}, model expects {want}")
    if len(ds) and (ds.labels.min() < 0 or ds.labels.max() >= cfg.num_classes):
        raise DataError(f"labels must lie in [0, {cfg.num_classes})")


def predict_logits(state: ModelState, cfg: HvtConfig, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = []
    with ad.no_grad():
        m = manifold_for(cfg, state)
        for i in range(0, len(images), batch_size):
            logits, _ = forward(images[i:i + batch_size], state, cfg, m, training=False)
            out.append(logits.data)
    return np.concatenate(out) if out else np.zeros((0, cfg.num_classes))


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    if len(labels) == 0:
        return float("nan")
    k = min(k, logits.shape[1])
    # stable sort so ties resolve towards the lower class index
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(top == labels[:, None], axis=1)))


def evaluate(model: Union[Checkpoint, Tuple[ModelState, HvtConfig]], ds: Dataset,
             batch_size: int = 256) -> Dict[str, float]:
    """Top-1 and top-5 accuracy in eval mode; top-5 uses ``min(5, k)`` guesses."""
    if isinstance(model, Checkpoint):
        cfg, state, _ = from_checkpoint(model)
        hcfg = cfg.model
    else:
        state, hcfg = model
    _check_dataset(ds, hcfg)
    logits = predict_logits(state, hcfg, ds.images, batch_size)
    return {"top1": topk_accuracy(logits, ds.labels, 1), "top5": topk_accuracy(logits, ds.labels, 5)}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _step_manifold(m: ManifoldParams) -> ManifoldParams:
    # optimizer geometry uses the current curvature value, detached from the graph
    return dataclasses.replace(m, c=m.c_value)


def _write_record(path: str, rec: EpochRecord) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(dataclasses.asdict(rec)) + "\n")


def train(cfg: RunConfig, train_data: Dataset, epochs: Optional[int] = None,
          eval_data: Optional[Dataset] = None, out_dir: Optional[str] = None,
          seed: Optional[int] = None) -> TrainResult:
    """Mini-batch Riemannian-Adam training.

    Shuffling, augmentation and DropConnect each draw from their own
    generator seeded from ``seed`` so two runs with equal inputs produce
    bit-identical loss traces. When ``out_dir`` is given, ``metrics.jsonl`` is
    appended per epoch, ``best.hvt`` tracks the best eval top-1 and
    ``checkpoint.hvt`` holds the final state.
    """
    hcfg = cfg.model
    hcfg.validate()
    _check_dataset(train_data, hcfg)
    if eval_data is not None:
        _check_dataset(eval_data, hcfg)
    epochs = hcfg.epochs if epochs is None else epochs
    seed = hcfg.seed if seed is None else seed
    cfg.loss.warn_if_literal_sign()

    B = hcfg.batch_size
    steps_per_epoch = math.ceil(len(train_data) / B) if len(train_data) else 0
    ocfg = cfg.optimizer.resolved(epochs * steps_per_epoch)
    state = init_params(hcfg, seed)
    opt = RiemannianAdam(state.params, state.roles, ocfg, ManifoldParams(c=hcfg.curvature))
    rng_order = np.random.default_rng([seed, 101])
    rng_aug = np.random.default_rng([seed, 102])
    rng_drop = np.random.default_rng([seed, 103])

    metrics = RunMetrics()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        open(os.path.join(out_dir, _METRICS), "w").close()
    best = -1.0
    start = time.perf_counter()
    lr = opt.lr
    for epoch in range(1, epochs + 1):
        order = rng_order.permutation(len(train_data))
        loss_sum, correct = 0.0, 0
        for i in range(0, len(order), B):
            idx = order[i:i + B]
            imgs, labels = train_data.images[idx], train_data.labels[idx]
            if hcfg.augment:
                imgs = augment_batch(imgs, rng_aug)
            m = manifold_for(hcfg, state)
            try:
                logits, emb = forward(imgs, state, hcfg, m, training=True, rng=rng_drop)
                loss = total_loss(logits, emb, labels, cfg.loss, m)
            except NumericError as exc:
                raise NumericError(exc.op, f"epoch {epoch} step {opt.state.t + 1}: {exc}") from exc
            if not np.isfinite(loss.data):
                raise NumericError("total_loss", f"epoch {epoch} step {opt.state.t + 1}: loss is {loss.item()}")
            opt.zero_grad()
            ad.backward(loss)
            lr = opt.step(_step_manifold(m))
            metrics.step_losses.append(loss.item())
            loss_sum += loss.item() * len(idx)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == labels))
        top1 = top5 = None
        if eval_data is not None:
            scores = evaluate((state, hcfg), eval_data)
            top1 = scores["top1"]
            top5 = scores["top5"] if hcfg.num_classes >= 5 else None
        rec = EpochRecord(epoch, loss_sum / len(train_data), correct / len(train_data), top1, top5, lr,
                          time.perf_counter() - start)
        metrics.append(rec)
        log.info("epoch %d loss %.4f acc %.3f eval %s lr %.2e", epoch, rec.train_loss,
                 rec.train_accuracy, top1, lr)
        if out_dir:
            _write_record(os.path.join(out_dir, _METRICS), rec)
            if top1 is not None and top1 > best:
                best = top1
                ckpt_io.save(os.path.join(out_dir, _BEST),
                             to_checkpoint(cfg, state, opt.state, epoch=epoch, eval_top1=top1))
    final = to_checkpoint(cfg, state, opt.state, epoch=epochs)
    if out_dir:
        ckpt_io.save(os.path.join(out_dir, _FINAL), final)
    return TrainResult(metrics, final, state)
