"""Optimization loop, evaluation, and multi-stream score fusion.

SGD with Nesterov momentum and decoupled parameter groups: weight decay
applies to weights (including the learnable graphs and gates) but not to
batch-norm affine terms or biases. The learning rate follows a milestone
schedule. Everything is deterministic in (config, seed): the per-epoch
shuffle derives its generator from both.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from . import tensor as tz
from .data import Dataset
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .network import (ModelParams, model_forward, named_parameters,
                      trainable_parameters, unfreeze_model, zero_grads)
from .tensor import Tensor


@dataclass
class OptimizerState:
    lr: float = 0.1
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 1e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class Schedule:
    base_lr: float = 0.1
    milestones: tuple[int, ...] = (30, 40)
    gamma: float = 0.1
    total_epochs: int = 50

    def __post_init__(self):
        ms = list(self.milestones)
        if ms != sorted(ms) or len(set(ms)) != len(ms):
            raise ConfigError(f"milestones must be strictly increasing, got {ms}")
        if any(m >= self.total_epochs for m in ms):
            raise ConfigError(f"milestones {ms} must lie below total_epochs {self.total_epochs}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")


@dataclass
class StreamScores:
    """Post-softmax per-class probabilities for a set of samples."""

    ids: list[str]
    probs: np.ndarray            # [N, classes], rows sum to 1
    labels: list[int | None]
    stream: str = "joint"

    def __post_init__(self):
        if len(self.ids) != len(set(self.ids)):
            raise ConfigError("stream scores carry duplicate sample ids")
        if self.probs.ndim != 2 or self.probs.shape[0] != len(self.ids):
            raise ShapeError(f"scores shaped {self.probs.shape} for {len(self.ids)} ids")
        if self.probs.size and np.abs(self.probs.sum(axis=1) - 1.0).max() > 1e-6:
            raise DataError("stream score rows must sum to 1")


def lr_at_epoch(s: Schedule, epoch: int) -> float:
    """base_lr * gamma^(milestones passed); exact for decimal-valued rates."""
    if not 0 <= epoch < s.total_epochs:
        raise ConfigError(f"epoch {epoch} outside schedule of {s.total_epochs} epochs")
    k = sum(1 for m in s.milestones if m <= epoch)
    return float(Decimal(repr(s.base_lr)) * Decimal(repr(s.gamma)) ** k)


def init_optimizer(model: ModelParams, lr: float = 0.1, momentum: float = 0.9,
                   nesterov: bool = True, weight_decay: float = 1e-4) -> OptimizerState:
    vel = {name: np.zeros_like(t.data) for name, t, _ in named_parameters(model)}
    return OptimizerState(lr=lr, momentum=momentum, nesterov=nesterov,
                          weight_decay=weight_decay, velocity=vel)


def sgd_step(model: ModelParams, opt: OptimizerState) -> None:
    """One update over the trainable (unfrozen) parameters.

    g = grad + wd*param (decayed group only); v = mu*v + g;
    update = g + mu*v when Nesterov, else v; param -= lr*update.
    """
    for name, t, decay in trainable_parameters(model):
        if t.grad is None:
            raise ConfigError(f"sgd_step: parameter {name} has no gradient")
        v = opt.velocity[name]
        if v.shape != t.grad.shape:
            raise ShapeError(f"sgd_step: velocity {v.shape} vs grad {t.grad.shape} for {name}")
        g = t.grad
        if decay and opt.weight_decay:
            g = g + opt.weight_decay * t.data
        v *= opt.momentum
        v += g
        update = g + opt.momentum * v if opt.nesterov else v
        t.data -= (opt.lr * update).astype(t.data.dtype, copy=False)


def _batch_array(samples, dtype) -> np.ndarray:
    # [T, M, V, C] per sample -> model layout [N, C, T, V, M]
    return np.stack([s.data.transpose(3, 0, 2, 1) for s in samples]).astype(dtype)


def _first_nonfinite(loss: Tensor) -> str:
    for node in tz._topo_order(loss):
        if not np.isfinite(node.data).all():
            return f"{node.op}{list(node.shape)}"
    return "loss"


def train(model: ModelParams, train_ds: Dataset, schedule: Schedule,
          opt: OptimizerState, freeze_epochs: int = 5, seed: int = 0,
          batch_size: int = 8, val_ds: Dataset | None = None,
          start_epoch: int = 0) -> list[dict]:
    """Run the schedule from `start_epoch`, returning one log record per epoch.

    Every adaptive layer's global graph unfreezes at epoch == freeze_epochs.
    Shuffling is a pure function of (seed, epoch).
    """
    if not train_ds.samples:
        raise ConfigError("training dataset is empty")
    if any(s.label is None for s in train_ds.samples):
        raise ConfigError("training dataset contains unlabeled samples")
    dtype = model.config.np_dtype()
    log: list[dict] = []
    n = len(train_ds.samples)
    for epoch in range(start_epoch, schedule.total_epochs):
        if epoch >= freeze_epochs:
            unfreeze_model(model)
        opt.lr = lr_at_epoch(schedule, epoch)
        order = np.random.default_rng([seed, epoch]).permutation(n)
        total_loss = 0.0
        correct = 0
        for lo in range(0, n, batch_size):
            batch = [train_ds.samples[i] for i in order[lo:lo + batch_size]]
            labels = np.array([s.label for s in batch], dtype=np.int64)
            x = _batch_array(batch, dtype)
            zero_grads(model)
            scores = model_forward(x, model, mode="train")
            loss = tz.cross_entropy(scores, labels)
            if not np.isfinite(loss.data).all():
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}; first non-finite tensor: "
                    f"{_first_nonfinite(loss)}")
            tz.backward(loss)
            sgd_step(model, opt)
            total_loss += loss.item() * len(batch)
            correct += int((scores.data.argmax(axis=1) == labels).sum())
        record = {"epoch": epoch, "lr": opt.lr, "loss": total_loss / n,
                  "train_acc": correct / n}
        if val_ds is not None:
            accs, _ = evaluate(model, val_ds, ks=(1,), batch_size=batch_size)
            record["val_acc"] = accs[1]
        log.append(record)
    return log


def top_k_hits(probs: np.ndarray, labels: np.ndarray, k: int) -> int:
    """Membership count of the true label among the k best classes; ties
    resolve toward the lower class index."""
    order = np.argsort(-probs, axis=1, kind="stable")
    return int(sum(labels[i] in order[i, :k] for i in range(len(labels))))


def evaluate(model: ModelParams, ds: Dataset, ks=(1, 5), batch_size: int = 8,
             stream: str | None = None) -> tuple[dict[int, float], StreamScores]:
    """Eval-mode accuracy at each k, plus the per-sample softmax scores.
    Leaves parameters and running statistics untouched."""
    if not ds.samples:
        raise ConfigError("evaluation dataset is empty")
    dtype = model.config.np_dtype()
    all_probs = []
    for lo in range(0, len(ds.samples), batch_size):
        batch = ds.samples[lo:lo + batch_size]
        scores = model_forward(_batch_array(batch, dtype), model, mode="eval")
        all_probs.append(tz.softmax(scores, axis=1).data)
    probs = np.concatenate(all_probs, axis=0).astype(np.float64)
    probs /= probs.sum(axis=1, keepdims=True)
    ids = [s.id for s in ds.samples]
    labels = [s.label for s in ds.samples]
    scores_out = StreamScores(ids=ids, probs=probs, labels=labels,
                              stream=stream or ds.modality)
    accs: dict[int, float] = {}
    labeled = [i for i, lab in enumerate(labels) if lab is not None]
    if labeled:
        lab_arr = np.array([labels[i] for i in labeled], dtype=np.int64)
        sub = probs[labeled]
        for k in ks:
            accs[k] = top_k_hits(sub, lab_arr, k) / len(labeled)
    return accs, scores_out


def fuse_scores(streams: list[StreamScores], weights: list[float]) -> tuple[StreamScores, dict[int, float]]:
    """Weighted sum of per-stream probabilities; prediction is the argmax
    with ties broken toward the lowest class index."""
    if len(weights) != len(streams):
        raise ConfigError(f"{len(streams)} streams but {len(weights)} weights")
    if not streams:
        raise ConfigError("no streams to fuse")
    base_ids = streams[0].ids
    base_set = set(base_ids)
    for s in streams[1:]:
        if set(s.ids) != base_set:
            diff = sorted(base_set.symmetric_difference(s.ids))
            raise ConfigError(f"sample id mismatch between streams {streams[0].stream!r} "
                              f"and {s.stream!r}: {diff}")
    fused = np.zeros_like(streams[0].probs)
    for w, s in zip(weights, streams):
        idx = {sid: i for i, sid in enumerate(s.ids)}
        aligned = s.probs[[idx[sid] for sid in base_ids]]
        fused += w * aligned
    total = fused.sum(axis=1, keepdims=True)
    norm = np.divide(fused, total, out=np.zeros_like(fused), where=total != 0)
    out = StreamScores(ids=list(base_ids), probs=norm, labels=list(streams[0].labels),
                       stream="fused")
    accs: dict[int, float] = {}
    labeled = [i for i, lab in enumerate(out.labels) if lab is not None]
    if labeled:
        lab_arr = np.array([out.labels[i] for i in labeled], dtype=np.int64)
        for k in (1, 5):
            accs[k] = top_k_hits(fused[labeled], lab_arr, k) / len(labeled)
    return out, accs
