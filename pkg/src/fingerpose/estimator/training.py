"""Mini-batch AdamW training with a cosine-annealed learning rate."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, NumericFaultError
from ..pose import normalize_angles
from .network import Batch, EstimatorModel, batch_loss, gradients, predict_batch

__all__ = ["TrainConfig", "History", "AdamW", "cosine_lr", "train", "evaluate"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    epochs: int = 30
    batch_size: int = 32
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        # lr_start == lr_end == 0 is allowed so a run can be frozen on purpose
        if not (self.lr_start >= self.lr_end >= 0):
            raise InvalidArgumentError("need lr_start >= lr_end >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgumentError("epochs must be >= 0 and batch_size >= 1")
        if self.weight_decay < 0:
            raise InvalidArgumentError("weight_decay must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_lr(step: int, total: int, lr_start: float, lr_end: float) -> float:
    """Cosine annealing from ``lr_start`` at step 0 to ``lr_end`` at the last step."""
    if total <= 1:
        return lr_start
    frac = step / (total - 1)
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * frac))


class AdamW:
    """Adam with decoupled weight decay, updating a flat parameter vector in place."""

    def __init__(self, size: int, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-2):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        params *= 1.0 - lr * self.weight_decay
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class History:
    rows: list = field(default_factory=list)

    FIELDS = ("epoch", "train_loss", "val_loss", "val_yaw_mae", "val_pos_mae")

    def append(self, **row):
        self.rows.append({k: row[k] for k in self.FIELDS})

    def column(self, name: str) -> list:
        return [row[name] for row in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.FIELDS)
            for row in self.rows:
                writer.writerow([row["epoch"]] + [_fmt(row[k]) for k in self.FIELDS[1:]])


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def evaluate(model: EstimatorModel, batch: Batch, chunk: int = 256) -> dict:
    """Loss, circular angle MAE (deg) and centre distance MAE (px) on ``batch``.

    A sample whose angle heads are degenerate scores 90 degrees, the mean
    error of a uniformly random guess.
    """
    total = 0.0
    for i in range(0, len(batch), chunk):
        part = batch.subset(slice(i, i + chunk))
        total += batch_loss(model, part) * len(part)
    c, r, theta = predict_batch(model, batch.cap, batch.patch, chunk, strict=False)
    degenerate = np.isnan(theta)
    ang = np.abs(normalize_angles(np.where(degenerate, batch.theta, theta) - batch.theta))
    ang[degenerate] = 90.0
    pos = np.hypot(c - batch.c, r - batch.r)
    return {"loss": total / len(batch), "yaw_mae": float(ang.mean()), "pos_mae": float(pos.mean())}


def train(
    model: EstimatorModel,
    train_batch: Batch,
    cfg: TrainConfig = TrainConfig(),
    val_batch: Batch | None = None,
    progress=None,
):
    """Train a copy of ``model``; returns ``(trained_model, history)``.

    Row 0 of the history evaluates the untrained model on the full training
    set. Later rows report the mean mini-batch loss of each epoch. Shuffling
    is drawn from ``cfg.seed`` so identical inputs give identical parameters.
    """
    if len(train_batch) == 0:
        raise InvalidArgumentError("training set is empty")
    model = model.copy()
    opt = AdamW(model.n_params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
    n = len(train_batch)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    history = History()

    def val_stats():
        if val_batch is None or len(val_batch) == 0:
            return None, None, None
        s = evaluate(model, val_batch)
        return s["loss"], s["yaw_mae"], s["pos_mae"]

    try:
        init = evaluate(model, train_batch)
    except NumericFaultError as exc:
        raise NumericFaultError(f"{exc} (epoch 0)", layer=exc.layer, epoch=0) from exc
    history.append(epoch=0, train_loss=init["loss"], **dict(zip(
        ("val_loss", "val_yaw_mae", "val_pos_mae"), val_stats())))

    rng = np.random.default_rng(cfg.seed)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            try:
                value, grad = gradients(model, train_batch.subset(idx))
            except NumericFaultError as exc:
                raise NumericFaultError(
                    f"{exc} (epoch {epoch}, batch {b})", layer=exc.layer, epoch=epoch, batch=b
                ) from exc
            if not math.isfinite(value):
                raise NumericFaultError(
                    f"non-finite loss (epoch {epoch}, batch {b})", layer="loss", epoch=epoch, batch=b
                )
            opt.step(model.params, grad, cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end))
            losses.append(value * len(idx))
            step += 1
        vl, vy, vp = val_stats()
        history.append(epoch=epoch, train_loss=sum(losses) / n, val_loss=vl,
                       val_yaw_mae=vy, val_pos_mae=vp)
        log.info("epoch %d train %.4f val %s yaw %s", epoch, sum(losses) / n, vl, vy)
        if progress is not None:
            progress(history.rows[-1])
    return model, history
