"""Minibatch training of the multi-instance heatmap loss."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import nn_core as nn
from ..model import PoseNet
from ..nn_core import NonFiniteError, Tensor
from ..synth_data import SampleArrays
from ..target_assignment import RESIDUAL_MODES

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_steps: tuple = (0.7, 0.9)
    lr_factor: float = 0.1
    seed: int = 0
    residual_mode: str = "duplicate"
    N: int = 2

    def __post_init__(self):
        self.lr_steps = tuple(self.lr_steps)
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.residual_mode not in RESIDUAL_MODES:
            raise ValueError(f"residual_mode must be one of {RESIDUAL_MODES}")
        if self.residual_mode == "dont-care":
            log.warning("residual_mode='dont-care' is experimental: residual slots get no "
                        "supervision, which trains less stably and raises false positives")

    def lr_at(self, epoch: int) -> float:
        """Step decay: multiply by ``lr_factor`` at each fraction in ``lr_steps``."""
        lr = self.lr
        for frac in self.lr_steps:
            if epoch >= int(round(frac * self.epochs)):
                lr *= self.lr_factor
        return lr

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainResult:
    loss_curve: list = field(default_factory=list)  # (epoch, split, loss)
    checkpoints: list = field(default_factory=list)
    seconds: float = 0.0

    def final(self, split: str) -> float | None:
        vals = [loss for _, s, loss in self.loss_curve if s == split]
        return vals[-1] if vals else None


def slot_loss_weights(weights: np.ndarray, resolution: tuple[int, int]) -> np.ndarray:
    """Per-pixel weights turning a squared-error sum into each sample's heatmap MSE.

    ``weights`` is ``(B, K)``; the result ``(B, 1, 1, K)`` is ``w / (n_w * H' * W')``
    and already includes the 1/B batch mean. Unsupervised samples get zeros.
    """
    B = len(weights)
    n = weights.sum(axis=1, keepdims=True)
    denom = np.where(n > 0, n, 1.0) * resolution[0] * resolution[1] * B
    return (weights / denom)[:, None, None, :]


def multi_instance_batch_loss(outputs: list[Tensor], targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Differentiable batch mean of the slot-averaged heatmap loss.

    ``targets`` is ``(B, N, H', W', K)``, ``weights`` ``(B, N, K)``.
    """
    N = len(outputs)
    res = targets.shape[2:4]
    total = None
    for i, out in enumerate(outputs):
        w = slot_loss_weights(weights[:, i], res).astype(out.dtype)
        term = nn.reduce_sum(nn.mul(nn.square(nn.sub(out, targets[:, i].astype(out.dtype))), w))
        total = term if total is None else nn.add(total, term)
    return nn.scale(total, 1.0 / N)


def evaluate_loss(model: PoseNet, data: SampleArrays, batch_size: int = 64) -> float:
    total, count = 0.0, 0
    with nn.no_grad():
        for start in range(0, len(data), batch_size):
            idx = np.arange(start, min(start + batch_size, len(data)))
            x, t, w = data.batch(idx)
            outs = model.forward_slots(x)
            total += float(multi_instance_batch_loss(outs, t, w).data) * len(idx)
            count += len(idx)
    return total / max(count, 1)


def write_loss_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "loss"])
        for epoch, split, loss in rows:
            w.writerow([epoch, split, f"{loss:.8f}"])


def train(model: PoseNet, data: SampleArrays, config: TrainConfig, val: SampleArrays | None = None,
          out_dir=None, resume_from=None, progress=None,
          keep_epoch_checkpoints: bool = False) -> TrainResult:
    """Optimise the multi-instance loss; checkpoint and log the loss every epoch.

    Epoch ``e`` visits samples in the order of ``default_rng([seed, e])``, so a
    run resumed from an epoch checkpoint ends with the same weights as an
    uninterrupted one.
    """
    if model.N != config.N:
        raise ValueError(f"model N={model.N} but train config N={config.N}")
    if data.targets.shape[1] != config.N:
        raise ValueError(f"samples carry {data.targets.shape[1]} slots, config N={config.N}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = TrainResult()
    start_epoch = 0
    if resume_from is not None:
        loaded, meta = PoseNet.load(resume_from)
        model.store.load({n: t.data for n, t in loaded.store.items()})
        model.store.state.clear()
        model.store.state.update(loaded.store.state)
        start_epoch = int(meta["epoch"]) + 1
        result.loss_curve = [tuple(r) for r in meta.get("loss_curve", [])]

    t0 = time.perf_counter()
    for epoch in range(start_epoch, config.epochs):
        lr = config.lr_at(epoch)
        order = np.random.default_rng([config.seed, epoch]).permutation(len(data))
        running, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            x, t, w = data.batch(idx)
            try:
                model.store.zero_grad()
                loss = multi_instance_batch_loss(model.forward_slots(x), t, w)
                nn.backward(loss, model.store.tensors())
            except NonFiniteError as exc:
                ids = [data.keys[i] for i in idx]
                raise TrainingDivergedError(
                    f"non-finite values at epoch {epoch}, lr={lr}: {exc}; batch={ids}") from exc
            if config.optimizer == "adam":
                nn.adam_step(model.store, lr, config.beta1, config.beta2, config.eps)
            else:
                nn.sgd_step(model.store, lr, config.momentum)
            running += float(loss.data) * len(idx)
            seen += len(idx)
        result.loss_curve.append((epoch, "train", running / seen))
        if val is not None and len(val):
            result.loss_curve.append((epoch, "val", evaluate_loss(model, val)))
        if out is not None:
            meta = {"epoch": epoch, "train_config": config.to_dict(),
                    "loss_curve": [list(r) for r in result.loss_curve]}
            model.save(out / "checkpoint_last.ckpt", meta)
            result.checkpoints = [out / "checkpoint_last.ckpt"]
            if keep_epoch_checkpoints:
                path = out / f"checkpoint_epoch{epoch:03d}.ckpt"
                model.save(path, meta)
                result.checkpoints.append(path)
            write_loss_csv(result.loss_curve, out / "loss_curve.csv")
        if progress is not None:
            progress(epoch, result.loss_curve)
    result.seconds = time.perf_counter() - t0
    return result
