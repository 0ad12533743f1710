"""
End-to-end training: binary cross-entropy on the utterance logit, AMSGrad
updates, and per-epoch model selection on development-set EER.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autograd as ag
from .errors import DataError
from .features import read_feature
from .model import AfnModel, afn_forward, predict, save_checkpoint
from .scoring import GENUINE, LABEL_NAMES, SPOOF, compute_eer
from .tsv import ManifestEntry

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    max_epochs: int = 10
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    v_hat: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        z = lambda: {k: np.zeros_like(p) for k, p in params.items()}  # noqa: E731
        return cls(z(), z(), z())


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_eer: float
    checkpoint: str | None = None


@dataclass
class Dataset:
    """A stack of unified maps ``(N, F, T)`` with 0/1 labels (1 = genuine)."""

    ids: list[str]
    X: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.ids) != len(self.X) or len(self.X) != len(self.labels):
            raise DataError("ids, maps and labels must have equal length")

    def __len__(self) -> int:
        return len(self.ids)

    def check_trainable(self, name: str) -> None:
        if len(self) == 0:
            raise DataError(f"{name} set is empty")
        if not np.isin(self.labels, (GENUINE, SPOOF)).all():
            raise DataError(f"{name} set has unlabelled or non-binary entries")
        if self.labels.min() == self.labels.max():
            raise DataError(f"{name} set contains a single class")


def load_dataset(entries: list[ManifestEntry], require_labels: bool = True) -> Dataset:
    maps, labels = [], []
    for e in entries:
        maps.append(read_feature(e.path).data)
        if e.label in LABEL_NAMES:
            labels.append(LABEL_NAMES[e.label])
        elif require_labels:
            raise DataError(f"utterance {e.utt_id} has no label")
        else:
            labels.append(-1)
    shapes = {m.shape for m in maps}
    if len(shapes) > 1:
        raise DataError(f"feature maps differ in shape: {sorted(shapes)}")
    X = np.stack(maps) if maps else np.zeros((0, 0, 0), dtype=np.float32)
    return Dataset([e.utt_id for e in entries], X, labels)


def bce_loss(logits, labels) -> ag.Tensor:
    """Mean binary cross-entropy with genuine = 1, evaluated in log-sum-exp form."""
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0 (spoof) or 1 (genuine)")
    return ag.bce_with_logits(logits, labels)


def amsgrad_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: TrainConfig,
) -> dict[str, np.ndarray]:
    """One bias-corrected AMSGrad update; ``state`` is advanced in place."""
    state.t += 1
    t = state.t
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    out = {}
    for k, p in params.items():
        g = grads[k]
        state.m[k] = cfg.beta1 * state.m[k] + (1 - cfg.beta1) * g
        state.v[k] = cfg.beta2 * state.v[k] + (1 - cfg.beta2) * g * g
        state.v_hat[k] = np.maximum(state.v_hat[k], state.v[k])
        out[k] = p - cfg.lr * (state.m[k] / c1) / (np.sqrt(state.v_hat[k] / c2) + cfg.eps)
    return out


def train_step(model: AfnModel, X: np.ndarray, y: np.ndarray, state: OptimizerState, cfg: TrainConfig) -> float:
    """Forward/backward on one batch and an in-place parameter update; returns the loss."""
    leaves = model.tensors(requires_grad=True)
    logits, _ = afn_forward(X, model, "train", params=leaves)
    loss = bce_loss(logits, y)
    grads = ag.backward(loss)
    named = {k: grads.get(t, np.zeros_like(t.data)) for k, t in leaves.items()}
    model.params = amsgrad_step(model.params, named, state, cfg)
    return float(loss.data)


@dataclass
class TrainResult:
    best: AfnModel
    records: list[EpochRecord]
    best_epoch: int = field(default=0)


def train(
    model: AfnModel,
    train_set: Dataset,
    dev_set: Dataset,
    cfg: TrainConfig = TrainConfig(),
    checkpoint_dir: str | Path | None = None,
    step_callback: Callable[[OptimizerState], None] | None = None,
) -> TrainResult:
    """Train for ``cfg.max_epochs`` epochs and keep the lowest-dev-EER model.

    After every epoch the dev set is scored in eval mode; ties go to the
    earlier epoch.  With ``checkpoint_dir`` every epoch is written as
    ``epoch_XXXX.afnc``.  ``step_callback`` sees the optimizer state after each
    update.  The input ``model`` is not modified.
    """
    train_set.check_trainable("training")
    dev_set.check_trainable("development")
    model = model.copy()
    dtype = model.dtype
    X = train_set.X.astype(dtype, copy=False)
    X_dev = dev_set.X.astype(dtype, copy=False)
    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState.zeros_like(model.params)
    records: list[EpochRecord] = []
    best, best_eer, best_epoch = model.copy(), np.inf, 0
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set)) if cfg.shuffle else np.arange(len(train_set))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            total += train_step(model, X[idx], train_set.labels[idx], state, cfg) * len(idx)
            if step_callback is not None:
                step_callback(state)
        dev_eer, _ = compute_eer(predict(model, X_dev), dev_set.labels)
        ckpt = None
        if checkpoint_dir is not None:
            ckpt = str(Path(checkpoint_dir) / f"epoch_{epoch:04d}.afnc")
            save_checkpoint(model, ckpt)
        records.append(EpochRecord(epoch, total / len(order), float(dev_eer), ckpt))
        logger.info("epoch %d loss %.6f dev EER %.4f", epoch, total / len(order), dev_eer)
        if dev_eer < best_eer:
            best, best_eer, best_epoch = model.copy(), dev_eer, epoch
    return TrainResult(best, records, best_epoch)
