"""Adam + cross-entropy training with a staircase learning-rate decay and early stopping."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .. import FAKE, REAL
from ..errors import ConfigError, DataError, TrainingError
from .network import PatchDetector, as_input, predict_proba

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    initial_learning_rate: float = 0.0005
    decay_steps: int = 600
    decay_rate: float = 0.85
    batch_size: int = 56
    bn_decay: float = 0.95
    l2_weight: float = 0.0001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    early_stop_patience_epochs: int = 3
    max_epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        for name in ("initial_learning_rate", "decay_rate", "bn_decay"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if not 0 <= self.l2_weight <= 1:
            raise ConfigError(f"l2_weight must lie in [0, 1], got {self.l2_weight}")
        for name in ("decay_steps", "batch_size", "early_stop_patience_epochs", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


def learning_rate(step: int, cfg: TrainConfig = TrainConfig()) -> float:
    """lr0 * rate ** floor(step / decay_steps), evaluated in decimal and rounded once."""
    k = step // cfg.decay_steps
    value = Decimal(repr(cfg.initial_learning_rate)) * Decimal(repr(cfg.decay_rate)) ** k
    return float(value)


class EarlyStopping:
    """Stop once the monitored score has not improved for ``patience`` epochs in a row."""

    def __init__(self, patience: int = 3):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = None
        self.bad_epochs = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record ``score`` for ``epoch``; True means stop now."""
        if score > self.best:
            self.best, self.best_epoch, self.bad_epochs = score, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class TrainResult:
    model: PatchDetector
    log: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    steps: int = 0


def encode_labels(labels) -> np.ndarray:
    out = []
    for v in labels:
        if isinstance(v, str):
            if v not in (REAL, FAKE):
                raise DataError(f"unknown label {v!r}")
            out.append(1 if v == FAKE else 0)
        else:
            out.append(int(bool(v)))
    return np.asarray(out, dtype=np.int64)


def accuracy(model, x, y) -> float:
    p = predict_proba(model, x)
    return float(np.mean((p > 0.5).astype(np.int64) == y))


def train(train_x, train_y, val_x, val_y, cfg: TrainConfig = TrainConfig(), model: Optional[PatchDetector] = None,
          feature_mode: str = "raw", layers=None) -> TrainResult:
    """Fit a detector; returns the weights from the epoch with the best validation accuracy."""
    ytr, yva = encode_labels(train_y), encode_labels(val_y)
    for name, y in (("training", ytr), ("validation", yva)):
        if len(np.unique(y)) < 2:
            raise DataError(f"{name} set must contain both classes")
    if model is None:
        model = PatchDetector(layers, patch_size=np.shape(train_x)[1], feature_mode=feature_mode, seed=cfg.seed)
    for m in model.modules():
        if isinstance(m, nn.modules.batchnorm._BatchNorm):
            m.momentum = 1.0 - cfg.bn_decay

    x = as_input(train_x, model.patch_size, model.feature_mode)
    yt = torch.from_numpy(ytr)
    n = len(yt)
    weights = [m.weight for m in model.weight_modules()]
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate(0, cfg),
                           betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_epsilon)
    gen = torch.Generator().manual_seed(cfg.seed)
    stopper = EarlyStopping(cfg.early_stop_patience_epochs)
    best_state = copy.deepcopy(model.state_dict())
    history = []
    step = 0
    epoch = 0

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = torch.randperm(n, generator=gen)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            lr = learning_rate(step, cfg)
            for group in opt.param_groups:
                group["lr"] = lr
            logits = model(x[idx])
            loss = F.cross_entropy(logits, yt[idx])
            if cfg.l2_weight:
                loss = loss + cfg.l2_weight * 0.5 * sum((w * w).sum() for w in weights)
            if not torch.isfinite(loss):
                raise TrainingError("non-finite training loss", step)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            step += 1
            loss_sum += float(loss.detach()) * len(idx)
            correct += int((logits.argmax(1) == yt[idx]).sum())
        val_acc = accuracy(model, val_x, yva)
        row = dict(epoch=epoch, step=step, lr=learning_rate(step, cfg), train_loss=loss_sum / n,
                   train_acc=correct / n, val_acc=val_acc)
        history.append(row)
        log.info("epoch %d step %d loss %.4f train_acc %.4f val_acc %.4f", epoch, step, row["train_loss"],
                 row["train_acc"], val_acc)
        stop = stopper.update(epoch, val_acc)
        if stopper.best_epoch == epoch:
            best_state = copy.deepcopy(model.state_dict())
        if stop:
            break

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, stopper.best_epoch, epoch, step)
