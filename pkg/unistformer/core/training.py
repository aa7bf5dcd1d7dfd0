"""Cross-entropy, momentum SGD and the deterministic training/evaluation loops."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.handlers import FileHelper
from .block import NO_DECAY_SUFFIXES
from .exceptions import ConfigError, GraphError, LabelError, NumericError, ShapeError, TrainingDivergedError
from .model import UniSTFormer, argmax_rows
from .tensor import Function, Tensor

logger = logging.getLogger(__name__)

CSV_HEADER = "epoch,loss,top1,seconds\n"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    weight_decay: float = 0.0005
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    milestones: Tuple[int, ...] = (60, 80)
    gamma: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        # lr == 0 is allowed: it freezes the learnable tensors.
        if not np.isfinite(self.lr) or self.lr < 0:
            raise ConfigError(f"lr must be finite and non-negative, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        payload = dataclasses.asdict(self)
        payload["milestones"] = list(self.milestones)
        return payload

    @classmethod
    def from_dict(cls, payload: dict, base: Optional["TrainConfig"] = None) -> "TrainConfig":
        if not isinstance(payload, dict):
            raise ConfigError(f"train config must be an object, got {type(payload).__name__}")
        unknown = sorted(set(payload) - {f.name for f in dataclasses.fields(cls)})
        if unknown:
            raise ConfigError(f"unknown train config keys: {', '.join(unknown)}")
        try:
            return dataclasses.replace(base or cls(), **payload)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train config: {exc}") from exc


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    top1: float
    seconds: float

    def to_csv_row(self) -> str:
        return f"{self.epoch},{self.loss!r},{self.top1!r},{self.seconds!r}\n"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ------------------------------------------------------------------------ loss


class CrossEntropy(Function):
    def forward(self, logits, labels=None):
        shifted = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        n = logits.shape[0]
        self.probs = np.exp(log_probs)
        self.dtype = logits.dtype
        self.labels = labels
        return np.asarray(-log_probs[np.arange(n), labels].mean(), dtype=logits.dtype)

    def backward(self, grad):
        n = self.probs.shape[0]
        delta = self.probs.copy()
        delta[np.arange(n), self.labels] -= 1.0
        return ((grad * delta / n).astype(self.dtype),)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean of -log softmax(logits)[label] over the batch, via log-sum-exp."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy needs logits [N, K] and labels [N], got {logits.shape} and {labels.shape}")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    return CrossEntropy.apply(logits, labels=labels)


# ------------------------------------------------------------------- optimizer


def decays(name: str) -> bool:
    return not name.endswith(NO_DECAY_SUFFIXES)


def sgd_step(
    named_params: Iterable[Tuple[str, Tensor]],
    state: Dict[str, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """v <- momentum * v + grad + wd * param; param <- param - lr * v.

    ``state`` holds the velocity of each parameter by name and is updated in place.
    """
    for name, param in named_params:
        if param.grad is None:
            raise GraphError(f"no gradient for {name}; run backward before stepping")
        step = param.grad
        if weight_decay and decays(name):
            step = step + weight_decay * param.data
        velocity = state.get(name)
        velocity = step.copy() if velocity is None else momentum * velocity + step
        state[name] = velocity.astype(param.dtype, copy=False)
        param.data -= param.dtype.type(lr) * state[name]


class SGD:
    """Momentum SGD with L2 weight decay folded into the velocity."""

    def __init__(self, named_params: Iterable[Tuple[str, Tensor]], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.named_params = list(named_params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for _, param in self.named_params:
            param.zero_grad()

    def step(self) -> None:
        sgd_step(self.named_params, self.velocity, self.lr, self.momentum, self.weight_decay)


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Step decay: lr * gamma^(milestones reached); ``epoch`` counts from 0."""
    return config.lr * config.gamma ** sum(1 for m in config.milestones if epoch >= m)


def _batches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    """Consecutive slices of ``order``; a trailing single sample joins the previous batch."""
    batches = [order[start:start + batch_size] for start in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2:] = [np.concatenate(batches[-2:])]
    return batches


# ----------------------------------------------------------------------- loops


@dataclass
class TrainResult:
    metrics: List[EpochMetrics]
    model: UniSTFormer


def _start_csv(path: Optional[Union[str, Path]]) -> Optional[Path]:
    if path is None:
        return None
    return FileHelper.write_text(path, CSV_HEADER)


def train_loop(
    model: UniSTFormer,
    x: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    metrics_csv: Optional[Union[str, Path]] = None,
    timing: bool = True,
    on_epoch: Optional[Callable[[EpochMetrics], None]] = None,
) -> TrainResult:
    """Train ``model`` in place; every random draw derives from ``config.seed``.

    Accuracy and loss are accumulated over the epoch's training-mode batches.
    """
    if len(x) == 0:
        raise ShapeError("cannot train on an empty dataset")
    if len(x) != len(labels):
        raise ShapeError(f"{len(x)} samples but {len(labels)} labels")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= model.config.num_classes:
        raise LabelError(f"labels must lie in [0, {model.config.num_classes})")

    dtype = model.params.lift_weight.dtype
    x = np.asarray(x, dtype=dtype)
    single_value = x.shape[2] * x.shape[3] == 1
    if single_value and len(x) == 1:
        raise ShapeError("batch norm needs more than one value per channel; got one sample of one frame and joint")
    shuffle_rng = np.random.default_rng([config.seed, 2])
    model.rng = np.random.default_rng([config.seed, 1])
    optimizer = SGD(model.named_parameters(), config.lr, config.momentum, config.weight_decay)
    batch_size = min(config.batch_size, len(x))
    if single_value:
        # Training-mode BN needs two values per channel in every batch.
        batch_size = max(batch_size, 2)
    csv_path = _start_csv(metrics_csv)
    history: List[EpochMetrics] = []
    model.train()

    for epoch in range(config.epochs):
        started = time.perf_counter()
        optimizer.lr = lr_at(epoch, config)
        order = shuffle_rng.permutation(len(x))
        total_loss, correct = 0.0, 0
        for index in _batches(order, batch_size):
            try:
                logits = model(Tensor(x[index], dtype=dtype))
                loss = cross_entropy(logits, labels[index])
            except NumericError as exc:
                raise TrainingDivergedError(epoch + 1, str(exc)) from exc
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch + 1, f"loss became {value}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += value * len(index)
            correct += int((argmax_rows(logits.data) == labels[index]).sum())

        seconds = time.perf_counter() - started if timing else 0.0
        metrics = EpochMetrics(epoch + 1, total_loss / len(x), correct / len(x), seconds)
        history.append(metrics)
        logger.info(
            "epoch %d/%d lr=%.4g loss=%.4f top1=%.4f (%.2fs)",
            metrics.epoch, config.epochs, optimizer.lr, metrics.loss, metrics.top1, metrics.seconds,
        )
        if csv_path is not None:
            FileHelper.append_text(csv_path, metrics.to_csv_row())
        if on_epoch is not None:
            on_epoch(metrics)

    model.eval()
    return TrainResult(history, model)


def evaluate(model: UniSTFormer, x: np.ndarray, labels: np.ndarray, batch_size: int = 128) -> EpochMetrics:
    """Eval-mode mean loss and top-1 accuracy; parameters, buffers and mode are left as found."""
    if len(x) == 0:
        raise ShapeError("cannot evaluate an empty dataset")
    labels = np.asarray(labels, dtype=np.int64)
    dtype = model.params.lift_weight.dtype
    previous = model.mode
    model.eval()
    started = time.perf_counter()
    total_loss, correct = 0.0, 0
    try:
        for start in range(0, len(x), batch_size):
            batch = Tensor(np.asarray(x[start:start + batch_size], dtype=dtype))
            logits = model(batch)
            target = labels[start:start + batch_size]
            total_loss += cross_entropy(logits, target).item() * len(target)
            correct += int((argmax_rows(logits.data) == target).sum())
    finally:
        model.mode = previous
    return EpochMetrics(0, total_loss / len(x), correct / len(x), time.perf_counter() - started)
