"""
Epoch training loop.
"""

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .augment import AugmentParams, build_epoch_training_set
from .dataset import CLASSES, balanced_sample
from .network import Network
from .optim import OptimizerState, TrainConfig, early_stop, lr_schedule, optimizer_step
from .preprocess import SliceSample
from .tensor import NumericError, Tensor, no_grad
from .utils import batched

EPOCH_LOG_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc")


class TrainingError(Exception):
    """Training cannot start or continue."""

    pass


class DivergenceError(TrainingError):
    """Loss became non-finite."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(
            f"Non-finite training loss {loss} at epoch {epoch}, batch {batch}; "
            f"try a smaller learning rate"
        )
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: Optional[float] = None
    val_acc: Optional[float] = None

    def row(self) -> list[str]:
        def fmt(value: Optional[float]) -> str:
            return "" if value is None else repr(float(value))

        return [
            str(self.epoch),
            fmt(self.lr),
            fmt(self.train_loss),
            fmt(self.train_acc),
            fmt(self.val_loss),
            fmt(self.val_acc),
        ]


@dataclass
class Evaluation:
    """Loss, accuracy and per-sample outputs on a fixed sample set."""

    loss: float
    accuracy: float
    predictions: list[int] = field(default_factory=list)
    probabilities: list[float] = field(default_factory=list)  # P(codeleted)


@dataclass
class TrainingData:
    """Preprocessed samples for training."""

    pool: Sequence[SliceSample]
    validation: Sequence[SliceSample] = ()
    per_class: Optional[int] = None  # None: largest balanced draw


@dataclass
class TrainResult:
    network: Network
    logs: list[EpochLog]
    stopped_early: bool
    duration_seconds: float = 0.0

    @property
    def epochs_run(self) -> int:
        return len(self.logs)

    @property
    def final(self) -> Optional[EpochLog]:
        return self.logs[-1] if self.logs else None


def _stack(samples: Sequence[SliceSample]) -> tuple[Tensor, np.ndarray]:
    images = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return Tensor(images), labels


def _decide(probs: np.ndarray) -> np.ndarray:
    """Argmax over two classes with ties going to class 0."""
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


def evaluate_samples(
    net: Network,
    samples: Sequence[SliceSample],
    batch_size: int = 32,
) -> Evaluation:
    """Mean NLL and accuracy of `net` on `samples`, without recording gradients."""
    if not samples:
        raise TrainingError("Cannot evaluate an empty sample set")
    total_loss = 0.0
    predictions: list[int] = []
    probabilities: list[float] = []
    correct = 0
    with no_grad():
        for batch in batched(samples, batch_size):
            images, labels = _stack(batch)
            loss, probs = net.loss(images, labels)
            total_loss += loss.data.item() * len(batch)
            decided = _decide(probs)
            correct += int(np.sum(decided == labels))
            predictions.extend(int(p) for p in decided)
            probabilities.extend(float(p) for p in probs[:, 1])
    return Evaluation(
        loss=total_loss / len(samples),
        accuracy=correct / len(samples),
        predictions=predictions,
        probabilities=probabilities,
    )


def train_loop(
    net: Network,
    data: TrainingData,
    config: TrainConfig,
    augment_params: Optional[AugmentParams] = None,
    workers: int = 1,
    progress_callback: Optional[Callable[[EpochLog, int], None]] = None,
) -> TrainResult:
    """
    Train `net` in place.

    Each epoch draws a fresh balanced subset of the pool, expands it with
    k-fold augmentation, shuffles, and runs minibatch updates (the final
    partial batch included) at the scheduled learning rate. The epoch ends
    with an evaluation on the fixed validation set; training stops when
    the validation loss has plateaued or after max_epochs.

    Args:
        net: Network to train
        data: Training pool and validation samples
        config: Hyperparameters
        augment_params: Augmentation magnitudes (defaults to AugmentParams())
        workers: Threads for augmentation
        progress_callback: Optional callback(epoch_log, max_epochs)

    Returns:
        TrainResult with one EpochLog per epoch run

    Raises:
        TrainingError: Empty pool or a class missing from it
        DivergenceError: Loss became non-finite
    """
    config.validate()
    if not data.pool:
        raise TrainingError("Training pool is empty")
    counts = [sum(1 for s in data.pool if s.label == c) for c in CLASSES]
    if min(counts) == 0:
        raise TrainingError(
            f"Training pool needs both classes, has {counts[0]} nondeleted and {counts[1]} codeleted"
        )
    per_class = data.per_class or min(counts)

    start = time.monotonic()
    state = OptimizerState()
    logs: list[EpochLog] = []
    val_losses: list[float] = []
    stopped_early = False

    for epoch in range(config.max_epochs):
        lr = lr_schedule(epoch, config)
        chosen = balanced_sample(data.pool, per_class, epoch, config.master_seed)
        epoch_set = build_epoch_training_set(
            chosen,
            config.augmentation_fold,
            epoch,
            config.master_seed,
            augment_params,
            workers,
        )

        total_loss = 0.0
        correct = 0
        for b, batch in enumerate(batched(epoch_set, config.batch_size)):
            images, labels = _stack(batch)
            net.zero_grad()
            try:
                loss, probs = net.loss(images, labels)
            except NumericError:
                raise DivergenceError(epoch, b, float("nan"))
            value = loss.data.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, b, value)
            loss.backward()
            optimizer_step(config.optimizer, state, net.parameters, lr=lr)
            total_loss += value * len(batch)
            correct += int(np.sum(_decide(probs) == labels))

        log = EpochLog(
            epoch=epoch,
            lr=lr,
            train_loss=total_loss / len(epoch_set),
            train_acc=correct / len(epoch_set),
        )
        if data.validation:
            try:
                evaluation = evaluate_samples(net, data.validation, config.batch_size)
            except NumericError:
                raise DivergenceError(epoch, -1, float("nan"))
            if not math.isfinite(evaluation.loss):
                raise DivergenceError(epoch, -1, evaluation.loss)
            log.val_loss = evaluation.loss
            log.val_acc = evaluation.accuracy
            val_losses.append(evaluation.loss)
        logs.append(log)

        if progress_callback:
            progress_callback(log, config.max_epochs)

        if val_losses and early_stop(
            val_losses, config.early_stop_delta, config.early_stop_patience
        ):
            stopped_early = True
            break

    return TrainResult(
        network=net,
        logs=logs,
        stopped_early=stopped_early,
        duration_seconds=time.monotonic() - start,
    )


def write_epoch_log(logs: Sequence[EpochLog], path: Union[str, Path]) -> Path:
    """Write one CSV row per epoch; floats use their shortest exact repr."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(EPOCH_LOG_COLUMNS)
        for log in logs:
            writer.writerow(log.row())
    return path


def read_epoch_log(path: Union[str, Path]) -> list[EpochLog]:
    """Parse a log written by write_epoch_log."""

    def opt(value: str) -> Optional[float]:
        return float(value) if value else None

    logs = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            logs.append(
                EpochLog(
                    epoch=int(row["epoch"]),
                    lr=float(row["lr"]),
                    train_loss=float(row["train_loss"]),
                    train_acc=float(row["train_acc"]),
                    val_loss=opt(row["val_loss"]),
                    val_acc=opt(row["val_acc"]),
                )
            )
    return logs
