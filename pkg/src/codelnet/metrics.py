"""
Confusion counts and the sensitivity / specificity / accuracy metrics.

Codeleted (class 1) is the positive class.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence


class UndefinedMetricError(Exception):
    """Metric denominator is zero."""

    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def swap_positive(self) -> "ConfusionMatrix":
        """The same counts with class 0 treated as positive."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)


@dataclass(frozen=True)
class Metrics:
    sensitivity: float
    specificity: float
    accuracy: float


def confusion(predictions: Sequence[int], truths: Sequence[int]) -> ConfusionMatrix:
    """
    Cross-tabulate predicted against true labels.

    Raises:
        ValueError: Length mismatch or a label outside {0, 1}
    """
    if len(predictions) != len(truths):
        raise ValueError(
            f"{len(predictions)} predictions but {len(truths)} true labels"
        )
    counts = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for i, (pred, truth) in enumerate(zip(predictions, truths)):
        if pred not in (0, 1) or truth not in (0, 1):
            raise ValueError(f"Labels must be 0 or 1; position {i} has ({pred}, {truth})")
        if pred == 1:
            counts["tp" if truth == 1 else "fp"] += 1
        else:
            counts["fn" if truth == 1 else "tn"] += 1
    return ConfusionMatrix(**counts)


def _ratio(numerator: int, denominator: int, name: str) -> Fraction:
    if denominator == 0:
        raise UndefinedMetricError(f"{name} is undefined: its denominator is zero")
    return Fraction(numerator, denominator)


def sensitivity(cm: ConfusionMatrix) -> Fraction:
    """TP / (TP + FN)"""
    return _ratio(cm.tp, cm.tp + cm.fn, "sensitivity")


def specificity(cm: ConfusionMatrix) -> Fraction:
    """TN / (TN + FP)"""
    return _ratio(cm.tn, cm.tn + cm.fp, "specificity")


def accuracy(cm: ConfusionMatrix) -> Fraction:
    """(TP + TN) / total"""
    return _ratio(cm.tp + cm.tn, cm.total, "accuracy")


def evaluate_metrics(cm: ConfusionMatrix) -> Metrics:
    """
    All three metrics, each evaluated exactly and then rounded to float.

    Raises:
        UndefinedMetricError: If any denominator is zero
    """
    return Metrics(
        sensitivity=float(sensitivity(cm)),
        specificity=float(specificity(cm)),
        accuracy=float(accuracy(cm)),
    )
