"""Dynamic ID memory bank: exactly one labeled feature vector per class.

Incoming pseudo-ID samples overwrite the slot of their predicted class.
A prototype bank (per-class training means) is immutable: replace becomes
a no-op, keeping the bank constant for the whole run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import LabeledSet


class MissingClassError(ValueError):
    """Training data lacks at least one sample of some class."""


@dataclass
class MemoryBank:
    """Row c of ``features`` is the stored sample for class c."""

    features: np.ndarray
    prototype: bool = False

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("bank features must be a (C, d) matrix")

    @property
    def num_classes(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return np.arange(self.num_classes, dtype=np.int64)


def _class_indices(training_set: LabeledSet) -> list[np.ndarray]:
    out = []
    for c in range(training_set.num_classes):
        idx = np.flatnonzero(training_set.labels == c)
        if idx.size == 0:
            raise MissingClassError(f"training data has no sample of class {c}")
        out.append(idx)
    return out


def init_random(training_set: LabeledSet, seed: int) -> MemoryBank:
    """One uniformly random training sample per class; seeded."""
    rng = np.random.default_rng(seed)
    rows = [training_set.features[rng.choice(idx)] for idx in _class_indices(training_set)]
    return MemoryBank(np.stack(rows), prototype=False)


def init_prototype(training_set: LabeledSet) -> MemoryBank:
    """Per-class mean features; bank is flagged immutable."""
    rows = [training_set.features[idx].mean(axis=0) for idx in _class_indices(training_set)]
    return MemoryBank(np.stack(rows), prototype=True)


def replace(bank: MemoryBank, x_hat: np.ndarray, y_hat: int) -> MemoryBank:
    """Overwrite the slot for class ``y_hat`` in place (no-op for prototypes)."""
    if not 0 <= y_hat < bank.num_classes:
        raise ValueError(f"class {y_hat} out of range for {bank.num_classes} slots")
    if bank.prototype:
        return bank
    x = np.asarray(x_hat, dtype=np.float64)
    if x.shape != (bank.dim,):
        raise ValueError(f"expected feature of shape ({bank.dim},), got {x.shape}")
    bank.features[y_hat] = x
    return bank


def id_loss(model: nn.MlpModel, bank: MemoryBank, reduction: str = "sum") -> float:
    """Label cross-entropy accumulated over every bank entry.

    The default follows the per-entry accumulation of the online update
    loop (a sum); ``reduction="mean"`` rescales by 1/C.
    """
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    total = sum(
        nn.loss_ce_label(nn.forward_logits(model, bank.features[c]), c)
        for c in range(bank.num_classes)
    )
    return total / bank.num_classes if reduction == "mean" else total
