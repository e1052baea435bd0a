"""Confidence scores over logits. Higher always means "more in-distribution".

The energy variant returns the free energy T*logsumexp(logits/T) rather than
its negation so that all three kinds share one comparison direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import softmax

VALID_KINDS = ("msp", "energy", "maxlogit")


@dataclass(frozen=True)
class ScoreKind:
    """One of msp | energy | maxlogit; temperature applies to energy only."""

    kind: str = "msp"
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}; valid: {VALID_KINDS}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @classmethod
    def parse(cls, name: str, temperature: float = 1.0) -> "ScoreKind":
        return cls(kind=name.strip().lower(), temperature=temperature)


def score(kind: ScoreKind, logits: np.ndarray) -> float:
    """Scalar confidence for one logit vector."""
    z = np.asarray(logits, dtype=np.float64)
    if kind.kind == "msp":
        return float(np.max(softmax(z)))
    if kind.kind == "maxlogit":
        return float(np.max(z))
    t = kind.temperature
    zt = z / t
    m = float(np.max(zt))
    return t * (m + math.log(float(np.sum(np.exp(zt - m)))))


def predict(logits: np.ndarray) -> int:
    """Argmax class, ties broken by the lowest index."""
    return int(np.argmax(np.asarray(logits)))
